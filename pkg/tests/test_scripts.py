import numpy as np
import pandas as pd

from biasfilter import schema
from biasfilter.tools.data_processing import format_header
from scripts.plot_kept_phrases import draw_kept_phrases
from scripts.table_results import round_rates


def results_table():
    rows = []
    for beta in (0.5, 0.9):
        for tol in (0.0, 2.0):
            for n in (100, 1000):
                rows.append(
                    {
                        "setting": f"learned_N{n}_tol{tol}_beta{beta}",
                        "bias_mode": "learned",
                        "n_distractors": n,
                        "tol": tol,
                        "beta": beta,
                        "wer": 0.123456,
                        "mean_kept": 1.0 + tol + n / 1000,
                    }
                )
    rows.append({"setting": "none_N100", "bias_mode": "none", "n_distractors": 100, "wer": 0.2})
    df = pd.DataFrame(rows).set_index("setting")
    return format_header(df, schema.SCHEMA_RESULTS.header, schema.SCHEMA_RESULTS.index_name)


def test_round_rates():
    rounded = round_rates(results_table(), 3)
    assert rounded.loc["none_N100", "wer"] == 0.2
    assert rounded.loc["learned_N100_tol0.0_beta0.5", "wer"] == 0.123
    assert np.isnan(rounded.loc["none_N100", "b_wer"])


def test_draw_kept_phrases():
    fig = draw_kept_phrases(results_table())
    axes = fig.get_axes()
    assert [ax.get_title() for ax in axes] == ["beta=0.5", "beta=0.9"]
    for ax in axes:
        assert len(ax.get_lines()) == 2
        assert list(ax.get_lines()[1].get_ydata()) == [3.1, 4.0]
