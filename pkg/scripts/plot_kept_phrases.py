# coding: utf-8
r"""
Inputs
-------
results_path : str
    ``results/tables/results.tsv``: results table written by ``scripts/table_results.py``
target : str
    ``results/plots/kept_phrases.png``: path of the plot
logfile : str
    ``results/plots/kept_phrases.log``: path to logfile

Outputs
---------
Plot of the mean number of kept phrases against the number of distractors N, one line per tol
and one panel per beta.

Description
-------------
Shows how slowly the filtered biasing list grows with the size of the full biasing list.
"""
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from biasfilter import schema  # noqa: E402
from biasfilter.config import config  # noqa: E402
from biasfilter.tools import data_processing as dp  # noqa: E402


def draw_kept_phrases(results):
    learned = results.loc[results["bias_mode"] == "learned"]
    betas = sorted(learned["beta"].unique())
    fig, axes = plt.subplots(1, len(betas), figsize=(5 * len(betas), 4), sharey=True, squeeze=False)

    for ax, beta in zip(axes[0], betas):
        df = learned.loc[learned["beta"] == beta]
        for tol, group in df.groupby("tol"):
            group = group.sort_values("n_distractors")
            ax.plot(group["n_distractors"], group["mean_kept"], marker="o", label=f"tol={tol:g}")
        ax.set_title(f"beta={beta:g}")
        ax.set_xlabel("Distractors N")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("Mean kept phrases")
    axes[0][-1].legend()
    fig.tight_layout()
    return fig


if __name__ == "__main__":
    results_path = sys.argv[1]
    target = sys.argv[2]
    logfile = sys.argv[3]

    logger = config.add_snake_logger("plot_kept_phrases")

    results = dp.load_df(results_path, schema.SCHEMA_RESULTS)
    if not (results["bias_mode"] == "learned").any():
        logger.warning(f"No learned settings in {results_path}, nothing to plot.")
        sys.exit(0)

    fig = draw_kept_phrases(results)
    fig.savefig(target, bbox_inches="tight")
    logger.info(f"Plot has been saved to: {target}.")
