# coding: utf-8
r"""
Inputs
-------
data_dir : str
    ``results/data``: output directory of ``biasfilter synth``
checkpoint : str
    ``results/models/beta_{beta}.json``: trained biasing decoder
beta : str
    Weight of the discriminative loss the checkpoint was trained with (only used as label)
out_dir : str
    ``results/sweep/beta_{beta}``: target directory, one subdirectory per setting
logfile : str
    ``results/sweep/beta_{beta}.log``: path to logfile

Outputs
---------
One directory per setting containing the decoded hypotheses (decoded.jsonl), the decode
diagnostics (summary.tsv), the evaluation report (report.json) and the setting (setting.json).

Description
-------------
Decodes and evaluates the test corpus for every distractor count N and every tol of the
'experiment' section in settings.yaml. For every N, the unbiased baseline and the fixed-bonus
baseline (bonus 'decode.fixed_bonus') are run as well, and the checkpoint filters the list for a
constant bonus on the kept phrases ('experiment.filtered_tol', 'experiment.filtered_bonus').
The table of all settings is created with ``scripts/table_results.py``.
"""
import os
import sys

from biasfilter import cli
from biasfilter.config import config
from biasfilter.tools import data_processing as dp


def run(argv):
    code = cli.main(argv)
    if code != 0:
        raise RuntimeError(f"'biasfilter {' '.join(argv)}' exited with code {code}.")


def decode_and_evaluate(name, setting, decode_flags):
    run_dir = os.path.join(out_dir, name)
    os.makedirs(run_dir, exist_ok=True)
    phrases = os.path.join(data_dir, f"phrases_{setting['n_distractors']}.txt")
    decoded = os.path.join(run_dir, "decoded.jsonl")

    # fmt: off
    run(
        [
            "decode",
            "--corpus", test_corpus,
            "--vocab", vocab,
            "--rare-words", rare_words,
            "--phrases", phrases,
            "--ground-truth", ground_truth,
            "--out", decoded,
            "--summary", os.path.join(run_dir, "summary.tsv"),
            *decode_flags,
        ]
    )
    run(
        [
            "evaluate",
            "--ref", test_corpus,
            "--hyp", decoded,
            "--phrases", phrases,
            "--out", os.path.join(run_dir, "report.json"),
        ]
    )
    # fmt: on
    dp.write_report({"setting": name, **setting}, os.path.join(run_dir, dp.SETTING_FILE))
    logger.info(f"Finished setting '{name}'.")


if __name__ == "__main__":
    data_dir = sys.argv[1]
    checkpoint = sys.argv[2]
    beta = float(sys.argv[3])
    out_dir = sys.argv[4]
    logfile = sys.argv[5]

    logger = config.add_snake_logger("sweep")

    test_corpus = os.path.join(data_dir, "test.jsonl")
    vocab = os.path.join(data_dir, config.settings.general.vocab_file)
    rare_words = os.path.join(data_dir, config.settings.general.rare_words_file)
    ground_truth = os.path.join(data_dir, "ground_truth.txt")

    experiment = config.settings.experiment
    fixed_bonus = config.settings.decode.fixed_bonus
    filtered_tol, filtered_bonus = experiment.filtered_tol, experiment.filtered_bonus

    try:
        for n in experiment.distractor_counts:
            decode_and_evaluate(
                f"none_N{n}",
                {"bias_mode": "none", "n_distractors": n, "tol": None, "beta": None},
                ["--no-bias"],
            )
            decode_and_evaluate(
                f"fixed_N{n}",
                {"bias_mode": "fixed", "n_distractors": n, "tol": None, "beta": None},
                ["--fixed-bonus", str(fixed_bonus)],
            )
            decode_and_evaluate(
                f"filtered_N{n}_tol{filtered_tol}_beta{beta}",
                {"bias_mode": "filtered", "n_distractors": n, "tol": filtered_tol, "beta": beta},
                ["--checkpoint", checkpoint, "--tol", str(filtered_tol)]
                + ["--fixed-bonus", str(filtered_bonus)],
            )
            for tol in experiment.tols:
                decode_and_evaluate(
                    f"learned_N{n}_tol{tol}_beta{beta}",
                    {"bias_mode": "learned", "n_distractors": n, "tol": tol, "beta": beta},
                    ["--checkpoint", checkpoint, "--tol", str(tol)],
                )
    except Exception:
        logger.exception("Sweep failed.")
        raise
