# coding: utf-8
r"""
Inputs
------
sweep_dirs : str
    ``results/sweep/beta_{beta}``: one or more sweep directories written by ``scripts/sweep.py``
out_path : str
    ``results/tables/results.tsv``: target path for the results table
logfile : str
    ``results/tables/results.log``: path to logfile

Outputs
-------
.tsv
    Table with one row per setting: WER, U-WER, B-WER, mean kept phrases, mean recall of the
    ground-truth phrases and mean bonus.

Description
-----------
Settings of several sweeps (e.g. one per beta) are concatenated. The unbiased and fixed-bonus
baselines are identical in every sweep and appear only once.
"""
import os
import sys

import pandas as pd

from biasfilter import schema
from biasfilter.config import config
from biasfilter.tools import data_processing as dp


def round_rates(df, decimals):
    df = df.copy()
    for col in ["wer", "u_wer", "b_wer", "mean_recall", "mean_bonus"]:
        df[col] = pd.to_numeric(df[col]).round(decimals)
    df["mean_kept"] = df["mean_kept"].round(2)
    return df


if __name__ == "__main__":
    *sweep_dirs, out_path, logfile = sys.argv[1:]

    logger = config.add_snake_logger("table_results")

    tables = [dp.collect_results(sweep_dir) for sweep_dir in sweep_dirs]
    results = pd.concat(tables)
    results = results.loc[~results.index.duplicated(keep="first")].sort_index()

    results = round_rates(results, config.settings.evaluate.decimals)

    out_dir = os.path.dirname(out_path)
    if out_dir and not os.path.exists(out_dir):
        os.makedirs(out_dir)

    dp.save_df(results, out_path, schema.SCHEMA_RESULTS)
    logger.info(f"Joined {len(results)} settings of {len(sweep_dirs)} sweep(s).")
