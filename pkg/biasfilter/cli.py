# coding: utf-8
r"""
Command line interface of biasfilter.

Subcommands
-----------
synth
    Generates the synthetic corpus: train/test corpus files, features, vocabulary, rare word
    list and the biasing list files for every distractor count.
train
    Trains the biasing decoder and saves the checkpoint and the loss trace.
score
    Scores the biasing list of every utterance (empty phrase included) and writes a table.
filter
    Writes the phrases kept by filtering as phrase list file.
decode
    Decodes every utterance with shallow-fusion biasing (learned bonus, filtering with a fixed
    bonus, fixed bonus on the whole list or none).
evaluate
    Computes WER, U-WER and B-WER of decoded hypotheses.

Settings come from biasfilter/config/settings.yaml, a flat `key = value` file passed with
--config and the command line flags, in this order. Environment variables are not read.
"""
import argparse
import json
import pathlib
import sys

import numpy as np
import pandas as pd

from biasfilter import schema
from biasfilter.config import config
from biasfilter.errors import BiasfilterError, ConfigError, CorpusError
from biasfilter.model import trainer
from biasfilter.model.bias_scorer import DecoderParams, score_batch
from biasfilter.tools import data_processing as dp
from biasfilter.tools import evaluate, fusion, synth
from biasfilter.tools.core_types import Phrase
from biasfilter.tools.timing import Timer

logger = config.get_logger("cli")

SUBCOMMANDS = ("synth", "train", "score", "filter", "decode", "evaluate")


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat 'key = value' config file (or yaml)")
    common.add_argument("--logfile", help="Append log records to this file")
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="biasfilter", description="Neural filtering and shallow-fusion contextual biasing."
    )
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    p = subparsers.add_parser("synth", parents=[common], help="Generate a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--rho", type=float)

    p = subparsers.add_parser("train", parents=[common], help="Train the biasing decoder")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="Checkpoint file")
    p.add_argument("--trace", help="Loss trace table")
    p.add_argument("--beta", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)

    for name, text in (("score", "Score biasing lists"), ("filter", "Filter biasing lists")):
        p = subparsers.add_parser(name, parents=[common], help=text)
        p.add_argument("--corpus", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--phrases", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--tol", type=float)

    p = subparsers.add_parser("decode", parents=[common], help="Decode with biasing")
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--rare-words", required=True, help="Rare word list of the toy recognizer")
    p.add_argument("--phrases")
    p.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="Per-utterance diagnostics table")
    p.add_argument("--ground-truth", help="Phrase list file of ground-truth phrases")
    p.add_argument("--dump-tables", help="Table of the partial match tables of kept phrases")
    p.add_argument("--tol", type=float)
    p.add_argument("--beam", type=int)
    p.add_argument("--expansions", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument(
        "--fixed-bonus",
        type=float,
        help="Constant bonus; filters with --checkpoint first, else keeps the whole list",
    )
    mode.add_argument("--no-bias", action="store_true", help="Decode without biasing list")

    p = subparsers.add_parser("evaluate", parents=[common], help="Compute WER, U-WER, B-WER")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--phrases", required=True)
    p.add_argument("--out", required=True, help="report.json")
    p.add_argument("--per-utt", help="Per-utterance table")

    return parser


INPUT_ARGS = (
    "config",
    "corpus",
    "vocab",
    "phrases",
    "checkpoint",
    "rare_words",
    "ground_truth",
    "ref",
    "hyp",
)


def check_paths(parser, args):
    """All input files have to exist before any work starts."""
    for name in INPUT_ARGS:
        value = getattr(args, name, None)
        if value is not None and not pathlib.Path(value).is_file():
            parser.error(f"--{name.replace('_', '-')}: file '{value}' does not exist.")


def _overrides(args, keys):
    return {key: getattr(args, key, None) for key in keys}


def _load_params(path, vocab):
    return DecoderParams.load(path, vocab_entries=vocab.entries)


def _biasing_lists(path, utterances, vocab):
    common, sections = dp.read_phrase_list(path)
    return {utt.id: dp.phrases_for(utt.id, common, sections, vocab) for utt in utterances}


def run_synth(args):
    run_config = config.RunConfig.load(
        "synth", args.config, _overrides(args, ["seed", "n_train", "n_test", "noise", "rho"])
    )
    corpus = synth.gen_corpus(synth.SynthConfig(**run_config))

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feature_dir = out_dir / config.settings.general.feature_dir
    dp.write_corpus(corpus.train, out_dir / "train.jsonl", feature_dir)
    dp.write_corpus(corpus.test, out_dir / "test.jsonl", feature_dir)
    dp.write_vocab(corpus.vocab, out_dir / config.settings.general.vocab_file)
    dp.write_words(corpus.rare_words, out_dir / config.settings.general.rare_words_file)

    test_ids = [utt.id for utt in corpus.test]
    dp.write_phrase_list(
        out_dir / "ground_truth.txt",
        sections={utt_id: corpus.ground_truth[utt_id] for utt_id in test_ids},
    )
    for n in corpus.config.distractor_counts:
        dp.write_phrase_list(
            out_dir / f"phrases_{n}.txt",
            sections={utt_id: corpus.biasing_list(utt_id, n) for utt_id in test_ids},
        )
    logger.info(f"Synthetic corpus written to {out_dir}.")


def run_train(args):
    run_config = config.RunConfig.load(
        "train",
        args.config,
        _overrides(args, ["beta", "epochs", "learning_rate", "batch_size", "seed"]),
    )
    vocab = dp.read_vocab(args.vocab)
    corpus = dp.read_corpus(args.corpus, vocab)
    if not corpus:
        raise CorpusError(f"Corpus {args.corpus} is empty.")

    train_config = trainer.TrainConfig(**run_config)
    params = trainer.init_params(vocab, corpus[0].features.shape[1])
    params, trace = trainer.train(corpus, train_config, vocab, params)

    params.save(args.out, vocab_entries=vocab.entries)
    if args.trace:
        dp.save_df(trace, args.trace, schema.SCHEMA_TRACE)


def score_utterance(params, utt, phrases, vocab, tol):
    r"""
    Scores the empty phrase and the biasing list of one utterance and filters the list.

    Returns
    -------
    scored : list of ScoredPhrase
        Empty phrase first
    filter_result : FilterResult
    """
    scored = score_batch(params, utt.features, [Phrase.empty(vocab)] + list(phrases))
    filter_result = fusion.filter_phrases(scored[1:], scored[0].per_token, tol)
    return scored, filter_result


def run_score(args):
    run_config = config.RunConfig.load(args.subcommand, args.config, _overrides(args, ["tol"]))
    vocab = dp.read_vocab(args.vocab)
    params = _load_params(args.checkpoint, vocab)
    utterances = dp.read_corpus(args.corpus, vocab)
    biasing_lists = _biasing_lists(args.phrases, utterances, vocab)

    tables = []
    kept = {}
    with Timer(text=f"Scored biasing lists of {len(utterances)} utterances.", logger=logger.info):
        for utt in utterances:
            scored, filter_result = score_utterance(
                params, utt, biasing_lists[utt.id], vocab, run_config.tol
            )
            tables.append(dp.scores_to_df(utt.id, scored, run_config.tol, filter_result))
            kept[utt.id] = [scored[i].phrase.words for i in filter_result.kept]

    if args.subcommand == "score":
        dp.save_df(pd.concat(tables), args.out, schema.SCHEMA_SCORES)
    else:
        dp.write_phrase_list(args.out, sections=kept)
    mean_kept = np.mean([len(v) for v in kept.values()]) if kept else 0.0
    logger.info(f"Mean number of kept phrases at tol={run_config.tol}: {mean_kept:.2f}.")


def run_decode(args):
    overrides = _overrides(args, ["tol", "beam", "expansions"])
    if args.no_bias:
        overrides["bias_mode"] = "none"
    elif args.fixed_bonus is not None:
        # with a checkpoint the list is filtered first
        overrides["bias_mode"] = "filtered" if args.checkpoint else "fixed"
        overrides["fixed_bonus"] = args.fixed_bonus
    run_config = config.RunConfig.load("decode", args.config, overrides)
    if run_config.bias_mode not in fusion.BIAS_MODES:
        raise ConfigError(f"bias_mode has to be one of {fusion.BIAS_MODES}.")
    if run_config.bias_mode != "none" and args.phrases is None:
        raise ConfigError("decode needs --phrases unless --no-bias is given.")
    if run_config.bias_mode in ("learned", "filtered") and args.checkpoint is None:
        raise ConfigError(
            f"decode needs --checkpoint for bias_mode '{run_config.bias_mode}'; "
            "pass --fixed-bonus or --no-bias to decode without the biasing decoder."
        )

    vocab = dp.read_vocab(args.vocab)
    utterances = dp.read_corpus(args.corpus, vocab)
    rare_words = dp.read_words(args.rare_words)
    params = None
    if run_config.bias_mode in ("learned", "filtered"):
        params = _load_params(args.checkpoint, vocab)
    biasing_lists = {}
    if run_config.bias_mode != "none":
        biasing_lists = _biasing_lists(args.phrases, utterances, vocab)
    ground_truth = {}
    if args.ground_truth:
        ground_truth = _biasing_lists(args.ground_truth, utterances, vocab)

    results = []
    with Timer(text=f"Decoded {len(utterances)} utterances.", logger=logger.info):
        for utt in utterances:
            base = synth.toy_base_scorer(run_config, utt, vocab, rare_words)
            results.append(
                fusion.decode_utterance(
                    utt,
                    biasing_lists.get(utt.id, []),
                    params,
                    base,
                    run_config.tol,
                    run_config.beam,
                    vocab,
                    expansions=run_config.expansions,
                    bias_mode=run_config.bias_mode,
                    fixed_bonus=run_config.fixed_bonus,
                    ground_truth=ground_truth.get(utt.id),
                    max_len_per_frame=run_config.max_len_per_frame,
                )
            )

    dp.write_jsonl([result.to_record() for result in results], args.out)
    summary = decode_summary(results, ground_truth)
    if args.summary:
        dp.save_df(summary, args.summary, schema.SCHEMA_DECODE)
    if args.dump_tables:
        tables = pd.concat([dp.match_tables_to_df(result) for result in results])
        dp.save_df(tables, args.dump_tables, schema.SCHEMA_TABLES)
    logger.info(
        f"Mean kept phrases {summary['n_kept'].mean():.2f}, "
        f"mean recall {summary['recall'].mean():.3f}, mean bonus {summary['bonus'].mean():.3f}."
    )


def decode_summary(results, ground_truth=None):
    """Per-utterance diagnostics of a decode run."""
    ground_truth = ground_truth or {}
    rows = [
        {
            "id": result.id,
            "n_phrases": result.n_phrases,
            "n_kept": result.n_kept,
            "n_ground_truth": len(ground_truth.get(result.id, [])),
            "recall": result.recall,
            "bonus": result.bonus,
            "s0": result.s0,
            "base_score": result.base_score,
            "bias_score": result.bias_score,
            "complete": int(result.complete),
        }
        for result in results
    ]
    columns = [schema.SCHEMA_DECODE.index_name] + schema.SCHEMA_DECODE.header
    return pd.DataFrame(rows, columns=columns).set_index(schema.SCHEMA_DECODE.index_name)


def run_evaluate(args):
    run_config = config.RunConfig.load("evaluate", args.config, {})
    references = dp.read_transcripts(args.ref)
    hypotheses = dp.read_transcripts(args.hyp)
    common, sections = dp.read_phrase_list(args.phrases)
    bias_lists = {utt_id: list(common) + sections.get(utt_id, []) for utt_id in references}

    total, per_utterance = evaluate.evaluate_corpus(references, hypotheses, bias_lists)
    report = total.to_dict(decimals=run_config.decimals)
    report["n_utterances"] = len(references)
    report["per_utterance"] = json.loads(per_utterance.to_json(orient="records"))
    dp.write_report(report, args.out)
    if args.per_utt:
        dp.save_df(per_utterance, args.per_utt, schema.SCHEMA_EVAL)


RUNNERS = {
    "synth": run_synth,
    "train": run_train,
    "score": run_score,
    "filter": run_score,
    "decode": run_decode,
    "evaluate": run_evaluate,
}


def main(argv=None):
    r"""
    Runs a subcommand.

    Parameters
    ----------
    argv : list of str, optional
        Arguments without the program name. Defaults to sys.argv[1:].

    Returns
    -------
    int
        0 on success, 1 on data and runtime errors, 2 on invalid arguments or settings
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        check_paths(parser, args)
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else 2

    if args.logfile:
        config.add_file_logger(args.logfile)

    try:
        RUNNERS[args.subcommand](args)
    except ConfigError as error:
        logger.error(f"Invalid configuration: {error}")
        return 2
    except (BiasfilterError, OSError) as error:
        logger.exception(f"{args.subcommand} failed: {type(error).__name__}: {error}")
        return 1
    except ValueError as error:
        logger.error(f"Invalid argument: {error}")
        return 2
    return 0


def console_script():
    sys.exit(main())


if __name__ == "__main__":
    console_script()
