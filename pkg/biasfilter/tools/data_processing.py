# coding: utf-8
r"""
This module contains the readers and writers of all biasfilter files: vocabulary and word lists,
the corpus (JSON lines plus one .npy feature file per utterance), phrase list files, score and
other tables (tab separated, columns defined in biasfilter.schema), decode records and
evaluation reports.
"""
import json
import os
import pathlib

import numpy as np
import pandas as pd

from biasfilter import schema
from biasfilter.config import config
from biasfilter.errors import CorpusError
from biasfilter.tools import matcher
from biasfilter.tools.core_types import Phrase, Utterance, Vocab

logger = config.get_logger("data_processing")

SEPARATOR = config.settings.general.separator

UTT_HEADER = "#utt"

SETTING_FILE = "setting.json"


def get_list_diff(list_a, list_b):
    r"""
    Returns all items of list_a that are not in list_b.

    Parameters
    ----------
    list_a : list
        First list
    list_b : list
        Second list
    Returns
    -------
    list_a_diff_b : list
        List of all items in list_a that are not in list_b.
    """
    exclude = set(list_b)
    return [item for item in list_a if item not in exclude]


def format_header(df, header, index_name):
    r"""
    Formats columns of a DataFrame according to a specified header and index name.
    Fills missing columns with NaN. In case there are columns that are not in header,
    an error is raised.

    Parameters
    ----------
    df : pd.DataFrame
        DataFrame to format
    header : list
        List of columns
    index_name : str
        Name of the index

    Returns
    -------
    df_formatted : pd.DataFrame
    """
    _df = df.copy()

    extra_colums = get_list_diff(_df.columns, header)

    if index_name in extra_colums:
        _df = _df.set_index(index_name, drop=True)
        extra_colums = get_list_diff(_df.columns, header)
    else:
        _df.index.name = index_name

    if extra_colums:
        raise ValueError(f"There are extra columns {extra_colums}")

    missing_columns = get_list_diff(header, _df.columns)

    for col in missing_columns:
        _df[col] = np.nan

    try:
        df_formatted = _df[header]

    except KeyError:
        raise KeyError("Failed to format data according to specified header.")

    return df_formatted


def save_df(df, path, table_schema=None):
    """
    This function saves data to a tab separated file.

    Parameters
    ----------
    df : pd.DataFrame
        DataFrame to be saved
    path : str
        Path to save the file
    table_schema : biasfilter.schema.Schema, optional
        If given, the DataFrame is formatted to the schema's index and columns first.
    """
    if table_schema is not None:
        df = format_header(df, table_schema.header, table_schema.index_name)

    df.to_csv(path, index=True, sep=SEPARATOR)

    logger.info(f"The DataFrame has been saved to: {path}.")


def load_df(path, table_schema):
    r"""
    Loads a table written by :func:`save_df` and checks it against its schema.

    Floats are parsed with round-trip precision, so saved values are recovered exactly.

    Parameters
    ----------
    path : str
    table_schema : biasfilter.schema.Schema

    Returns
    -------
    pd.DataFrame
    """
    types = table_schema.dtypes
    df = pd.read_csv(
        path,
        sep=SEPARATOR,
        dtype={name: str for name, t in types.items() if t is str},
        keep_default_na=False,
        na_values={name: ["", "nan", "NaN"] for name, t in types.items() if t is not str},
        float_precision="round_trip",
    )
    return format_header(df, table_schema.header, table_schema.index_name)


def write_lines(lines, path):
    with open(path, "w", encoding="utf-8") as text_file:
        for line in lines:
            text_file.write(f"{line}\n")


def read_lines(path):
    with open(path, "r", encoding="utf-8") as text_file:
        return [line.rstrip("\n") for line in text_file]


def write_vocab(vocab, path):
    """One vocabulary entry per line, in id order."""
    write_lines(vocab.entries, path)


def read_vocab(path):
    try:
        return Vocab(tuple(line for line in read_lines(path) if line))
    except ValueError as error:
        raise CorpusError(f"Invalid vocabulary file {path}: {error}")


def write_words(words, path):
    write_lines(words, path)


def read_words(path):
    return [line.strip().lower() for line in read_lines(path) if line.strip()]


def feature_path(feature_dir, utt_id):
    return pathlib.Path(feature_dir) / f"{utt_id}.npy"


def write_corpus(utterances, path, feature_dir=None):
    r"""
    Writes a corpus as JSON lines {id, words, feature_file} and saves the features of every
    utterance as .npy file.

    Parameters
    ----------
    utterances : sequence of Utterance
    path : str or pathlib.Path
        Corpus file
    feature_dir : str or pathlib.Path, optional
        Directory of the feature files. Defaults to 'general.feature_dir' next to the corpus
        file. Feature paths are stored relative to the corpus file.
    """
    path = pathlib.Path(path)
    if feature_dir is None:
        feature_dir = path.parent / config.settings.general.feature_dir
    feature_dir = pathlib.Path(feature_dir)
    feature_dir.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8") as corpus_file:
        for utt in utterances:
            record = {"id": utt.id, "words": list(utt.words), "feature_file": None}
            if utt.features is not None:
                features_file = feature_path(feature_dir, utt.id)
                np.save(features_file, utt.features)
                record["feature_file"] = os.path.relpath(features_file, path.parent)
            corpus_file.write(json.dumps(record) + "\n")

    logger.info(f"Saved {len(utterances)} utterances to {path}.")


def read_jsonl(path):
    r"""
    Reads JSON lines. Blank lines are skipped.

    Returns
    -------
    list of dict
    """
    records = []
    with open(path, "r", encoding="utf-8") as jsonl_file:
        for number, line in enumerate(jsonl_file, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as error:
                raise CorpusError(f"{path}:{number}: invalid JSON ({error}).")
    return records


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as jsonl_file:
        for record in records:
            jsonl_file.write(json.dumps(record) + "\n")


def read_corpus(path, vocab, load_features=True):
    r"""
    Reads a corpus written by :func:`write_corpus`.

    Parameters
    ----------
    path : str or pathlib.Path
    vocab : Vocab
    load_features : bool

    Returns
    -------
    list of Utterance
    """
    path = pathlib.Path(path)
    utterances = []
    seen = set()
    for number, record in enumerate(read_jsonl(path), start=1):
        if "id" not in record or "words" not in record:
            raise CorpusError(f"{path}: record {number} misses 'id' or 'words'.")
        if record["id"] in seen:
            raise CorpusError(f"{path}: duplicate utterance id '{record['id']}'.")
        seen.add(record["id"])

        features = None
        if load_features:
            if not record.get("feature_file"):
                raise CorpusError(f"{path}: utterance '{record['id']}' has no feature file.")
            features_file = path.parent / record["feature_file"]
            if not features_file.exists():
                raise CorpusError(f"Feature file {features_file} does not exist.")
            features = np.load(features_file)
        utterances.append(Utterance.from_words(record["id"], record["words"], vocab, features))
    return utterances


def read_transcripts(path):
    r"""
    Reads the word sequences of a corpus or decode file.

    Returns
    -------
    dict
        Utterance id -> list of words ('words' or 'hypothesis_words' of every record)
    """
    transcripts = {}
    for number, record in enumerate(read_jsonl(path), start=1):
        words = record.get("words", record.get("hypothesis_words"))
        if "id" not in record or words is None:
            raise CorpusError(f"{path}: record {number} misses 'id' or a word sequence.")
        transcripts[record["id"]] = [word.lower() for word in words]
    return transcripts


def write_phrase_list(path, phrases=None, sections=None):
    r"""
    Writes a phrase list file: one phrase per line, words separated by spaces.

    Parameters
    ----------
    path : str or pathlib.Path
    phrases : sequence of word sequences, optional
        Phrases for all utterances, written before the first section
    sections : dict, optional
        Utterance id -> sequence of word sequences, written as sections headed by `#utt <id>`
    """
    lines = [" ".join(words) for words in phrases or ()]
    for utt_id, utt_phrases in (sections or {}).items():
        lines.append(f"{UTT_HEADER} {utt_id}")
        lines.extend(" ".join(words) for words in utt_phrases)
    write_lines(lines, path)


def read_phrase_list(path):
    r"""
    Reads a phrase list file. Phrases are lowercased. Lines before the first `#utt <id>` header
    are phrases for all utterances.

    Returns
    -------
    common : list of tuple
        Phrases for all utterances
    sections : dict
        Utterance id -> list of tuple
    """
    common = []
    sections = {}
    current = common
    lines = read_lines(path)
    while lines and not lines[-1].strip():
        lines.pop()
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if stripped.startswith(UTT_HEADER + " ") or stripped == UTT_HEADER:
            utt_id = stripped[len(UTT_HEADER) :].strip()
            if not utt_id:
                raise CorpusError(f"{path}:{number}: section header without utterance id.")
            if utt_id in sections:
                raise CorpusError(f"{path}:{number}: duplicate section '{utt_id}'.")
            current = sections[utt_id] = []
        elif not stripped:
            raise CorpusError(f"{path}:{number}: empty line in phrase list.")
        else:
            current.append(tuple(stripped.lower().split()))
    return common, sections


def phrases_for(utt_id, common, sections, vocab):
    r"""
    Biasing list of one utterance as Phrase objects: the common phrases followed by the
    utterance's section, without duplicates.
    """
    words = dict.fromkeys(list(common) + list(sections.get(utt_id, ())))
    return [Phrase.from_words(phrase_words, vocab) for phrase_words in words]


def scores_to_df(utt_id, scored, tol, filter_result):
    r"""
    Score table rows of one utterance: the empty phrase first, then the biasing list.

    Parameters
    ----------
    utt_id : str
    scored : list of ScoredPhrase
        Empty phrase first
    tol : float
    filter_result : FilterResult

    Returns
    -------
    pd.DataFrame
    """
    kept = set(filter_result.kept)
    s0 = scored[0].per_token
    rows = [
        {
            "utt_id": utt_id,
            "phrase": s.phrase.text,
            "n_tokens": s.phrase.length,
            "log_prob": s.log_prob,
            "per_token_score": s.per_token,
            "tol": tol,
            "margin": tol + s.per_token - s0,
            "kept": int(i in kept),
        }
        for i, s in enumerate(scored)
    ]
    columns = [schema.SCHEMA_SCORES.index_name] + schema.SCHEMA_SCORES.header
    return pd.DataFrame(rows, columns=columns).set_index(schema.SCHEMA_SCORES.index_name)


def load_scores(path):
    return load_df(path, schema.SCHEMA_SCORES)


def match_tables_to_df(result):
    """Partial match tables of the phrases kept for one decoded utterance."""
    df = matcher.tables_to_df(result.tables, result.kept_phrases)
    df.insert(0, schema.SCHEMA_TABLES.index_name, result.id)
    return df.set_index(schema.SCHEMA_TABLES.index_name)


def write_report(report_dict, path):
    with open(path, "w", encoding="utf-8") as report_file:
        json.dump(report_dict, report_file, indent=2)
    logger.info(f"Saved evaluation report to {path}.")


def read_report(path):
    with open(path, "r", encoding="utf-8") as report_file:
        return json.load(report_file)


def collect_results(sweep_dir):
    r"""
    Joins the runs of a sweep into one results table.

    Every run directory below `sweep_dir` holds `setting.json` (setting name, bias_mode,
    n_distractors, tol, beta), the evaluation `report.json` and the decode `summary.tsv`.

    Parameters
    ----------
    sweep_dir : str or pathlib.Path

    Returns
    -------
    pd.DataFrame
        Formatted to schema.SCHEMA_RESULTS, sorted by setting name
    """
    rows = []
    for setting_file in sorted(pathlib.Path(sweep_dir).glob(f"*/{SETTING_FILE}")):
        run_dir = setting_file.parent
        setting = read_report(setting_file)
        report = read_report(run_dir / "report.json")
        summary = load_df(run_dir / "summary.tsv", schema.SCHEMA_DECODE)
        rows.append(
            {
                **setting,
                "wer": report["wer"],
                "u_wer": report["u_wer"],
                "b_wer": report["b_wer"],
                "mean_kept": summary["n_kept"].mean(),
                "mean_recall": summary["recall"].mean(),
                "mean_bonus": summary["bonus"].mean(),
            }
        )
    if not rows:
        raise CorpusError(f"No sweep runs found in {sweep_dir}.")

    results = pd.DataFrame(rows).set_index(schema.SCHEMA_RESULTS.index_name)
    return format_header(results, schema.SCHEMA_RESULTS.header, schema.SCHEMA_RESULTS.index_name)
