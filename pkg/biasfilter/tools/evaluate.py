# coding: utf-8
r"""
Word error rates with biasing-list attribution.

Every utterance is aligned with a unit cost Levenshtein alignment. Errors are attributed to the
biased category (B-WER) if the affected word is in the utterance's biasing list and to the
unbiased category (U-WER) otherwise: substitutions and deletions by the reference word,
insertions by the hypothesis word. Corpus rates are computed from summed counts.
"""
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import pandas as pd

from biasfilter.config import config
from biasfilter.errors import CorpusError

logger = config.get_logger("evaluate")

MATCH = "match"
SUBSTITUTION = "substitution"
DELETION = "deletion"
INSERTION = "insertion"

ERROR_KINDS = (SUBSTITUTION, DELETION, INSERTION)


@dataclass(frozen=True)
class AlignmentOp:
    kind: str
    ref_word: Optional[str] = None
    hyp_word: Optional[str] = None

    def __post_init__(self):
        has_ref = self.ref_word is not None
        has_hyp = self.hyp_word is not None
        expected = {
            MATCH: (True, True),
            SUBSTITUTION: (True, True),
            DELETION: (True, False),
            INSERTION: (False, True),
        }
        if expected.get(self.kind) != (has_ref, has_hyp):
            raise ValueError(f"Inconsistent alignment operation {self}.")


def edit_distance_matrix(ref, hyp):
    r"""
    Dynamic programming table of unit cost edit distances between all prefixes.

    Returns
    -------
    np.ndarray
        (len(ref) + 1, len(hyp) + 1)
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diagonal = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(diagonal, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    return dist


def edit_distance(ref, hyp):
    return int(edit_distance_matrix(ref, hyp)[len(ref), len(hyp)])


def align(ref, hyp):
    r"""
    Minimal unit cost alignment of two word sequences.

    On equal cost the backtrace prefers match, then substitution, deletion and insertion.

    Parameters
    ----------
    ref : sequence of str
    hyp : sequence of str

    Returns
    -------
    list of AlignmentOp
        In sequence order
    """
    ref, hyp = list(ref), list(hyp)
    dist = edit_distance_matrix(ref, hyp)
    ops = []
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        here = dist[i, j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dist[i - 1, j - 1] == here:
            ops.append(AlignmentOp(MATCH, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i - 1, j - 1] + 1 == here:
            ops.append(AlignmentOp(SUBSTITUTION, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1, j] + 1 == here:
            ops.append(AlignmentOp(DELETION, ref[i - 1], None))
            i -= 1
        else:
            ops.append(AlignmentOp(INSERTION, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def _rate(errors, words):
    return errors / words if words else float("nan")


@dataclass(frozen=True)
class ErrorReport:
    r"""
    Error counts per category (biased 'b', unbiased 'u') and operation kind, and the number of
    reference words per category.
    """

    b_sub: int = 0
    b_del: int = 0
    b_ins: int = 0
    u_sub: int = 0
    u_del: int = 0
    u_ins: int = 0
    b_ref: int = 0
    u_ref: int = 0

    def __add__(self, other):
        return ErrorReport(*(a + b for a, b in zip(asdict(self).values(), asdict(other).values())))

    @property
    def b_errors(self):
        return self.b_sub + self.b_del + self.b_ins

    @property
    def u_errors(self):
        return self.u_sub + self.u_del + self.u_ins

    @property
    def errors(self):
        return self.b_errors + self.u_errors

    @property
    def ref_words(self):
        return self.b_ref + self.u_ref

    @property
    def wer(self):
        return _rate(self.errors, self.ref_words)

    @property
    def u_wer(self):
        return _rate(self.u_errors, self.u_ref)

    @property
    def b_wer(self):
        return _rate(self.b_errors, self.b_ref)

    def to_dict(self, decimals=None):
        r"""
        Counts and rates. Undefined rates (no reference words in the category) are None.
        """
        rates = {"wer": self.wer, "u_wer": self.u_wer, "b_wer": self.b_wer}
        for key, value in rates.items():
            if math.isnan(value):
                rates[key] = None
            elif decimals is not None:
                rates[key] = round(value, decimals)
        return {**rates, **asdict(self)}


def report(alignment, bias_words):
    r"""
    Counts the errors of an alignment per category.

    Parameters
    ----------
    alignment : sequence of AlignmentOp
    bias_words : set of str
        All words of the utterance's biasing list

    Returns
    -------
    ErrorReport
    """
    bias_words = set(bias_words)
    counts = dict.fromkeys(ErrorReport.__dataclass_fields__, 0)
    suffix = {SUBSTITUTION: "sub", DELETION: "del", INSERTION: "ins"}
    for op in alignment:
        if op.ref_word is not None:
            counts["b_ref" if op.ref_word in bias_words else "u_ref"] += 1
        if op.kind == MATCH:
            continue
        word = op.hyp_word if op.kind == INSERTION else op.ref_word
        category = "b" if word in bias_words else "u"
        counts[f"{category}_{suffix[op.kind]}"] += 1
    return ErrorReport(**counts)


def bias_words_of(phrases):
    """Union of the words of a biasing list (Phrase objects or word sequences)."""
    return {word for phrase in phrases for word in getattr(phrase, "words", phrase)}


def evaluate_corpus(references, hypotheses, bias_lists):
    r"""
    Evaluates a corpus.

    Parameters
    ----------
    references : dict
        Utterance id -> reference words
    hypotheses : dict
        Utterance id -> hypothesis words. Every reference needs a hypothesis (CorpusError).
    bias_lists : dict
        Utterance id -> biasing list. Utterances without entry have an empty list.

    Returns
    -------
    total : ErrorReport
        Sum of the per-utterance counts
    per_utterance : pd.DataFrame
        One row per utterance (in reference order) with counts and rates
    """
    missing = [utt_id for utt_id in references if utt_id not in hypotheses]
    if missing:
        raise CorpusError(f"No hypothesis for {len(missing)} utterance(s), e.g. '{missing[0]}'.")

    total = ErrorReport()
    rows = []
    for utt_id, ref in references.items():
        utt_report = report(
            align(ref, hypotheses[utt_id]), bias_words_of(bias_lists.get(utt_id, ()))
        )
        total = total + utt_report
        rows.append({"id": utt_id, **utt_report.to_dict()})

    logger.info(
        f"Evaluated {len(rows)} utterances: WER {total.wer:.4f}, U-WER {total.u_wer:.4f}, "
        f"B-WER {total.b_wer:.4f}."
    )
    per_utterance = pd.DataFrame(rows)
    return total, per_utterance
