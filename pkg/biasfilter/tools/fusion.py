# coding: utf-8
r"""
Filtering of the biasing list and shallow-fusion beam search.

Before search, every phrase of the biasing list is scored by the biasing decoder. A phrase is
kept if its per-token score is not much lower than the score of the empty phrase

.. math::
    tol + s_i - s_0 \ge 0

and the per-token bonus of the utterance is the largest margin among the kept phrases. During
search a hypothesis earns the bonus for every token that extends a partial match into a kept
phrase. The bonus of a partial match that dies is canceled; completed matches keep theirs.
Partial matches still open when a hypothesis ends are canceled as well.
"""
import abc
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from biasfilter.config import config
from biasfilter.model.bias_scorer import score_batch
from biasfilter.tools import matcher
from biasfilter.tools.core_types import EOS_ID, Phrase, detokenize

logger = config.get_logger("fusion")

BIAS_MODES = ("learned", "filtered", "fixed", "none")


@dataclass(frozen=True)
class FilterResult:
    r"""
    Outcome of filtering a biasing list.

    `kept` holds 1-based indices into the scored phrase list (index 0 is the empty phrase).
    """

    kept: Tuple[int, ...]
    bonus: float
    tol: float
    s0: float
    margins: Tuple[float, ...] = ()

    @classmethod
    def inert(cls, tol=0.0, s0=float("nan")):
        """Keeps nothing, bonus 0."""
        return cls((), 0.0, tol, s0)

    @property
    def n_kept(self):
        return len(self.kept)


def filter_phrases(scored, s0, tol):
    r"""
    Keeps the phrases whose per-token score is high enough compared to the empty phrase.

    Parameters
    ----------
    scored : sequence of ScoredPhrase or float
        Phrases 1..M or their per-token scores
    s0 : float
        Per-token score of the empty phrase
    tol : float
        Non-negative slack. A larger tol keeps more phrases.

    Returns
    -------
    FilterResult
    """
    if tol < 0:
        raise ValueError(f"tol has to be non-negative, got {tol}.")
    scores = [float(getattr(s, "per_token", s)) for s in scored]
    margins = tuple(tol + s - s0 for s in scores)
    kept = tuple(i + 1 for i, margin in enumerate(margins) if margin >= 0)
    bonus = max(margins[i - 1] for i in kept) if kept else 0.0
    return FilterResult(kept, float(bonus), tol, s0, margins)


@dataclass(frozen=True)
class Hypothesis:
    r"""
    Partial or finished output of the beam search.

    `tokens` excludes <sos> and the final <eos>. The bias score is split into a vested part
    (completed phrase matches) and a pending part (the longest live partial match).
    """

    tokens: Tuple[int, ...]
    base_score: float
    vested_bias: float
    pending_bias: float
    match_state: matcher.MatchState
    finished: bool = False

    @classmethod
    def initial(cls, n_phrases):
        return cls((), 0.0, 0.0, 0.0, matcher.MatchState.zero(n_phrases))

    @property
    def bias_score(self):
        return self.vested_bias + self.pending_bias

    @property
    def total_score(self):
        return self.base_score + self.vested_bias + self.pending_bias

    def sort_key(self):
        """Best first; ties go to the shorter, then the lexicographically smaller sequence."""
        return (-self.total_score, len(self.tokens), self.tokens, self.finished)


def apply_bias(hyp, token, tables, bonus):
    r"""
    Appends a token to a hypothesis and updates its bias score.

    The base score is left untouched.

    Parameters
    ----------
    hyp : Hypothesis
    token : int
    tables : sequence of PartialMatchTable
    bonus : float

    Returns
    -------
    Hypothesis
    """
    state, _, _ = matcher.step(hyp.match_state, tables, token)
    return replace(
        hyp,
        tokens=hyp.tokens + (token,),
        vested_bias=bonus * state.completed_total,
        pending_bias=bonus * state.max_length,
        match_state=state,
    )


def finalize(hyp, log_prob):
    """Ends a hypothesis with <eos>; pending bias of open partial matches is canceled."""
    return replace(
        hyp, base_score=hyp.base_score + log_prob, pending_bias=0.0, finished=True
    )


class BaseScorer(abc.ABC):
    r"""
    Next-token distribution of the base recognizer for one utterance.

    Implementations return log-probabilities over the whole vocabulary for a token prefix
    (without <sos>). Emitting `eos_id` ends a hypothesis.
    """

    eos_id = EOS_ID

    @abc.abstractmethod
    def next_token_logprobs(self, prefix):
        r"""
        Parameters
        ----------
        prefix : tuple of int

        Returns
        -------
        np.ndarray
            Log-probabilities of length V
        """


class TableScorer(BaseScorer):
    r"""
    Base scorer defined by a function of the prefix, e.g. a lookup table in tests.
    """

    def __init__(self, fn: Callable):
        self.fn = fn

    def next_token_logprobs(self, prefix):
        return np.asarray(self.fn(tuple(prefix)), dtype=np.float64)


def _expansion_tokens(log_probs, n_expansions, eos_id, eos_only):
    if eos_only:
        return [eos_id] if np.isfinite(log_probs[eos_id]) else []
    order = np.argsort(-log_probs, kind="stable")[:n_expansions]
    return [int(token) for token in order if np.isfinite(log_probs[token])]


def beam_search(
    utt,
    base,
    filter_result,
    tables,
    beam,
    max_len,
    expansions=30,
    on_step: Optional[Callable] = None,
):
    r"""
    Shallow-fusion beam search.

    Every live hypothesis proposes its `expansions` best next tokens under the base scorer. The
    bias is applied to every expansion before the candidates are pruned to `beam`. Candidates
    ending with <eos> leave the beam as finished hypotheses. At step `max_len` only <eos> is
    allowed.

    Parameters
    ----------
    utt : Utterance or None
        Only used in log messages
    base : BaseScorer
    filter_result : FilterResult
        Provides the per-token bonus
    tables : sequence of PartialMatchTable
        Tables of the kept phrases
    beam : int
    max_len : int
        Maximum number of emitted tokens including <eos>
    expansions : int
    on_step : callable, optional
        Called as on_step(step, hypotheses) with the pruned candidates of every step.

    Returns
    -------
    list of Hypothesis
        At most `beam` hypotheses, best first. Finished hypotheses if there are any, otherwise
        the best unfinished ones (finished=False).
    """
    if beam < 1:
        raise ValueError(f"beam has to be at least 1, got {beam}.")
    if max_len < 1:
        raise ValueError(f"max_len has to be at least 1, got {max_len}.")

    bonus = filter_result.bonus
    tables = list(tables)
    live = [Hypothesis.initial(len(tables))]
    finished: List[Hypothesis] = []

    for t in range(max_len):
        candidates = []
        eos_only = t == max_len - 1
        for hyp in live:
            log_probs = base.next_token_logprobs(hyp.tokens)
            for token in _expansion_tokens(log_probs, expansions, base.eos_id, eos_only):
                log_prob = float(log_probs[token])
                if token == base.eos_id:
                    candidates.append(finalize(hyp, log_prob))
                else:
                    extended = replace(hyp, base_score=hyp.base_score + log_prob)
                    candidates.append(apply_bias(extended, token, tables, bonus))

        candidates.sort(key=Hypothesis.sort_key)
        pruned = candidates[:beam]
        if on_step is not None:
            on_step(t, pruned)

        finished.extend(hyp for hyp in pruned if hyp.finished)
        still_live = [hyp for hyp in pruned if not hyp.finished]
        if not still_live:
            break
        live = still_live

    if finished:
        return sorted(finished, key=Hypothesis.sort_key)[:beam]

    utt_id = getattr(utt, "id", "?")
    logger.warning(f"No hypothesis of utterance '{utt_id}' finished within {max_len} tokens.")
    return sorted(live, key=Hypothesis.sort_key)[:beam]


@dataclass
class DecodeResult:
    r"""
    Best hypothesis of one utterance with the filtering diagnostics.

    `scores` holds the per-token scores of phrases 1..M (empty for fixed and none modes),
    `recall` the fraction of ground-truth phrases that were kept (NaN without ground truth) and
    `tables` the partial match tables of the kept phrases used by the search.
    """

    id: str
    words: List[str]
    tokens: Tuple[int, ...]
    base_score: float
    bias_score: float
    complete: bool
    bonus: float
    s0: float
    kept_phrases: List[str]
    n_phrases: int
    scores: List[float] = field(default_factory=list)
    recall: float = float("nan")
    tables: List[matcher.PartialMatchTable] = field(default_factory=list, repr=False)

    @property
    def n_kept(self):
        return len(self.kept_phrases)

    def to_record(self):
        return {
            "id": self.id,
            "hypothesis_words": list(self.words),
            "kept_phrases": list(self.kept_phrases),
            "bonus": self.bonus,
            "base_score": self.base_score,
            "bias_score": self.bias_score,
            "complete": self.complete,
            "s0": None if math.isnan(self.s0) else self.s0,
            "n_phrases": self.n_phrases,
            "recall": None if math.isnan(self.recall) else self.recall,
        }


def phrase_recall(kept, ground_truth):
    r"""
    Fraction of ground-truth phrases contained in the kept phrases.

    Parameters
    ----------
    kept : sequence of Phrase
    ground_truth : sequence of Phrase or None

    Returns
    -------
    float
        NaN if there is no ground truth
    """
    if not ground_truth:
        return float("nan")
    kept_words = {phrase.words for phrase in kept}
    return sum(phrase.words in kept_words for phrase in ground_truth) / len(ground_truth)


def decode_utterance(
    utt,
    phrases,
    params,
    base,
    tol,
    beam,
    vocab,
    max_len=None,
    expansions=30,
    bias_mode="learned",
    fixed_bonus=1.0,
    ground_truth=None,
    max_len_per_frame=1.0,
):
    r"""
    Filters the biasing list of one utterance and decodes it with shallow fusion.

    Parameters
    ----------
    utt : Utterance
    phrases : list of Phrase
        Biasing list
    params : DecoderParams or None
        Biasing decoder; only needed for bias_modes 'learned' and 'filtered'
    base : BaseScorer
    tol : float
    beam : int
    vocab : Vocab
    max_len : int, optional
        Defaults to max_len_per_frame times the number of feature frames
    expansions : int
    bias_mode : str
        'learned' filters with the biasing decoder and uses the margin bonus, 'filtered'
        filters the same way but biases the kept phrases with the constant `fixed_bonus`,
        'fixed' keeps the whole list with `fixed_bonus` and 'none' decodes without biasing.
    fixed_bonus : float
    ground_truth : list of Phrase, optional
        Used for the recall diagnostic
    max_len_per_frame : float

    Returns
    -------
    DecodeResult
    """
    if bias_mode not in BIAS_MODES:
        raise ValueError(f"Unknown bias mode '{bias_mode}'. Choose one of {BIAS_MODES}.")
    if bias_mode in ("filtered", "fixed") and fixed_bonus < 0:
        raise ValueError(f"fixed_bonus has to be non-negative, got {fixed_bonus}.")
    phrases = [phrase for phrase in phrases if not phrase.is_empty]
    if max_len is None:
        max_len = max(1, int(math.ceil(max_len_per_frame * len(utt.features))))

    scores = []
    if bias_mode in ("learned", "filtered"):
        scored = score_batch(params, utt.features, [Phrase.empty(vocab)] + phrases)
        s0 = scored[0].per_token
        scores = [s.per_token for s in scored[1:]]
        filter_result = filter_phrases(scores, s0, tol)
        if bias_mode == "filtered" and filter_result.kept:
            filter_result = replace(filter_result, bonus=float(fixed_bonus))
    elif bias_mode == "fixed" and phrases:
        kept_all = tuple(range(1, len(phrases) + 1))
        filter_result = FilterResult(kept_all, float(fixed_bonus), tol, float("nan"))
    else:
        filter_result = FilterResult.inert(tol)

    kept = [phrases[i - 1] for i in filter_result.kept]
    tables = [matcher.build_table(phrase) for phrase in kept]
    hypotheses = beam_search(utt, base, filter_result, tables, beam, max_len, expansions)
    best = hypotheses[0]

    return DecodeResult(
        id=utt.id,
        words=detokenize(best.tokens, vocab),
        tokens=best.tokens,
        base_score=best.base_score,
        bias_score=best.bias_score,
        complete=best.finished,
        bonus=filter_result.bonus,
        s0=filter_result.s0,
        kept_phrases=[phrase.text for phrase in kept],
        n_phrases=len(phrases),
        scores=scores,
        recall=phrase_recall(kept, ground_truth),
        tables=tables,
    )
