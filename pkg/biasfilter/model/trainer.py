# coding: utf-8
r"""
Training of the biasing decoder.

For every utterance of a minibatch, a batch of candidate phrases is sampled from the transcripts
of the minibatch and labeled against the utterance's transcript. The decoder is trained with a
convex combination of

* the log loss of the positive phrases, :math:`-\sum_{i \ge 1} l_i \log P(p_i | X)`, and
* the discriminative loss, a softmax over the per-token scores of all sampled phrases plus the
  empty phrase, :math:`-\sum_{i \ge 0} l_i \log softmax(s)_i`,

weighted by `beta`. Gradients are computed analytically (see :mod:`biasfilter.model.backprop`)
and applied with Adam.
"""
from collections import OrderedDict
from dataclasses import dataclass, fields
from typing import List, Tuple

import numpy as np
import pandas as pd

from biasfilter.config import config
from biasfilter.errors import CorpusError, NumericalError, TrainingDiverged
from biasfilter.model import backprop
from biasfilter.model.bias_scorer import (
    DecoderConfig,
    DecoderParams,
    batch_inputs,
    forward,
    logsumexp,
    softmax,
    target_log_probs,
)
from biasfilter.tools.core_types import Phrase, label_empty, label_phrase
from biasfilter.tools.timing import Timer

logger = config.get_logger("trainer")

TRACE_COLUMNS = ["epoch", "log_loss", "disc_loss", "combined_loss"]


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.9
    phrases_per_utterance: int = 32
    phrases_per_transcript: int = 3
    max_phrase_words: int = 3
    epochs: int = 30
    learning_rate: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta has to be in [0, 1], got {self.beta}.")
        if self.phrases_per_utterance < 2:
            raise ValueError("phrases_per_utterance has to be at least 2.")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate < 0:
            raise ValueError(f"Invalid training configuration: {self}")

    @classmethod
    def from_settings(cls, **overrides):
        values = config.get_section("train")
        values.update(overrides)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass(frozen=True)
class PoolPhrase:
    """Phrase sampled from the transcript of utterance `source`."""

    words: Tuple[str, ...]
    source: str


@dataclass(frozen=True)
class PhraseBatch:
    r"""
    Sampled phrases of one utterance.

    `labels` has one more entry than `phrases`: labels[0] belongs to the implicit empty phrase.
    """

    phrases: List[Phrase]
    labels: List[int]
    utterance: object

    def __post_init__(self):
        if len(self.phrases) < 1:
            raise ValueError("A phrase batch has at least one phrase.")
        if len(self.labels) != len(self.phrases) + 1:
            raise ValueError("labels has to cover the empty phrase and every sampled phrase.")

    def all_phrases(self):
        """The empty phrase followed by the sampled phrases."""
        return [Phrase.empty()] + list(self.phrases)


def phrase_windows(n_words, max_words):
    """All (start, length) pairs of segments with 1 to max_words consecutive words."""
    return [
        (start, length)
        for length in range(1, max_words + 1)
        for start in range(n_words - length + 1)
    ]


def sample_phrase_pool(utterances, rng, phrases_per_transcript=3, max_phrase_words=3):
    r"""
    Samples phrases of consecutive words from every transcript of a minibatch.

    Parameters
    ----------
    utterances : sequence of Utterance
    rng : np.random.Generator
    phrases_per_transcript : int
    max_phrase_words : int

    Returns
    -------
    pool : list of PoolPhrase
        `phrases_per_transcript` entries per utterance, each drawn uniformly over the valid
        (start, length) windows of its transcript.
    """
    pool = []
    for utt in utterances:
        windows = phrase_windows(len(utt.words), max_phrase_words)
        if not windows:
            raise CorpusError(f"Utterance '{utt.id}' has an empty transcript.")
        for _ in range(phrases_per_transcript):
            start, length = windows[rng.integers(len(windows))]
            pool.append(PoolPhrase(tuple(utt.words[start : start + length]), utt.id))
    return pool


def assemble_batch(utt, pool, rng, vocab, phrases_per_utterance=32):
    r"""
    Samples the training phrases of one utterance from the minibatch pool.

    One phrase is drawn from the utterance's own pool entries and the rest from the entries of
    the other utterances, with replacement if there are not enough of them. Every phrase is
    labeled by checking it against the transcript.

    Parameters
    ----------
    utt : Utterance
    pool : list of PoolPhrase
    rng : np.random.Generator
    vocab : Vocab
    phrases_per_utterance : int

    Returns
    -------
    PhraseBatch
    """
    own = [entry for entry in pool if entry.source == utt.id]
    others = [entry for entry in pool if entry.source != utt.id]
    if not own:
        raise CorpusError(f"The phrase pool has no phrase from utterance '{utt.id}'.")
    if not others:
        others = own

    n_others = phrases_per_utterance - 1
    picked = [own[rng.integers(len(own))]]
    indices = rng.choice(len(others), size=n_others, replace=len(others) < n_others)
    picked.extend(others[i] for i in indices)

    phrases = [Phrase.from_words(entry.words, vocab) for entry in picked]
    labels = [label_phrase(phrase, utt) for phrase in phrases]
    return PhraseBatch(phrases, [label_empty(labels)] + labels, utt)


def log_loss(scored, labels):
    r"""
    Log loss of the positive phrases, the empty phrase excluded.

    Parameters
    ----------
    scored : sequence of ScoredPhrase or float
        Phrases 1..M (or their log-probabilities)
    labels : sequence of int
        Labels of phrases 1..M

    Returns
    -------
    float
    """
    log_probs = np.array([getattr(s, "log_prob", s) for s in scored], dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(-(labels * log_probs).sum())


def disc_loss(scores, labels):
    r"""
    Discriminative loss over the per-token scores of the empty phrase and phrases 1..M.

    Parameters
    ----------
    scores : sequence of float
        s_0..s_M
    labels : sequence of int
        l_0..l_M

    Returns
    -------
    float
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(-(labels * (scores - logsumexp(scores))).sum())


def disc_loss_grad(scores, labels):
    """Gradient of :func:`disc_loss` with respect to the scores."""
    labels = np.asarray(labels, dtype=np.float64)
    return softmax(np.asarray(scores, dtype=np.float64)) * labels.sum() - labels


def combined_loss(l_log, l_disc, beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta has to be in [0, 1], got {beta}.")
    return (1.0 - beta) * l_log + beta * l_disc


@dataclass
class LossResult:
    combined: float
    log_loss: float
    disc_loss: float
    grads: OrderedDict


def loss_gradients(params, X, batch, beta):
    r"""
    Computes the combined loss of one utterance and its gradient.

    Parameters
    ----------
    params : DecoderParams
    X : np.ndarray
        Encoder features of the utterance
    batch : PhraseBatch
    beta : float

    Returns
    -------
    LossResult
    """
    inputs, targets, lengths = batch_inputs(batch.all_phrases())
    log_probs, cache = forward(params, X, inputs, keep_cache=True)
    token_log_probs = target_log_probs(log_probs, targets, lengths)
    totals = token_log_probs.sum(axis=1)
    scores = totals / lengths
    labels = np.asarray(batch.labels, dtype=np.float64)

    l_log = log_loss(totals[1:], labels[1:])
    l_disc = disc_loss(scores, labels)
    loss = combined_loss(l_log, l_disc, beta)

    dtotals = beta * disc_loss_grad(scores, labels) / lengths
    dtotals[1:] -= (1.0 - beta) * labels[1:]

    valid = np.arange(targets.shape[1])[np.newaxis, :] < lengths[:, np.newaxis]
    dlog_probs = np.zeros_like(log_probs)
    rows, cols = np.nonzero(valid)
    dlog_probs[rows, cols, targets[rows, cols]] = dtotals[rows]

    grads = backprop.backward(params, cache, dlog_probs)
    return LossResult(loss, l_log, l_disc, grads)


def batch_loss(params, X, batch, beta):
    """Combined loss only, e.g. for finite differences."""
    inputs, targets, lengths = batch_inputs(batch.all_phrases())
    log_probs, _ = forward(params, X, inputs)
    totals = target_log_probs(log_probs, targets, lengths).sum(axis=1)
    labels = np.asarray(batch.labels, dtype=np.float64)
    return combined_loss(
        log_loss(totals[1:], labels[1:]), disc_loss(totals / lengths, labels), beta
    )


def numerical_gradients(loss_fn, params, eps=1e-4, blocks=None):
    r"""
    Central finite differences of `loss_fn(params)` for every element of the chosen blocks.

    Parameters
    ----------
    loss_fn : callable
        Maps DecoderParams to a float
    params : DecoderParams
    eps : float
    blocks : list of str, optional
        Defaults to all blocks

    Returns
    -------
    OrderedDict
    """
    shifted = params.copy()
    grads = OrderedDict()
    for name in blocks or list(shifted):
        values = shifted.arrays[name]
        grad = np.zeros_like(values)
        for i in range(values.size):
            original = values.flat[i]
            values.flat[i] = original + eps
            plus = loss_fn(shifted)
            values.flat[i] = original - eps
            minus = loss_fn(shifted)
            values.flat[i] = original
            grad.flat[i] = (plus - minus) / (2.0 * eps)
        grads[name] = grad
    return grads


def relative_error(analytic, numeric, floor=1e-7):
    """Norm-based relative error between two gradient arrays."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(params, X, batch, beta, eps=1e-4):
    r"""
    Compares the analytic gradients of the combined loss with central finite differences.

    Returns
    -------
    pd.Series
        Relative error per parameter block
    """
    analytic = loss_gradients(params, X, batch, beta).grads
    numeric = numerical_gradients(lambda p: batch_loss(p, X, batch, beta), params, eps=eps)
    errors = pd.Series(
        {name: relative_error(analytic[name], numeric[name]) for name in analytic},
        name="relative_error",
    )
    logger.debug(f"Largest relative gradient error: {errors.max():.3e} ({errors.idxmax()}).")
    return errors


class Adam:
    r"""
    Adam with bias correction. Updates the parameter arrays in place.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        if self.learning_rate == 0:
            return
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, grad in grads.items():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad ** 2
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params.arrays[name] -= self.learning_rate * update


def train(corpus, train_config, vocab, params):
    r"""
    Trains the biasing decoder.

    Parameters
    ----------
    corpus : list of Utterance
        Utterances with features
    train_config : TrainConfig
    vocab : Vocab
    params : DecoderParams
        Initial parameters; a trained copy is returned, `params` itself is not modified.

    Returns
    -------
    params : DecoderParams
    trace : pd.DataFrame
        Mean losses per epoch with columns TRACE_COLUMNS
    """
    if not corpus:
        raise CorpusError("Cannot train on an empty corpus.")
    for utt in corpus:
        if utt.features is None:
            raise CorpusError(f"Utterance '{utt.id}' has no features.")
        if not np.all(np.isfinite(utt.features)):
            raise CorpusError(f"Utterance '{utt.id}' has non-finite features.")

    params = params.copy()
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    optimizer = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    logger.info(
        f"Training biasing decoder with {params.size} parameters on {len(corpus)} utterances "
        f"for {cfg.epochs} epochs (beta={cfg.beta})."
    )
    rows = []
    for epoch in range(1, cfg.epochs + 1):
        totals = np.zeros(3)
        try:
            with Timer(text=f"Epoch {epoch}.", logger=logger.debug) as timer:
                order = rng.permutation(len(corpus))
                for start in range(0, len(corpus), cfg.batch_size):
                    minibatch = [corpus[i] for i in order[start : start + cfg.batch_size]]
                    pool = sample_phrase_pool(
                        minibatch, rng, cfg.phrases_per_transcript, cfg.max_phrase_words
                    )
                    accumulated = params.zeros_like()
                    for utt in minibatch:
                        batch = assemble_batch(utt, pool, rng, vocab, cfg.phrases_per_utterance)
                        result = loss_gradients(params, utt.features, batch, cfg.beta)
                        totals += (result.log_loss, result.disc_loss, result.combined)
                        for name, grad in result.grads.items():
                            accumulated[name] += grad
                    for grad in accumulated.values():
                        grad /= len(minibatch)
                    optimizer.step(params, accumulated)
        except NumericalError as error:
            raise TrainingDiverged(
                pd.DataFrame(rows, columns=TRACE_COLUMNS),
                f"Training diverged in epoch {epoch}: {error}",
            ) from error

        log_l, disc_l, combined = totals / len(corpus)
        rows.append(
            {"epoch": epoch, "log_loss": log_l, "disc_loss": disc_l, "combined_loss": combined}
        )
        trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
        if not np.all(np.isfinite(totals)):
            raise TrainingDiverged(trace, f"Training loss became non-finite in epoch {epoch}.")
        logger.info(
            f"Epoch {epoch}: combined loss {combined:.4f} (log {log_l:.4f}, disc {disc_l:.4f}), "
            f"{timer.elapsed:.1f}s."
        )

    return params, pd.DataFrame(rows, columns=TRACE_COLUMNS)


def init_params(vocab, feat_dim, **overrides):
    """Initial decoder parameters with the architecture from settings.yaml."""
    return DecoderParams.init(DecoderConfig.from_settings(len(vocab), feat_dim, **overrides))
