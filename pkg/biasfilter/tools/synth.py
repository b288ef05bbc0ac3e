# coding: utf-8
r"""
Synthetic corpus and toy base recognizer for desk-scale biasing experiments.

Words are random strings over a small alphabet, split into a frequent pool (drawn with Zipf
weights) and a disjoint rare pool. Transcripts mostly consist of frequent words. The encoder
features of an utterance are a fixed random code per token, repeated for a number of frames,
plus Gaussian noise.

The toy base scorer follows the reference transcript position by position. In every rare word
it diverts a random share of the probability mass at one character to a confusion character.
Frequent words are left alone, so unbiased decoding errs on rare words only and rho = 0
reproduces the reference.
"""
import string
import zlib
from dataclasses import dataclass, field, fields
from typing import Dict, List, Tuple

import numpy as np

from biasfilter.config import config
from biasfilter.tools.core_types import Utterance, Vocab, tokenize
from biasfilter.tools.fusion import BaseScorer

logger = config.get_logger("synth")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    n_chars: int = 20
    n_frequent: int = 200
    n_rare: int = 3000
    min_word_chars: int = 3
    max_word_chars: int = 8
    min_words: int = 4
    max_words: int = 12
    n_train: int = 2000
    n_test: int = 200
    frequent_mass: float = 0.9
    zipf_exponent: float = 1.0
    feat_dim: int = 16
    frames_per_token: int = 2
    noise: float = 0.5
    rho: float = 0.4
    smoothing: float = 0.001
    distractor_counts: Tuple[int, ...] = (100, 500, 1000, 2000)

    def __post_init__(self):
        object.__setattr__(self, "distractor_counts", tuple(self.distractor_counts))
        if self.noise < 0:
            raise ValueError(f"noise has to be non-negative, got {self.noise}.")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho has to be in [0, 1), got {self.rho}.")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError(f"smoothing has to be in [0, 1), got {self.smoothing}.")
        if not 1 <= self.n_chars <= len(string.ascii_lowercase):
            raise ValueError(f"n_chars has to be between 1 and 26, got {self.n_chars}.")
        if not 1 <= self.min_word_chars <= self.max_word_chars:
            raise ValueError("Invalid word length range.")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("Invalid utterance length range.")
        if not 0.0 <= self.frequent_mass <= 1.0:
            raise ValueError(f"frequent_mass has to be in [0, 1], got {self.frequent_mass}.")
        n_possible = sum(
            self.n_chars ** k for k in range(self.min_word_chars, self.max_word_chars + 1)
        )
        if self.n_frequent + self.n_rare > n_possible:
            raise ValueError("The alphabet is too small for the requested number of words.")

    @classmethod
    def from_settings(cls, **overrides):
        values = config.get_section("synth")
        values.update(overrides)
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in known})


@dataclass
class SynthCorpus:
    r"""
    Generated corpus.

    `ground_truth` maps every utterance id to the rare words of its transcript (one single-word
    phrase each, in order of first occurrence). `distractors` maps every distractor count N to
    the distractor phrases of every test utterance; lists for smaller N are prefixes of the lists
    for larger N.
    """

    config: SynthConfig
    vocab: Vocab
    train: List[Utterance]
    test: List[Utterance]
    frequent_words: Tuple[str, ...]
    rare_words: Tuple[str, ...]
    token_codes: np.ndarray
    ground_truth: Dict[str, List[Tuple[str, ...]]] = field(default_factory=dict)
    distractors: Dict[int, Dict[str, List[Tuple[str, ...]]]] = field(default_factory=dict)

    def biasing_list(self, utt_id, n_distractors):
        """Ground-truth phrases followed by the distractors of a test utterance."""
        return list(self.ground_truth[utt_id]) + list(self.distractors[n_distractors][utt_id])


def _word_pool(rng, cfg, alphabet):
    words = []
    seen = set()
    while len(words) < cfg.n_frequent + cfg.n_rare:
        length = int(rng.integers(cfg.min_word_chars, cfg.max_word_chars + 1))
        word = "".join(alphabet[i] for i in rng.integers(len(alphabet), size=length))
        if word not in seen:
            seen.add(word)
            words.append(word)
    return tuple(words[: cfg.n_frequent]), tuple(words[cfg.n_frequent :])


def zipf_weights(n, exponent):
    weights = 1.0 / np.arange(1, n + 1) ** exponent
    return weights / weights.sum()


def encode_features(tokens, token_codes, frames_per_token, noise, rng):
    r"""
    Stand-in for encoder output: the code of every token repeated `frames_per_token` times plus
    Gaussian noise with standard deviation `noise`.

    Returns
    -------
    np.ndarray
        (len(tokens) * frames_per_token, feat_dim)
    """
    frames = np.repeat(token_codes[np.asarray(tokens, dtype=np.int64)], frames_per_token, axis=0)
    if noise > 0:
        frames = frames + noise * rng.standard_normal(frames.shape)
    return frames


def gen_corpus(cfg):
    r"""
    Generates a synthetic corpus.

    Parameters
    ----------
    cfg : SynthConfig

    Returns
    -------
    SynthCorpus
    """
    rng = np.random.default_rng(cfg.seed)
    alphabet = string.ascii_lowercase[: cfg.n_chars]
    vocab = Vocab.from_characters(alphabet)
    frequent, rare = _word_pool(rng, cfg, alphabet)
    token_codes = rng.standard_normal((len(vocab), cfg.feat_dim))
    weights = zipf_weights(len(frequent), cfg.zipf_exponent)
    rare_set = set(rare)

    def make_utterance(utt_id):
        n_words = int(rng.integers(cfg.min_words, cfg.max_words + 1))
        words = []
        for pick_frequent in rng.random(n_words) < cfg.frequent_mass:
            if pick_frequent:
                words.append(frequent[rng.choice(len(frequent), p=weights)])
            else:
                words.append(rare[rng.integers(len(rare))])
        tokens = tokenize(words, vocab)
        features = encode_features(tokens, token_codes, cfg.frames_per_token, cfg.noise, rng)
        return Utterance(utt_id, tuple(words), tuple(tokens), features)

    train = [make_utterance(f"train-{i:05d}") for i in range(cfg.n_train)]
    test = [make_utterance(f"test-{i:05d}") for i in range(cfg.n_test)]

    ground_truth = {}
    for utt in train + test:
        rare_in_utt = [word for word in dict.fromkeys(utt.words) if word in rare_set]
        ground_truth[utt.id] = [(word,) for word in rare_in_utt]

    # distractors are rare words spoken in other utterances, unspoken rare words fill up
    spoken = {word for utt in train + test for word in utt.words if word in rare_set}
    unspoken = [word for word in rare if word not in spoken]
    distractors = {n: {} for n in cfg.distractor_counts}
    n_max = max(cfg.distractor_counts, default=0)
    n_filled = 0
    for utt in test:
        others = [word for word in rare if word in spoken and word not in utt.words]
        candidates = [others[i] for i in rng.permutation(len(others))]
        if n_max > len(candidates):
            n_filled += 1
            candidates += [unspoken[i] for i in rng.permutation(len(unspoken))]
        if n_max > len(candidates):
            logger.warning(
                f"Only {len(candidates)} distractors available for '{utt.id}', "
                f"{n_max} requested."
            )
        for n in cfg.distractor_counts:
            distractors[n][utt.id] = [(word,) for word in candidates[:n]]
    if n_filled:
        logger.info(
            f"{n_filled} test utterances need more than the {len(spoken)} spoken rare words as "
            f"distractors, the lists are filled up with unspoken rare words."
        )

    logger.info(
        f"Generated {len(train)} train and {len(test)} test utterances over {len(vocab)} tokens "
        f"({len(frequent)} frequent, {len(rare)} rare words)."
    )
    return SynthCorpus(
        cfg, vocab, train, test, frequent, rare, token_codes, ground_truth, distractors
    )


def frequent_word_mass(utterances, frequent_words):
    """Share of word occurrences that are frequent words."""
    frequent_words = set(frequent_words)
    n_words = sum(len(utt.words) for utt in utterances)
    n_frequent = sum(word in frequent_words for utt in utterances for word in utt.words)
    return n_frequent / n_words if n_words else float("nan")


class ToyBaseScorer(BaseScorer):
    r"""
    Position-synchronous base scorer.

    Row t of `log_prob_table` is the next-token distribution after t emitted tokens; after the
    reference ends, the last row (favoring <eos>) is repeated.
    """

    def __init__(self, log_prob_table):
        self.log_prob_table = log_prob_table

    def next_token_logprobs(self, prefix):
        row = min(len(prefix), len(self.log_prob_table) - 1)
        return self.log_prob_table[row]


def _setting(source, key):
    return source[key] if isinstance(source, dict) else getattr(source, key)


def utterance_rng(seed, utt_id):
    """Random generator of one utterance, independent of the processing order."""
    return np.random.default_rng([int(seed), zlib.crc32(utt_id.encode("utf-8"))])


def toy_base_scorer(cfg, utt, vocab, rare_words):
    r"""
    Builds the toy base scorer of an utterance.

    Parameters
    ----------
    cfg : SynthConfig or dict
        Provides seed, rho and smoothing
    utt : Utterance
    vocab : Vocab
    rare_words : collection of str

    Returns
    -------
    ToyBaseScorer
    """
    rho = _setting(cfg, "rho")
    smoothing = _setting(cfg, "smoothing")
    rng = utterance_rng(_setting(cfg, "seed"), utt.id)
    rare_words = set(rare_words)

    n = len(utt.tokens)
    size = len(vocab)
    floor = smoothing / (size - 1)
    probs = np.full((n + 1, size), floor)
    probs[:, vocab.sos_id] = 0.0
    reference = list(utt.tokens) + [vocab.eos_id]
    probs[np.arange(n + 1), reference] += 1.0 - smoothing

    units = [
        token
        for token in range(size)
        if token not in (vocab.sos_id, vocab.eos_id, vocab.separator_id)
    ]
    cap = 1.0 - smoothing - 1e-6
    position = 0
    for word in utt.words:
        n_units = len(tokenize([word], vocab))
        # frequent words are never confused
        limit = 2.0 * rho if word in rare_words else 0.0
        share = min(rng.uniform(0.0, limit), cap)
        offset = position + int(rng.integers(n_units))
        alternatives = [token for token in units if token != reference[offset]]
        if alternatives and share > 0:
            confusion = alternatives[rng.integers(len(alternatives))]
            probs[offset, reference[offset]] -= share
            probs[offset, confusion] += share
        position += n_units + 1

    with np.errstate(divide="ignore"):
        return ToyBaseScorer(np.log(probs))
