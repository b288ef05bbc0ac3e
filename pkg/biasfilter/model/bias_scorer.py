# coding: utf-8
r"""
Autoregressive attention decoder scoring candidate phrases against encoder features.

The decoder models a phrase as token sequence started by <sos> and terminated by <eos>:

.. math::
    P(p | X) = \prod_t P(p_t | <sos>, p_1, ..., p_{t-1}, X)

Every block is a pre-norm residual block: causal self-attention, cross-attention over the
encoder features X and a GELU feed-forward network. All arithmetic is float64 numpy. The
forward pass optionally keeps the intermediate values needed by
:mod:`biasfilter.model.backprop`.
"""
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from biasfilter.config import config
from biasfilter.errors import ConfigMismatch, InvalidPhrase, NumericalError

logger = config.get_logger("bias_scorer")

CHECKPOINT_FORMAT_VERSION = 1

LN_EPS = 1e-5

GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    feat_dim: int
    n_layers: int = 2
    d_model: int = 32
    n_heads: int = 2
    d_ff: int = 64
    max_len: int = 256
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model ({self.d_model}) has to be divisible by n_heads ({self.n_heads})."
            )
        if self.vocab_size < 3 or self.feat_dim < 1 or self.n_layers < 1:
            raise ValueError(f"Invalid decoder dimensions: {self}")

    @classmethod
    def from_settings(cls, vocab_size, feat_dim, **overrides):
        r"""
        Creates the desk-scale default architecture from the 'decoder' section of settings.yaml.
        """
        values = config.get_section("decoder")
        values.update(overrides)
        return cls(vocab_size=vocab_size, feat_dim=feat_dim, **values)

    @property
    def head_dim(self):
        return self.d_model // self.n_heads


def parameter_shapes(cfg):
    r"""
    Returns the names and shapes of all trainable parameter blocks in a fixed order.

    Parameters
    ----------
    cfg : DecoderConfig

    Returns
    -------
    OrderedDict
    """
    d, f, V, dx = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.feat_dim
    shapes = OrderedDict()
    shapes["embed"] = (V, d)
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for name in ("wq", "wk", "wv", "wo"):
            shapes[p + "self." + name] = (d, d)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "cross.wq"] = (d, d)
        shapes[p + "cross.wk"] = (dx, d)
        shapes[p + "cross.wv"] = (dx, d)
        shapes[p + "cross.wo"] = (d, d)
        shapes[p + "ln3.g"] = (d,)
        shapes[p + "ln3.b"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["out.w"] = (d, V)
    shapes["out.b"] = (V,)
    return shapes


class DecoderParams:
    r"""
    Parameter blocks of the biasing decoder, keyed by block name.

    Instances are treated as immutable while scoring; the optimizer updates the arrays in place.
    """

    def __init__(self, cfg, arrays):
        shapes = parameter_shapes(cfg)
        if list(arrays) != list(shapes):
            raise ConfigMismatch("Parameter blocks do not match the decoder configuration.")
        for name, shape in shapes.items():
            if arrays[name].shape != shape:
                raise ConfigMismatch(
                    f"Block '{name}' has shape {arrays[name].shape}, expected {shape}."
                )
        self.config = cfg
        self.arrays = arrays

    @classmethod
    def init(cls, cfg):
        r"""
        Initializes all weights uniformly in [-init_scale, init_scale] with the configured seed.
        Layer norm gains start at 1 and layer norm biases at 0.
        """
        rng = np.random.default_rng(cfg.seed)
        arrays = OrderedDict()
        for name, shape in parameter_shapes(cfg).items():
            if ".ln" in name or name.startswith("final_ln"):
                arrays[name] = np.ones(shape) if name.endswith(".g") else np.zeros(shape)
            else:
                arrays[name] = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shape)
        return cls(cfg, arrays)

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self):
        return DecoderParams(
            self.config, OrderedDict((k, v.copy()) for k, v in self.arrays.items())
        )

    def zeros_like(self):
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.arrays.items())

    @property
    def size(self):
        return sum(v.size for v in self.arrays.values())

    def save(self, path, vocab_entries=None):
        r"""
        Saves a checkpoint as JSON: a header (format version, decoder configuration, vocabulary)
        and every block as shape plus row-major values. Floats are written with their shortest
        round-trip representation, so reloading is bit-exact.

        Parameters
        ----------
        path : str or pathlib.Path
        vocab_entries : sequence of str, optional
            Token strings, stored to detect vocabulary mismatches on load.
        """
        checkpoint = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": asdict(self.config),
            "vocab": list(vocab_entries) if vocab_entries is not None else None,
            "arrays": OrderedDict(
                (name, {"shape": list(value.shape), "values": value.ravel().tolist()})
                for name, value in self.arrays.items()
            ),
        }
        with open(path, "w", encoding="utf-8") as checkpoint_file:
            json.dump(checkpoint, checkpoint_file)
        logger.info(f"Saved checkpoint with {self.size} parameters to {path}.")

    @classmethod
    def load(cls, path, vocab_entries=None):
        r"""
        Loads a checkpoint written by :meth:`save`.

        Parameters
        ----------
        path : str or pathlib.Path
        vocab_entries : sequence of str, optional
            If given, has to equal the vocabulary stored in the checkpoint.

        Returns
        -------
        DecoderParams
        """
        with open(path, "r", encoding="utf-8") as checkpoint_file:
            try:
                checkpoint = json.load(checkpoint_file, object_pairs_hook=OrderedDict)
            except json.JSONDecodeError as error:
                raise ConfigMismatch(f"Checkpoint {path} is not valid JSON: {error}") from error

        version = checkpoint.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise ConfigMismatch(f"Unsupported checkpoint format version {version} in {path}.")

        stored_vocab = checkpoint.get("vocab")
        if vocab_entries is not None and stored_vocab is not None:
            if list(vocab_entries) != list(stored_vocab):
                raise ConfigMismatch(
                    f"Vocabulary of checkpoint {path} ({len(stored_vocab)} entries) differs from "
                    f"the corpus vocabulary ({len(vocab_entries)} entries)."
                )

        cfg = DecoderConfig(**checkpoint["config"])
        arrays = OrderedDict(
            (name, np.array(block["values"], dtype=np.float64).reshape(block["shape"]))
            for name, block in checkpoint["arrays"].items()
        )
        return cls(cfg, arrays)


@dataclass(frozen=True)
class ScoredPhrase:
    r"""
    A phrase with its total log-probability and its per-token score (log_prob / length).

    per_token * length gives back log_prob up to the rounding of one division and one
    multiplication, i.e. within a relative error of a few machine epsilons.
    """

    phrase: object
    log_prob: float
    per_token: float


def positional_encoding(length, d_model):
    positions = np.arange(length)[:, np.newaxis]
    rates = 1.0 / (10000.0 ** (np.arange(0, d_model, 2) / d_model))
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(positions * rates)
    pe[:, 1::2] = np.cos(positions * rates)[:, : d_model // 2]
    return pe


def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(x):
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x)
    return m + np.log(np.sum(np.exp(x - m)))


def layer_norm(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    rstd = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = centered * rstd
    return xhat * gain + bias, (xhat, rstd)


def gelu(x):
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def split_heads(x, n_heads):
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def merge_heads(x):
    b, h, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, n, h * dh)


def attention(queries_in, keys_in, wq, wk, wv, wo, n_heads, causal):
    r"""
    Multi-head scaled dot-product attention.

    Parameters
    ----------
    queries_in : np.ndarray
        (B, L, d)
    keys_in : np.ndarray
        (B, S, dk) or (1, S, dk), broadcast over the batch
    causal : bool
        Mask future positions (requires S == L)

    Returns
    -------
    out : np.ndarray
        (B, L, d)
    cache : dict
    """
    q = split_heads(queries_in @ wq, n_heads)
    k = split_heads(keys_in @ wk, n_heads)
    v = split_heads(keys_in @ wv, n_heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    if causal:
        length = scores.shape[-1]
        future = np.triu(np.ones((length, length), dtype=bool), k=1)
        scores = np.where(future, -np.inf, scores)
    probs = softmax(scores)
    context = merge_heads(probs @ v)
    out = context @ wo
    cache = {
        "queries_in": queries_in,
        "keys_in": keys_in,
        "q": q,
        "k": k,
        "v": v,
        "probs": probs,
        "context": context,
        "scale": scale,
    }
    return out, cache


def _check_finite(values, block):
    if not np.all(np.isfinite(values)):
        raise NumericalError(block)


def forward(params, X, inputs, keep_cache=False):
    r"""
    Runs the decoder over a batch of (equally long) input token sequences.

    Parameters
    ----------
    params : DecoderParams
    X : np.ndarray
        Encoder features (T, feat_dim)
    inputs : np.ndarray
        Token ids (B, L), each row starting with <sos>
    keep_cache : bool
        If True, intermediate values for the backward pass are returned as well.

    Returns
    -------
    log_probs : np.ndarray
        (B, L, V) next-token log-probabilities at every position
    cache : dict or None
    """
    cfg = params.config
    X = np.asarray(X, dtype=np.float64)
    inputs = np.asarray(inputs)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] != cfg.feat_dim:
        raise ConfigMismatch(
            f"Encoder features have shape {X.shape}, expected (T >= 1, {cfg.feat_dim})."
        )
    _check_finite(X, "encoder features")
    length = inputs.shape[1]
    if length > cfg.max_len:
        raise InvalidPhrase(f"Sequence of length {length} exceeds max_len {cfg.max_len}.")

    memory = X[np.newaxis]
    h = params["embed"][inputs] * math.sqrt(cfg.d_model) + positional_encoding(
        length, cfg.d_model
    )
    layers = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        a, ln1 = layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"])
        self_out, self_cache = attention(
            a,
            a,
            params[p + "self.wq"],
            params[p + "self.wk"],
            params[p + "self.wv"],
            params[p + "self.wo"],
            cfg.n_heads,
            causal=True,
        )
        h = h + self_out
        c, ln2 = layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"])
        cross_out, cross_cache = attention(
            c,
            memory,
            params[p + "cross.wq"],
            params[p + "cross.wk"],
            params[p + "cross.wv"],
            params[p + "cross.wo"],
            cfg.n_heads,
            causal=False,
        )
        h = h + cross_out
        e, ln3 = layer_norm(h, params[p + "ln3.g"], params[p + "ln3.b"])
        pre = e @ params[p + "ff.w1"] + params[p + "ff.b1"]
        act, tanh_term = gelu(pre)
        h = h + act @ params[p + "ff.w2"] + params[p + "ff.b2"]
        _check_finite(h, f"layer {i}")
        if keep_cache:
            layers.append(
                {
                    "ln1": ln1,
                    "self": self_cache,
                    "ln2": ln2,
                    "cross": cross_cache,
                    "ln3": ln3,
                    "ff_in": e,
                    "ff_pre": pre,
                    "ff_tanh": tanh_term,
                    "ff_act": act,
                }
            )

    z, final_ln = layer_norm(h, params["final_ln.g"], params["final_ln.b"])
    logits = z @ params["out.w"] + params["out.b"]
    _check_finite(logits, "output projection")
    log_probs = log_softmax(logits)

    cache = None
    if keep_cache:
        cache = {
            "inputs": inputs,
            "layers": layers,
            "final_ln": final_ln,
            "final_out": z,
            "probs": np.exp(log_probs),
        }
    return log_probs, cache


def next_token_logprobs(params, X, prefix):
    r"""
    Log-probabilities of the next token given a prefix.

    Parameters
    ----------
    params : DecoderParams
    X : np.ndarray
        Encoder features (T, feat_dim)
    prefix : sequence of int
        Starts with <sos>

    Returns
    -------
    np.ndarray
        Length V log-probability vector
    """
    prefix = list(prefix)
    if not prefix or prefix[0] != 0:
        raise InvalidPhrase("The prefix has to start with <sos>.")
    log_probs, _ = forward(params, X, np.array([prefix]))
    return log_probs[0, -1]


def batch_inputs(phrases, sos_id=0, pad_id=1):
    r"""
    Builds the shifted decoder inputs (<sos> first) and the targets of a list of phrases.

    Inputs are <sos> followed by the phrase tokens without the last one; targets are the phrase
    tokens. Rows are right-padded with `pad_id`, which causal masking keeps away from the
    valid positions.

    Returns
    -------
    inputs : np.ndarray
        (B, L)
    targets : np.ndarray
        (B, L)
    lengths : np.ndarray
        (B,)
    """
    lengths = np.array([phrase.length for phrase in phrases])
    if np.any(lengths < 1):
        raise InvalidPhrase("Phrases have at least one token.")
    width = int(lengths.max())
    inputs = np.full((len(phrases), width), pad_id, dtype=np.int64)
    targets = np.full((len(phrases), width), pad_id, dtype=np.int64)
    for row, phrase in enumerate(phrases):
        tokens = list(phrase.tokens)
        inputs[row, : len(tokens)] = [sos_id] + tokens[:-1]
        targets[row, : len(tokens)] = tokens
    return inputs, targets, lengths


def target_log_probs(log_probs, targets, lengths):
    r"""
    Gathers the log-probabilities of the targets; padded positions are zero.

    Returns
    -------
    np.ndarray
        (B, L)
    """
    batch, width = targets.shape
    picked = np.take_along_axis(log_probs, targets[..., np.newaxis], axis=-1)[..., 0]
    valid = np.arange(width)[np.newaxis, :] < lengths[:, np.newaxis]
    return np.where(valid, picked, 0.0)


def per_token_score(log_prob, length):
    r"""
    Per-token score of a phrase: its log-probability divided by its token length.

    Parameters
    ----------
    log_prob : float
    length : int
        Number of tokens including <eos>

    Returns
    -------
    float
    """
    if length < 1:
        raise InvalidPhrase(f"Phrase length has to be at least 1, got {length}.")
    return log_prob / length


def score_batch(params, X, phrases, chunk_size: Optional[int] = 256):
    r"""
    Scores a list of phrases against one utterance.

    Parameters
    ----------
    params : DecoderParams
    X : np.ndarray
        Encoder features (T, feat_dim)
    phrases : list of Phrase
        Non-empty; the empty phrase may be included.
    chunk_size : int or None
        Number of phrases per forward pass. None scores all phrases at once.

    Returns
    -------
    list of ScoredPhrase
        In input order
    """
    phrases = list(phrases)
    if not phrases:
        raise InvalidPhrase("score_batch needs at least one phrase.")
    step = chunk_size or len(phrases)
    scored = []
    for start in range(0, len(phrases), step):
        chunk = phrases[start : start + step]
        inputs, targets, lengths = batch_inputs(chunk)
        log_probs, _ = forward(params, X, inputs)
        totals = target_log_probs(log_probs, targets, lengths).sum(axis=1)
        for phrase, total, length in zip(chunk, totals, lengths):
            total = float(total)
            scored.append(ScoredPhrase(phrase, total, per_token_score(total, int(length))))
    return scored


def phrase_log_prob(params, X, phrase):
    r"""
    Total log-probability of a phrase including its terminal <eos>. For the empty phrase this is
    the log-probability of <eos> right after <sos>.
    """
    return score_batch(params, X, [phrase])[0].log_prob
