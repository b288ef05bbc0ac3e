import math

import numpy as np
import pytest

from biasfilter.errors import ConfigMismatch, InvalidPhrase, NumericalError
from biasfilter.model import bias_scorer
from biasfilter.model.bias_scorer import (
    DecoderConfig,
    DecoderParams,
    next_token_logprobs,
    per_token_score,
    phrase_log_prob,
    score_batch,
)
from biasfilter.tools.core_types import EOS_ID, Phrase, Vocab

VOCAB = Vocab.from_characters("abc")  # <sos> <eos> <sp> a b c


def small_params(seed=0, **kwargs):
    options = dict(
        vocab_size=len(VOCAB),
        feat_dim=3,
        n_layers=1,
        d_model=8,
        n_heads=2,
        d_ff=16,
        max_len=32,
        init_scale=0.5,
        seed=seed,
    )
    options.update(kwargs)
    return DecoderParams.init(DecoderConfig(**options))


def random_phrase(rng, max_words=3):
    words = [
        "".join(rng.choice(list("abc"), size=rng.integers(1, 4)))
        for _ in range(rng.integers(0, max_words + 1))
    ]
    return Phrase.from_words(words, VOCAB)


def uniform_params():
    params = small_params()
    params.arrays["out.w"][:] = 0.0
    params.arrays["out.b"][:] = 0.0
    return params


def test_parameter_shapes_consistent():
    params = small_params()
    shapes = bias_scorer.parameter_shapes(params.config)
    assert list(params) == list(shapes)
    assert params["layers.0.cross.wk"].shape == (3, 8)
    assert params.size == sum(int(np.prod(shape)) for shape in shapes.values())


def test_layer_norm_parameters_start_at_identity():
    params = small_params()
    assert np.all(params["layers.0.ln1.g"] == 1.0)
    assert np.all(params["final_ln.b"] == 0.0)
    assert np.all(np.abs(params["embed"]) <= 0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        DecoderConfig(vocab_size=6, feat_dim=3, d_model=7, n_heads=2)


def test_normalization_random_calls():
    rng = np.random.default_rng(1)
    for trial in range(1000):
        params = small_params(seed=trial % 20)
        X = rng.normal(size=(rng.integers(1, 6), 3))
        prefix = [0] + [int(t) for t in rng.integers(1, len(VOCAB), size=rng.integers(0, 5))]
        log_probs = next_token_logprobs(params, X, prefix)
        assert log_probs.shape == (len(VOCAB),)
        assert abs(np.exp(log_probs).sum() - 1.0) < 1e-6


def test_zero_output_projection_is_uniform():
    params = uniform_params()
    X = np.ones((2, 3))
    log_probs = next_token_logprobs(params, X, [0, 3, 4])
    np.testing.assert_allclose(log_probs, -math.log(len(VOCAB)), rtol=0, atol=1e-12)


def test_uniform_phrase_log_probs():
    params = uniform_params()
    X = np.zeros((3, 3))
    V = len(VOCAB)
    assert phrase_log_prob(params, X, Phrase.empty(VOCAB)) == pytest.approx(-math.log(V))
    two_tokens = Phrase.from_words(["a"], VOCAB)
    assert two_tokens.length == 2
    assert phrase_log_prob(params, X, two_tokens) == pytest.approx(-2 * math.log(V))


def straight_line_next_token(params, X, prefix):
    """Position-by-position re-implementation of the decoder for a single prefix."""
    cfg = params.config
    d, H = cfg.d_model, cfg.n_heads
    dh = d // H

    def ln(x, g, b):
        mu = sum(x) / len(x)
        var = sum((xi - mu) ** 2 for xi in x) / len(x)
        rstd = 1.0 / math.sqrt(var + 1e-5)
        return np.array([(xi - mu) * rstd * gi + bi for xi, gi, bi in zip(x, g, b)])

    def attend(query, keys, values):
        out = np.zeros(d)
        for head in range(H):
            sl = slice(head * dh, (head + 1) * dh)
            logits = [float(query[sl] @ key[sl]) / math.sqrt(dh) for key in keys]
            top = max(logits)
            weights = [math.exp(v - top) for v in logits]
            total = sum(weights)
            for w, value in zip(weights, values):
                out[sl] += w / total * value[sl]
        return out

    hidden = []
    for pos, token in enumerate(prefix):
        vec = params["embed"][token] * math.sqrt(d)
        for i in range(d):
            rate = 1.0 / 10000.0 ** ((i - i % 2) / d)
            vec[i] += math.sin(pos * rate) if i % 2 == 0 else math.cos(pos * rate)
        hidden.append(vec)

    for layer in range(cfg.n_layers):
        p = f"layers.{layer}."
        normed = [ln(h, params[p + "ln1.g"], params[p + "ln1.b"]) for h in hidden]
        keys = [a @ params[p + "self.wk"] for a in normed]
        values = [a @ params[p + "self.wv"] for a in normed]
        new_hidden = []
        for pos, h in enumerate(hidden):
            query = normed[pos] @ params[p + "self.wq"]
            ctx = attend(query, keys[: pos + 1], values[: pos + 1])
            h = h + ctx @ params[p + "self.wo"]
            c = ln(h, params[p + "ln2.g"], params[p + "ln2.b"])
            mem_keys = [x @ params[p + "cross.wk"] for x in X]
            mem_values = [x @ params[p + "cross.wv"] for x in X]
            ctx = attend(c @ params[p + "cross.wq"], mem_keys, mem_values)
            h = h + ctx @ params[p + "cross.wo"]
            e = ln(h, params[p + "ln3.g"], params[p + "ln3.b"])
            pre = e @ params[p + "ff.w1"] + params[p + "ff.b1"]
            act = np.array(
                [
                    0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
                    for x in pre
                ]
            )
            new_hidden.append(h + act @ params[p + "ff.w2"] + params[p + "ff.b2"])
        hidden = new_hidden

    z = ln(hidden[-1], params["final_ln.g"], params["final_ln.b"])
    logits = z @ params["out.w"] + params["out.b"]
    top = max(logits)
    return logits - (top + math.log(sum(math.exp(v - top) for v in logits)))


def test_forward_matches_straight_line_oracle():
    params = small_params(seed=3, vocab_size=5, d_model=4, feat_dim=3)
    X = np.random.default_rng(3).normal(size=(3, 3))
    prefix = [0, 3, 2, 4]
    expected = straight_line_next_token(params, X, prefix)
    np.testing.assert_allclose(next_token_logprobs(params, X, prefix), expected, atol=1e-10)


def test_phrase_log_prob_is_chain_of_next_token_logprobs():
    rng = np.random.default_rng(4)
    for trial in range(20):
        params = small_params(seed=trial)
        X = rng.normal(size=(4, 3))
        phrase = random_phrase(rng)
        prefix = [0]
        expected = 0.0
        for token in phrase.tokens:
            expected += next_token_logprobs(params, X, prefix)[token]
            prefix.append(token)
        result = phrase_log_prob(params, X, phrase)
        assert math.exp(result) == pytest.approx(math.exp(expected), abs=1e-9)
        assert result <= 0


def test_empty_phrase_is_single_eos_prediction():
    params = small_params()
    X = np.ones((2, 3))
    expected = next_token_logprobs(params, X, [0])[EOS_ID]
    assert phrase_log_prob(params, X, Phrase.empty(VOCAB)) == pytest.approx(expected, abs=1e-12)


def test_per_token_score():
    assert per_token_score(-1.0, 1) == -1.0
    assert per_token_score(-4.0, 2) == -2.0
    with pytest.raises(InvalidPhrase):
        per_token_score(-1.0, 0)


def test_per_token_score_times_length_recovers_log_prob():
    rng = np.random.default_rng(13)
    params = small_params(seed=13)
    X = rng.normal(size=(5, 3))
    tolerance = 4 * np.finfo(np.float64).eps
    for scored in score_batch(params, X, [random_phrase(rng) for _ in range(64)]):
        recovered = scored.per_token * scored.phrase.length
        assert math.isclose(recovered, scored.log_prob, rel_tol=tolerance, abs_tol=0.0)
    log_probs = -rng.exponential(scale=30.0, size=1000)
    for log_prob, length in zip(log_probs.tolist(), rng.integers(1, 60, size=1000).tolist()):
        recovered = per_token_score(log_prob, length) * length
        assert math.isclose(recovered, log_prob, rel_tol=tolerance, abs_tol=0.0)


def test_score_batch_matches_single_calls():
    rng = np.random.default_rng(5)
    params = small_params(seed=5)
    X = rng.normal(size=(5, 3))
    phrases = [Phrase.empty(VOCAB)] + [random_phrase(rng) for _ in range(31)]

    batch = score_batch(params, X, phrases)
    singles = [phrase_log_prob(params, X, phrase) for phrase in phrases]
    assert max(abs(s.log_prob - single) for s, single in zip(batch, singles)) < 1e-9
    for scored, phrase in zip(batch, phrases):
        assert scored.phrase == phrase
        assert scored.per_token == scored.log_prob / phrase.length
        assert scored.per_token <= 0

    assert score_batch(params, X, phrases[3:4])[0].log_prob == pytest.approx(
        singles[3], abs=1e-12
    )

    order = rng.permutation(len(phrases))
    permuted = score_batch(params, X, [phrases[i] for i in order])
    for scored, i in zip(permuted, order):
        assert scored.log_prob == pytest.approx(batch[i].log_prob, abs=1e-9)

    chunked = score_batch(params, X, phrases, chunk_size=5)
    assert [s.log_prob for s in chunked] == pytest.approx([s.log_prob for s in batch], abs=1e-9)


def test_score_batch_needs_phrases():
    with pytest.raises(InvalidPhrase):
        score_batch(small_params(), np.ones((1, 3)), [])


def test_causality():
    params = small_params(seed=6)
    X = np.random.default_rng(6).normal(size=(3, 3))
    log_probs_a, _ = bias_scorer.forward(params, X, np.array([[0, 3, 4, 5, 3]]))
    log_probs_b, _ = bias_scorer.forward(params, X, np.array([[0, 3, 4, 2, 2]]))
    np.testing.assert_allclose(log_probs_a[0, :3], log_probs_b[0, :3], rtol=0, atol=1e-12)
    assert not np.allclose(log_probs_a[0, 3:], log_probs_b[0, 3:])


def test_scores_depend_on_features():
    params = small_params(seed=7)
    phrase = Phrase.from_words(["ab"], VOCAB)
    score_a = phrase_log_prob(params, np.zeros((2, 3)), phrase)
    score_b = phrase_log_prob(params, np.ones((2, 3)), phrase)
    assert score_a != score_b
    assert phrase_log_prob(params, np.ones((2, 3)), phrase) == score_b


def test_prefix_has_to_start_with_sos():
    with pytest.raises(InvalidPhrase):
        next_token_logprobs(small_params(), np.ones((1, 3)), [3])


def test_feature_shape_mismatch():
    with pytest.raises(ConfigMismatch):
        next_token_logprobs(small_params(), np.ones((2, 4)), [0])


def test_non_finite_values_name_the_layer():
    params = small_params()
    params.arrays["layers.0.ff.w2"][0, 0] = np.nan
    with pytest.raises(NumericalError) as error:
        next_token_logprobs(params, np.ones((2, 3)), [0, 3])
    assert error.value.block == "layer 0"

    with pytest.raises(NumericalError) as error:
        next_token_logprobs(small_params(), np.full((2, 3), np.inf), [0])
    assert error.value.block == "encoder features"


def test_too_long_sequence():
    params = small_params(max_len=3)
    with pytest.raises(InvalidPhrase):
        next_token_logprobs(params, np.ones((1, 3)), [0, 3, 3, 3])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(8)
    params = small_params(seed=8)
    X = rng.normal(size=(4, 3))
    phrases = [Phrase.empty(VOCAB)] + [random_phrase(rng) for _ in range(8)]
    path = tmp_path / "decoder.json"
    params.save(path, vocab_entries=VOCAB.entries)

    loaded = DecoderParams.load(path, vocab_entries=VOCAB.entries)
    assert loaded.config == params.config
    for name in params:
        np.testing.assert_array_equal(loaded[name], params[name])
    before = [s.log_prob for s in score_batch(params, X, phrases)]
    after = [s.log_prob for s in score_batch(loaded, X, phrases)]
    assert before == after

    params.save(tmp_path / "again.json", vocab_entries=VOCAB.entries)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_checkpoint_vocab_mismatch(tmp_path):
    path = tmp_path / "decoder.json"
    small_params().save(path, vocab_entries=VOCAB.entries)
    other = Vocab.from_characters("abd")
    with pytest.raises(ConfigMismatch):
        DecoderParams.load(path, vocab_entries=other.entries)


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "decoder.json"
    small_params().save(path)
    path.write_text(path.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(ConfigMismatch):
        DecoderParams.load(path)


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "decoder.json"
    small_params().save(path)
    path.write_text(path.read_text()[:100])
    with pytest.raises(ConfigMismatch):
        DecoderParams.load(path)
