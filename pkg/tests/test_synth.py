import numpy as np
import pytest

from biasfilter.tools import synth
from biasfilter.tools.core_types import detokenize
from biasfilter.tools.evaluate import align, report
from biasfilter.tools.fusion import FilterResult, beam_search


def small_config(**overrides):
    values = dict(
        seed=7,
        n_chars=8,
        n_frequent=20,
        n_rare=200,
        min_word_chars=3,
        max_word_chars=5,
        min_words=3,
        max_words=6,
        n_train=20,
        n_test=10,
        feat_dim=6,
        distractor_counts=(5, 20),
    )
    values.update(overrides)
    return synth.SynthConfig(**values)


def greedy_words(corpus, utt, cfg):
    scorer = synth.toy_base_scorer(cfg, utt, corpus.vocab, corpus.rare_words)
    hyps = beam_search(
        utt, scorer, FilterResult.inert(), [], beam=1, max_len=len(utt.tokens) + 5
    )
    return detokenize(hyps[0].tokens, corpus.vocab)


def greedy_report(cfg):
    corpus = synth.gen_corpus(cfg)
    total = None
    for utt in corpus.test:
        hyp = greedy_words(corpus, utt, cfg)
        bias = {phrase[0] for phrase in corpus.ground_truth[utt.id]}
        utt_report = report(align(utt.words, hyp), bias)
        total = utt_report if total is None else total + utt_report
    return total


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(noise=-1.0)
    with pytest.raises(ValueError):
        small_config(rho=1.0)
    with pytest.raises(ValueError):
        small_config(n_chars=2, min_word_chars=1, max_word_chars=1, n_frequent=2, n_rare=2)


def test_settings_defaults():
    cfg = synth.SynthConfig.from_settings()
    assert cfg.rho == 0.4
    assert cfg.frames_per_token == 2
    assert cfg.distractor_counts == (100, 500, 1000, 2000)


def test_noise_free_features_are_token_codes():
    corpus = synth.gen_corpus(small_config(noise=0.0))
    utt = corpus.train[0]
    expected = np.repeat(corpus.token_codes[list(utt.tokens)], 2, axis=0)
    np.testing.assert_array_equal(utt.features, expected)
    assert utt.features.shape == (2 * len(utt.tokens), 6)


def test_generation_is_deterministic():
    a = synth.gen_corpus(small_config())
    b = synth.gen_corpus(small_config())
    assert [u.words for u in a.train + a.test] == [u.words for u in b.train + b.test]
    for u, v in zip(a.test, b.test):
        np.testing.assert_array_equal(u.features, v.features)
    assert a.distractors == b.distractors


def test_word_pools_are_disjoint():
    corpus = synth.gen_corpus(small_config())
    assert not set(corpus.frequent_words) & set(corpus.rare_words)
    assert len(set(corpus.rare_words)) == 200
    assert [u.id for u in corpus.test[:2]] == ["test-00000", "test-00001"]


def test_frequent_word_mass():
    corpus = synth.gen_corpus(small_config(n_train=400, n_test=1, distractor_counts=(1,)))
    mass = synth.frequent_word_mass(corpus.train, corpus.frequent_words)
    assert mass == pytest.approx(0.9, abs=0.03)


def test_ground_truth_are_the_rare_words():
    corpus = synth.gen_corpus(small_config())
    rare = set(corpus.rare_words)
    for utt in corpus.train + corpus.test:
        truth = [phrase[0] for phrase in corpus.ground_truth[utt.id]]
        assert truth == [w for w in dict.fromkeys(utt.words) if w in rare]


def test_distractors():
    corpus = synth.gen_corpus(small_config())
    for utt in corpus.test:
        small, large = corpus.distractors[5][utt.id], corpus.distractors[20][utt.id]
        assert len(small) == 5 and len(large) == 20
        assert large[:5] == small
        assert len(set(large)) == 20
        assert not {phrase[0] for phrase in large} & set(utt.words)
        biasing_list = corpus.biasing_list(utt.id, 5)
        assert biasing_list[: len(corpus.ground_truth[utt.id])] == corpus.ground_truth[utt.id]


def test_distractors_are_rare_words_of_other_utterances():
    corpus = synth.gen_corpus(small_config(n_train=200))
    for utt in corpus.test:
        others = set().union(*(o.words for o in corpus.train + corpus.test if o.id != utt.id))
        words = [phrase[0] for phrase in corpus.distractors[20][utt.id]]
        assert set(words) <= others & set(corpus.rare_words)


def test_distractors_fill_up_with_unspoken_rare_words():
    corpus = synth.gen_corpus(small_config(n_train=2, n_test=2, distractor_counts=(50,)))
    spoken = {word for utt in corpus.train + corpus.test for word in utt.words}
    for utt in corpus.test:
        words = [phrase[0] for phrase in corpus.distractors[50][utt.id]]
        assert len(set(words)) == 50
        n_spoken = sum(word in spoken for word in words)
        # spoken rare words come first
        assert all(word in spoken for word in words[:n_spoken])
        assert n_spoken < 50


def test_toy_scorer_rows_are_distributions():
    cfg = small_config()
    corpus = synth.gen_corpus(cfg)
    for utt in corpus.test:
        scorer = synth.toy_base_scorer(cfg, utt, corpus.vocab, corpus.rare_words)
        table = scorer.log_prob_table
        assert table.shape == (len(utt.tokens) + 1, len(corpus.vocab))
        np.testing.assert_allclose(np.exp(table).sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.isneginf(table[:, corpus.vocab.sos_id]))
        # after the reference, <eos> is the most likely token
        assert np.argmax(scorer.next_token_logprobs(utt.tokens)) == corpus.vocab.eos_id


def test_toy_scorer_is_deterministic():
    cfg = small_config()
    corpus = synth.gen_corpus(cfg)
    utt = corpus.test[3]
    a = synth.toy_base_scorer(cfg, utt, corpus.vocab, corpus.rare_words)
    b = synth.toy_base_scorer(
        {"seed": cfg.seed, "rho": 0.4, "smoothing": 0.001},
        utt,
        corpus.vocab,
        corpus.rare_words,
    )
    np.testing.assert_array_equal(a.log_prob_table, b.log_prob_table)
    prefix = utt.tokens[:2]
    np.testing.assert_array_equal(a.next_token_logprobs(prefix), b.next_token_logprobs(prefix))


def test_greedy_decode_without_confusion_is_exact():
    cfg = small_config(rho=0.0)
    corpus = synth.gen_corpus(cfg)
    for utt in corpus.test:
        assert greedy_words(corpus, utt, cfg) == list(utt.words)


def test_confusion_hits_rare_words_harder():
    cfg = small_config(n_train=1, n_test=200, rho=0.4, distractor_counts=(1,))
    total = greedy_report(cfg)
    assert total.b_wer > total.u_wer


def test_encode_features_shape():
    codes = np.eye(4)
    rng = np.random.default_rng(0)
    frames = synth.encode_features([2, 3], codes, 3, 0.0, rng)
    assert frames.shape == (6, 4)


def test_default_corpus_without_confusion_decodes_exactly():
    total = greedy_report(synth.SynthConfig.from_settings(rho=0.0))
    assert total.wer == 0.0


def test_default_corpus_confuses_rare_words_only():
    total = greedy_report(synth.SynthConfig.from_settings())
    assert total.u_wer == 0.0
    assert total.b_wer > total.u_wer
