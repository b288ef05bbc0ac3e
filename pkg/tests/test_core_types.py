import string

import numpy as np
import pytest

from biasfilter.errors import InvalidPhrase, UnknownSymbol
from biasfilter.tools.core_types import (
    EOS,
    SEPARATOR,
    SOS,
    Phrase,
    Utterance,
    Vocab,
    detokenize,
    label_empty,
    label_phrase,
    tokenize,
)

VOCAB = Vocab.from_characters("abcdefghijklmnopqrstuvwxyz")


def test_vocab_reserved_ids():
    assert VOCAB.sos_id == 0
    assert VOCAB.eos_id == 1
    assert VOCAB.token(VOCAB.sos_id) == SOS
    assert VOCAB.token(VOCAB.eos_id) == EOS
    assert VOCAB.id(SEPARATOR) == VOCAB.separator_id
    assert [VOCAB.id(token) for token in VOCAB.entries] == list(range(len(VOCAB)))


def test_vocab_validation():
    with pytest.raises(ValueError):
        Vocab(("a", SOS, EOS, SEPARATOR))
    with pytest.raises(ValueError):
        Vocab((SOS, EOS, SEPARATOR, "a", "a"))
    with pytest.raises(ValueError):
        Vocab((SOS, EOS, "a"))


def test_tokenize_trivial():
    assert tokenize([], VOCAB) == []
    assert tokenize(["cat"], VOCAB) == [VOCAB.id("c"), VOCAB.id("a"), VOCAB.id("t")]
    assert tokenize(["a", "b"], VOCAB) == [VOCAB.id("a"), VOCAB.separator_id, VOCAB.id("b")]


def test_tokenize_never_emits_reserved_ids():
    tokens = tokenize(["some", "words", "here"], VOCAB)
    assert VOCAB.sos_id not in tokens
    assert VOCAB.eos_id not in tokens


def test_tokenize_unknown_symbol():
    with pytest.raises(UnknownSymbol, match="3"):
        tokenize(["ab3"], VOCAB)
    with pytest.raises(KeyError):
        tokenize(["é"], VOCAB)


def test_tokenize_prefers_longest_unit():
    vocab = Vocab((SOS, EOS, SEPARATOR, "a", "b", "ab"))
    assert tokenize(["aab"], vocab) == [vocab.id("a"), vocab.id("ab")]


def test_tokenize_round_trip():
    letters = string.ascii_lowercase
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        words = [
            "".join(rng.choice(list(letters), size=rng.integers(1, 8)))
            for _ in range(rng.integers(0, 6))
        ]
        assert detokenize(tokenize(words, VOCAB), VOCAB) == words


def test_detokenize_skips_reserved():
    tokens = [VOCAB.sos_id] + tokenize(["ab", "c"], VOCAB) + [VOCAB.eos_id]
    assert detokenize(tokens, VOCAB) == ["ab", "c"]


def test_phrase_from_words():
    phrase = Phrase.from_words(["See", "Spot"], VOCAB)
    assert phrase.words == ("see", "spot")
    assert phrase.tokens[-1] == VOCAB.eos_id
    assert phrase.length == len("see") + 1 + len("spot") + 1
    assert phrase.match_tokens == phrase.tokens[:-1]
    assert phrase.text == "see spot"


def test_empty_phrase():
    empty = Phrase.empty(VOCAB)
    assert empty.words == ()
    assert empty.tokens == (VOCAB.eos_id,)
    assert empty.length == 1
    assert empty.is_empty
    assert Phrase.empty() == empty


def test_phrase_needs_eos():
    with pytest.raises(InvalidPhrase):
        Phrase((), ())


def test_label_phrase():
    utt = Utterance.from_words("u", ["See", "spot", "run"], VOCAB)
    assert label_phrase(Phrase.from_words(["spot", "run"], VOCAB), utt) == 1
    assert label_phrase(["see"], utt) == 1
    assert label_phrase(["see", "run"], utt) == 0
    assert label_phrase(["spo"], utt) == 0
    with pytest.raises(InvalidPhrase):
        label_phrase(Phrase.empty(VOCAB), utt)


def test_label_empty():
    assert label_empty([0, 0, 0]) == 1
    assert label_empty([0, 1, 0]) == 0
    assert label_empty([]) == 1


def test_utterance_tokens_round_trip():
    utt = Utterance.from_words("u", ["Hello", "world"], VOCAB)
    assert detokenize(utt.tokens, VOCAB) == list(utt.words) == ["hello", "world"]
