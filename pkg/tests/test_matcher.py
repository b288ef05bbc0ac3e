import numpy as np
import pandas as pd
import pytest

from biasfilter.errors import InvalidPhrase
from biasfilter.tools import matcher
from biasfilter.tools.core_types import Phrase, Vocab

VOCAB = Vocab.from_characters("abc")


def count_occurrences(pattern, sequence):
    """Direct scan: number of (possibly overlapping) occurrences of pattern in sequence."""
    n = len(pattern)
    return sum(
        tuple(sequence[i : i + n]) == tuple(pattern) for i in range(len(sequence) - n + 1)
    )


def longest_live_prefix(pattern, sequence):
    """Longest proper prefix of pattern that is a suffix of sequence."""
    for length in range(len(pattern) - 1, 0, -1):
        if len(sequence) >= length and tuple(sequence[-length:]) == tuple(pattern[:length]):
            return length
    return 0


def test_prefix_function():
    assert matcher.prefix_function([1, 2, 1, 2, 3]) == [0, 0, 1, 2, 0]
    assert matcher.prefix_function([1, 1, 1]) == [0, 1, 2]
    assert matcher.prefix_function("abacaba") == [0, 0, 1, 0, 1, 2, 3]


def test_build_table_from_phrase_ignores_eos():
    phrase = Phrase.from_words(["aba"], VOCAB)
    table = matcher.build_table(phrase)
    assert table.phrase_tokens == phrase.match_tokens
    assert table.backup == (0, 0, 1)


def test_build_table_empty_phrase():
    with pytest.raises(InvalidPhrase):
        matcher.build_table(Phrase.empty(VOCAB))
    with pytest.raises(InvalidPhrase):
        matcher.build_table([])


def test_step_trace():
    tables = [matcher.build_table([1, 2])]
    state = matcher.MatchState.zero(1)

    state, extended, completions = matcher.step(state, tables, 1)
    assert state.lengths == (1,) and extended and completions == []

    state, extended, completions = matcher.step(state, tables, 2)
    assert state.lengths == (0,) and not extended and completions == [0]
    assert state.completed_total == 2

    state, extended, completions = matcher.step(state, tables, 3)
    assert state.lengths == (0,) and not extended and completions == []


def test_overlapping_occurrences_are_counted():
    tables = [matcher.build_table([1, 1])]
    state = matcher.recompute(tables, [1, 1, 1])
    # "11" occurs at positions 0 and 1
    assert state.completed_total == 4
    assert state.lengths == (1,)


def test_completion_and_extension_in_one_step():
    tables = [matcher.build_table([1, 2]), matcher.build_table([2, 3])]
    state = matcher.recompute(tables, [1])
    state, extended, completions = matcher.step(state, tables, 2)
    assert completions == [0]
    assert extended
    assert state.lengths == (0, 1)


def test_step_checks_table_count():
    with pytest.raises(ValueError):
        matcher.step(matcher.MatchState.zero(2), [matcher.build_table([1])], 1)


def test_random_step_folding_equals_oracles():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n_phrases = int(rng.integers(1, 9))
        phrases = [
            tuple(int(t) for t in rng.integers(0, 3, size=rng.integers(1, 5)))
            for _ in range(n_phrases)
        ]
        sequence = [int(t) for t in rng.integers(0, 3, size=rng.integers(0, 51))]
        tables = [matcher.build_table(p) for p in phrases]

        state = matcher.MatchState.zero(n_phrases)
        for token in sequence:
            state, _, _ = matcher.step(state, tables, token)

        assert state == matcher.recompute(tables, sequence)
        expected_total = sum(count_occurrences(p, sequence) * len(p) for p in phrases)
        assert state.completed_total == expected_total
        assert state.lengths == tuple(longest_live_prefix(p, sequence) for p in phrases)


def test_tables_to_df():
    phrases = [Phrase.from_words(["ab"], VOCAB), Phrase.from_words(["aa"], VOCAB)]
    df = matcher.tables_to_df([matcher.build_table(p) for p in phrases], phrases)
    assert list(df.columns) == ["phrase", "tokens", "backup"]
    assert list(df["phrase"]) == ["ab", "aa"]
    assert list(df["backup"]) == ["0 0", "0 1"]
    by_text = matcher.tables_to_df([matcher.build_table(p) for p in phrases], ["ab", "aa"])
    pd.testing.assert_frame_equal(by_text, df)
