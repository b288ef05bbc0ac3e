# coding: utf-8
r"""
Partial match tables and the per-hypothesis match state used by shallow-fusion biasing.

Every biasing phrase gets its own table (the classic KMP prefix function over the phrase's
match tokens). During search each hypothesis carries one partial match length per phrase and
advances all of them with every emitted token. Occurrences may overlap: after a completed match
the length falls back to the table entry of the full match, as in all-occurrences KMP search.
"""
from dataclasses import dataclass
from typing import Tuple

import pandas as pd

from biasfilter.errors import InvalidPhrase


@dataclass(frozen=True)
class PartialMatchTable:
    r"""
    Backup table of one phrase.

    backup[k] is the length of the longest proper prefix of phrase_tokens[:k + 1] that is
    also a suffix of it.
    """

    phrase_tokens: Tuple[int, ...]
    backup: Tuple[int, ...]

    def __len__(self):
        return len(self.phrase_tokens)

    def advance(self, length, token):
        r"""
        KMP transition of a single phrase.

        Parameters
        ----------
        length : int
            Current partial match length, smaller than the phrase length
        token : int

        Returns
        -------
        length : int
            New length, may equal the phrase length (completed match).
        """
        pattern = self.phrase_tokens
        while length > 0 and pattern[length] != token:
            length = self.backup[length - 1]
        if pattern[length] == token:
            length += 1
        return length


def prefix_function(tokens):
    r"""
    Computes the prefix function (longest proper prefix which is also a suffix).

    Parameters
    ----------
    tokens : sequence

    Returns
    -------
    list of int
    """
    backup = [0] * len(tokens)
    length = 0
    for i in range(1, len(tokens)):
        while length > 0 and tokens[i] != tokens[length]:
            length = backup[length - 1]
        if tokens[i] == tokens[length]:
            length += 1
        backup[i] = length
    return backup


def build_table(phrase):
    r"""
    Builds the partial match table of a phrase.

    Parameters
    ----------
    phrase : Phrase or sequence of int
        A Phrase (matched without its terminal <eos>) or the match tokens themselves.

    Returns
    -------
    PartialMatchTable
    """
    tokens = tuple(phrase.match_tokens if hasattr(phrase, "match_tokens") else phrase)
    if not tokens:
        raise InvalidPhrase("Cannot build a partial match table for an empty phrase.")
    return PartialMatchTable(tokens, tuple(prefix_function(tokens)))


@dataclass(frozen=True)
class MatchState:
    r"""
    Partial match lengths of one hypothesis against the active phrase list.

    completed_total counts the tokens of all completed phrase occurrences so far.
    """

    lengths: Tuple[int, ...]
    completed_total: int = 0

    @classmethod
    def zero(cls, n_phrases):
        return cls((0,) * n_phrases, 0)

    @property
    def max_length(self):
        return max(self.lengths, default=0)


def step(state, tables, token):
    r"""
    Advances a match state by one token.

    Parameters
    ----------
    state : MatchState
    tables : sequence of PartialMatchTable
        One table per entry of state.lengths
    token : int

    Returns
    -------
    state : MatchState
        The new state, every length below its phrase length
    extended : bool
        True if the token leaves a live partial match into some phrase
    completions : list of int
        Indices of phrases completed by this token
    """
    if len(state.lengths) != len(tables):
        raise ValueError(
            f"Match state has {len(state.lengths)} entries but there are {len(tables)} tables."
        )
    lengths = []
    completions = []
    completed_total = state.completed_total
    for j, (length, table) in enumerate(zip(state.lengths, tables)):
        length = table.advance(length, token)
        if length == len(table):
            completions.append(j)
            completed_total += length
            length = table.backup[length - 1]
        lengths.append(length)

    new_state = MatchState(tuple(lengths), completed_total)
    return new_state, new_state.max_length > 0, completions


def recompute(tables, tokens):
    r"""
    Computes the match state of a token sequence from scratch.

    Parameters
    ----------
    tables : sequence of PartialMatchTable
    tokens : sequence of int

    Returns
    -------
    MatchState
    """
    state = MatchState.zero(len(tables))
    for token in tokens:
        state, _, _ = step(state, tables, token)
    return state


def tables_to_df(tables, phrases=None):
    r"""
    Tabulates partial match tables for inspection.

    Parameters
    ----------
    tables : sequence of PartialMatchTable
    phrases : sequence of Phrase or str, optional
        Used for the 'phrase' column. Defaults to the space separated token ids.

    Returns
    -------
    pd.DataFrame
        Columns 'phrase', 'tokens' and 'backup'
    """
    rows = []
    for i, table in enumerate(tables):
        tokens = " ".join(map(str, table.phrase_tokens))
        label = tokens if phrases is None else getattr(phrases[i], "text", phrases[i])
        rows.append(
            {
                "phrase": label,
                "tokens": tokens,
                "backup": " ".join(map(str, table.backup)),
            }
        )
    return pd.DataFrame(rows, columns=["phrase", "tokens", "backup"])
