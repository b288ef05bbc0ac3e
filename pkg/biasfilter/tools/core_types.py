# coding: utf-8
r"""
Vocabulary, phrases and utterances shared by all biasfilter components, together with
tokenization and the ground-truth labeling of sampled phrases.

Tokenization is character level: every word is split into the longest matching vocabulary
units (single characters in a plain character vocabulary) and consecutive words are joined by
the word separator token.
"""
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from biasfilter.errors import InvalidPhrase, UnknownSymbol

SOS = "<sos>"
EOS = "<eos>"
SEPARATOR = "<sp>"

RESERVED = (SOS, EOS)
SOS_ID = 0
EOS_ID = 1


@dataclass(frozen=True)
class Vocab:
    r"""
    Bijective map between token ids and token strings.

    Ids 0 and 1 are reserved for <sos> and <eos>. The word separator is an ordinary entry that
    tokenization emits between words.
    """

    entries: Tuple[str, ...]
    _ids: dict = field(init=False, repr=False, compare=False)
    _max_unit: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.entries[:2]) != RESERVED:
            raise ValueError(f"The first two vocabulary entries have to be {RESERVED}.")
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("Vocabulary entries are not unique.")
        if SEPARATOR not in self.entries:
            raise ValueError(f"Vocabulary misses the word separator '{SEPARATOR}'.")
        ids = {token: i for i, token in enumerate(self.entries)}
        units = [t for t in self.entries if t not in RESERVED and t != SEPARATOR]
        object.__setattr__(self, "_ids", ids)
        object.__setattr__(self, "_max_unit", max((len(u) for u in units), default=1))

    @classmethod
    def from_characters(cls, characters):
        r"""
        Builds a character vocabulary: reserved ids, separator, then the sorted characters.

        Parameters
        ----------
        characters : iterable of str
            Characters (or words, whose characters are collected)

        Returns
        -------
        Vocab
        """
        chars = sorted(set("".join(characters)))
        return cls(RESERVED + (SEPARATOR,) + tuple(chars))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, token):
        return token in self._ids

    @property
    def sos_id(self):
        return SOS_ID

    @property
    def eos_id(self):
        return EOS_ID

    @property
    def separator_id(self):
        return self._ids[SEPARATOR]

    def id(self, token):
        return self._ids[token]

    def token(self, token_id):
        return self.entries[token_id]

    def _tokenize_word(self, word):
        ids = []
        position = 0
        while position < len(word):
            for size in range(min(self._max_unit, len(word) - position), 0, -1):
                unit = word[position : position + size]
                if unit in self._ids and unit not in RESERVED and unit != SEPARATOR:
                    ids.append(self._ids[unit])
                    position += size
                    break
            else:
                raise UnknownSymbol(
                    f"Character '{word[position]}' of word '{word}' is not in the vocabulary."
                )
        return ids


def tokenize(text, vocab):
    r"""
    Maps a word sequence to token ids.

    Parameters
    ----------
    text : sequence of str
        Words. Words must not be empty.
    vocab : Vocab

    Returns
    -------
    list of int
    """
    tokens = []
    for i, word in enumerate(text):
        if not word:
            raise UnknownSymbol("Empty words cannot be tokenized.")
        if i > 0:
            tokens.append(vocab.separator_id)
        tokens.extend(vocab._tokenize_word(word))
    return tokens


def detokenize(tokens, vocab):
    r"""
    Inverse of :func:`tokenize`. Reserved tokens are skipped.

    Parameters
    ----------
    tokens : sequence of int
    vocab : Vocab

    Returns
    -------
    list of str
        Words
    """
    words = []
    current = []
    for token in tokens:
        if token in (vocab.sos_id, vocab.eos_id):
            continue
        if token == vocab.separator_id:
            words.append("".join(current))
            current = []
        else:
            current.append(vocab.token(token))
    words.append("".join(current))
    return [word for word in words if word]


@dataclass(frozen=True)
class Phrase:
    r"""
    Candidate biasing phrase.

    `tokens` excludes <sos> and ends with <eos>, so the empty phrase has the single token <eos>.
    """

    words: Tuple[str, ...]
    tokens: Tuple[int, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InvalidPhrase("A phrase has at least the <eos> token.")

    @classmethod
    def from_words(cls, words, vocab):
        words = tuple(word.lower() for word in words)
        return cls(words, tuple(tokenize(words, vocab)) + (vocab.eos_id,))

    @classmethod
    def empty(cls, vocab=None):
        return cls((), (vocab.eos_id if vocab is not None else EOS_ID,))

    @property
    def length(self):
        return len(self.tokens)

    @property
    def match_tokens(self):
        """Tokens used for matching during search, i.e. without the terminal <eos>."""
        return self.tokens[:-1]

    @property
    def text(self):
        return " ".join(self.words)

    @property
    def is_empty(self):
        return not self.words


@dataclass(frozen=True, eq=False)
class Utterance:
    r"""
    Reference transcript with the encoder features it was produced from.

    `features` is a T x d matrix standing in for the output of a frozen ASR encoder.
    """

    id: str
    words: Tuple[str, ...]
    tokens: Tuple[int, ...]
    features: Optional[np.ndarray] = None

    @classmethod
    def from_words(cls, utt_id, words, vocab, features=None):
        words = tuple(word.lower() for word in words)
        return cls(utt_id, words, tuple(tokenize(words, vocab)), features)


def contains_segment(words, segment):
    r"""
    Returns True if `segment` occurs as contiguous subsequence of `words`.

    Parameters
    ----------
    words : sequence of str
    segment : sequence of str
        Non-empty

    Returns
    -------
    bool
    """
    words = [w.lower() for w in words]
    segment = [w.lower() for w in segment]
    n = len(segment)
    first = segment[0]
    for start in range(len(words) - n + 1):
        if words[start] == first and words[start : start + n] == segment:
            return True
    return False


def label_phrase(phrase, utt):
    r"""
    Labels a sampled phrase against the transcript of an utterance.

    Parameters
    ----------
    phrase : Phrase or sequence of str
        Non-empty phrase
    utt : Utterance

    Returns
    -------
    int
        1 if the phrase words are a segment of the transcript, else 0.
    """
    words = phrase.words if isinstance(phrase, Phrase) else tuple(phrase)
    if not words:
        raise InvalidPhrase("The empty phrase is labeled by label_empty.")
    return int(contains_segment(utt.words, words))


def label_empty(other_labels: Sequence[int]):
    """The empty phrase is positive iff no other sampled phrase is."""
    return int(not any(other_labels))
