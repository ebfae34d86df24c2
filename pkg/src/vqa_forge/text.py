"""Tokenization, frequency-ranked vocabulary and left-padded encoding."""
from collections import Counter

import numpy as np

from .errors import BoundsError, FormatError, ParameterError

PUNCTUATION = '!"#$%&()*+,-./:;<=>?@[\\]^_`{|}~'
PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"

_PUNCT_TABLE = str.maketrans({c: " " for c in PUNCTUATION})


def tokenize(raw):
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return raw.lower().translate(_PUNCT_TABLE).split()


class Vocabulary:
    """Word/index mapping with PAD at 0 and UNK at 1.

    Immutable once built; use :meth:`build` or :meth:`load` to create one.
    """

    def __init__(self, words):
        words = list(words)
        if words[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise FormatError("vocabulary must start with the <pad> and <unk> sentinels")
        self._words = tuple(words)
        self._index = {w: i for i, w in enumerate(words)}
        if len(self._index) != len(words):
            raise FormatError("vocabulary contains duplicate words")

    @classmethod
    def build(cls, corpus, size):
        """Keep PAD, UNK and the ``size - 2`` most frequent tokens of ``corpus``.

        ``corpus`` yields raw strings or pre-tokenized lists. Frequency ties go
        to the word seen first.
        """
        if size < 3:
            raise ParameterError(f"vocabulary size must be at least 3, got {size}")
        counts = Counter()
        first_seen = {}
        for text in corpus:
            tokens = tokenize(text) if isinstance(text, str) else text
            for tok in tokens:
                if tok not in first_seen:
                    first_seen[tok] = len(first_seen)
                counts[tok] += 1
        for sentinel in (PAD_TOKEN, UNK_TOKEN):
            counts.pop(sentinel, None)
        ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
        return cls([PAD_TOKEN, UNK_TOKEN] + ranked[: size - 2])

    def __len__(self):
        return len(self._words)

    @property
    def size(self):
        return len(self._words)

    @property
    def words(self):
        return self._words

    def __contains__(self, word):
        return word in self._index

    def index(self, word):
        return self._index.get(word, UNK)

    def decode(self, index):
        if not 0 <= index < len(self._words):
            raise BoundsError(f"index {index} outside vocabulary of size {len(self._words)}")
        return self._words[index]

    def encode(self, tokens, maxlen):
        """Return ``(indices, mask)`` of length ``maxlen``, left-padded with PAD.

        Longer inputs keep their last ``maxlen`` tokens.
        """
        if maxlen < 1:
            raise ParameterError(f"maxlen must be at least 1, got {maxlen}")
        ids = [self.index(t) for t in tokens][-maxlen:]
        row = np.zeros(maxlen, dtype=np.int64)
        mask = np.zeros(maxlen, dtype=bool)
        if ids:
            row[maxlen - len(ids):] = ids
            mask[maxlen - len(ids):] = True
        return row, mask

    def encode_batch(self, token_lists, maxlen):
        rows = np.zeros((len(token_lists), maxlen), dtype=np.int64)
        masks = np.zeros((len(token_lists), maxlen), dtype=bool)
        for i, tokens in enumerate(token_lists):
            rows[i], masks[i] = self.encode(tokens, maxlen)
        return rows, masks

    def one_hot(self, word):
        v = np.zeros(len(self._words))
        v[self.index(word)] = 1.0
        return v

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for w in self._words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="\n") as fh:
            words = fh.read().split("\n")
        if words and words[-1] == "":
            words.pop()
        return cls(words)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._words == other._words

    def __repr__(self):
        return f"Vocabulary(size={len(self._words)})"


def build_vocabulary(corpus, size):
    return Vocabulary.build(corpus, size)
