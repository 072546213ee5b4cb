"""Vocabularies, embedding tables, pre-trained vector loading and task table."""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from switchseg.errors import FormatError, InvalidInputError
from switchseg.numerics import xavier_uniform

UNK, PAD = 0, 1
UNK_TOKEN, PAD_TOKEN = "<unk>", "<pad>"


@dataclass
class Vocab:
    tokens: list                      # id -> token, reserved first
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index and self.index[token] > PAD

    def id(self, token):
        return self.index.get(token, UNK)

    def ids(self, tokens):
        get = self.index.get
        return [get(t, UNK) for t in tokens]


def _sentences(corpora):
    for corpus in corpora:
        for sent in ([corpus] if isinstance(corpus, str) else corpus):
            yield sent if isinstance(sent, str) else "".join(sent)


def bigrams(chars):
    """Bigram tokens for every position; position 0 pairs with PAD."""
    return [(chars[t - 1] if t else PAD_TOKEN) + chars[t] for t in range(len(chars))]


def build_vocab(corpora, min_count=1, unit="char"):
    """One shared vocabulary over every corpus.

    ``corpora`` is a list of corpora; a corpus is a list of sentences (each a
    string or a list of words) or a single string. ``unit`` is ``"char"`` or
    ``"bigram"``. Ids are assigned by descending frequency, ties by first
    occurrence; tokens rarer than ``min_count`` are left out (they map to UNK).
    """
    counts = Counter()
    for sent in _sentences(corpora):
        counts.update(sent if unit == "char" else bigrams(sent))
    if not counts:
        raise InvalidInputError("cannot build a vocabulary from empty corpora")
    kept = [tok for tok, n in sorted(counts.items(), key=lambda kv: -kv[1]) if n >= min_count]
    return Vocab([UNK_TOKEN, PAD_TOKEN] + kept, {t: counts[t] for t in kept})


def init_embedding(rows, dim, rng):
    """Rows ~ U(-sqrt(3/d), sqrt(3/d)), i.e. unit expected squared norm."""
    bound = np.sqrt(3.0 / dim)
    return rng.uniform(-bound, bound, size=(rows, dim))


@dataclass
class InputEncoder:
    """Maps character strings to input vectors ``[unigram ; bigram]``."""
    chars: Vocab
    char_table: np.ndarray
    bigram_vocab: Vocab = None
    bigram_table: np.ndarray = None

    @property
    def use_bigram(self):
        return self.bigram_table is not None

    @property
    def dim(self):
        d = self.char_table.shape[1]
        return d + (self.bigram_table.shape[1] if self.use_bigram else 0)

    def encode(self, chars):
        """``(char ids, bigram ids or None)`` for one string."""
        cid = self.chars.ids(chars)
        bid = self.bigram_vocab.ids(bigrams(chars)) if self.use_bigram else None
        return cid, bid


def input_vector(chars, t, encoder):
    """Input vector at 0-based position ``t`` of ``chars``."""
    if not 0 <= t < len(chars):
        raise InvalidInputError(f"position {t} outside [0, {len(chars)})")
    cid, bid = encoder.encode(chars)
    vec = encoder.char_table[cid[t]]
    if encoder.use_bigram:
        vec = np.concatenate([vec, encoder.bigram_table[bid[t]]])
    return vec


def load_pretrained_vectors(stream, vocab, table):
    """Overwrite ``table`` rows from word2vec-style text vectors.

    Optional first line ``"<count> <dim>"``; then ``token v1 ... vdim`` per
    line. Tokens outside ``vocab`` are skipped. Returns ``(matched, len(vocab))``.
    """
    dim = table.shape[1]
    matched = set()
    for lineno, line in enumerate(stream, 1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("invalid UTF-8", lineno) from None
        parts = line.rstrip("\r\n").split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            if int(parts[1]) != dim:
                raise FormatError(f"header dim {parts[1]} != table dim {dim}", lineno)
            continue
        if len(parts) != dim + 1:
            raise FormatError(f"expected token + {dim} values, got {len(parts) - 1}", lineno)
        token = parts[0]
        try:
            values = np.array([float(p) for p in parts[1:]])
        except ValueError:
            raise FormatError("non-numeric vector component", lineno) from None
        if token in vocab:
            table[vocab.id(token)] = values
            matched.add(token)
    return len(matched), len(vocab)


class TaskTable:
    """Task id -> embedding row, with pre-allocated spare rows.

    ``matrix`` may be reallocated by :meth:`register` when the spare rows run
    out; holders of the old array must re-read ``matrix``.
    """

    def __init__(self, dim=20, slots=8, matrix=None, names=None):
        self.dim = dim
        self.matrix = np.zeros((slots, dim)) if matrix is None else matrix
        self.names = list(names or [])
        self.frozen = set()

    def __len__(self):
        return len(self.names)

    def register(self, rng, name=None):
        tid = len(self.names)
        if tid >= self.matrix.shape[0]:
            grown = np.zeros((max(1, 2 * self.matrix.shape[0]), self.dim))
            grown[: self.matrix.shape[0]] = self.matrix
            self.matrix = grown
        self.matrix[tid] = xavier_uniform(1, self.dim, rng)[0]
        self.names.append(name if name is not None else f"task{tid}")
        return tid

    def lookup(self, tid):
        if not 0 <= tid < len(self.names):
            raise InvalidInputError(f"task id {tid} is not registered")
        return self.matrix[tid]

    def id_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidInputError(f"unknown task {name!r}") from None

    def freeze_all_except(self, tid):
        self.frozen = set(range(len(self.names))) - {tid}

    def trainable_rows(self):
        return [i for i in range(len(self.names)) if i not in self.frozen]
