"""Segmented-corpus ingestion, BMES conversion, splitting and OOV bookkeeping.

A segmented sentence is a plain ``list[str]`` of non-empty words; a corpus is
a list of those. Label sequences are lists of ``"B" | "M" | "E" | "S"``.
"""
import io
from dataclasses import dataclass

import numpy as np

from switchseg import LABELS
from switchseg.errors import FormatError, InvalidInputError
from switchseg.numerics import make_rng

LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}
DEFAULT_MAX_LEN = 300


def load_mapping(stream):
    """Character mapping: one ``src<TAB>dst`` pair of single characters per line."""
    mapping = {}
    for lineno, line in enumerate(decoded_lines(stream), 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or len(parts[0]) != 1 or len(parts[1]) != 1:
            raise FormatError("expected two tab-separated characters", lineno)
        mapping[parts[0]] = parts[1]
    return mapping


def decoded_lines(stream):
    for lineno, line in enumerate(stream, 1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise FormatError(f"invalid UTF-8 ({e.reason})", lineno) from None
        yield line


def read_segmented(stream, mapping=None):
    """Read one whitespace-segmented sentence per line; blank lines skipped.

    ``stream`` may yield ``str`` or ``bytes`` lines (bytes are decoded as
    strict UTF-8). ``mapping`` is applied per character before splitting.
    """
    corpus = []
    for line in decoded_lines(stream):
        if mapping:
            line = "".join(mapping.get(ch, ch) for ch in line)
        words = line.split()
        if words:
            corpus.append(words)
    return corpus


def read_segmented_file(path, mapping=None):
    with open(path, "rb") as f:
        return read_segmented(f, mapping)


def write_segmented(corpus, stream):
    for words in corpus:
        stream.write(" ".join(words) + "\n")


def dumps_segmented(corpus):
    buf = io.StringIO()
    write_segmented(corpus, buf)
    return buf.getvalue()


def chars_of(words):
    return "".join(words)


def to_bmes(words):
    labels = []
    for w in words:
        if len(w) == 1:
            labels.append("S")
        else:
            labels.extend(["B"] + ["M"] * (len(w) - 2) + ["E"])
    return labels


def label_ids(labels):
    return [LABEL_INDEX[label] if isinstance(label, str) else int(label) for label in labels]


def from_bmes(chars, labels):
    """Words from characters and BMES labels (strings or label ids).

    Invalid sequences are repaired: a word opens at every B or S and closes
    at every E or S, before the next B/S, or at the end.
    """
    if len(chars) != len(labels):
        raise InvalidInputError(f"{len(chars)} characters but {len(labels)} labels")
    words, cur = [], ""
    for ch, label in zip(chars, labels):
        if not isinstance(label, str):
            label = LABELS[label]
        if label == "B":
            if cur:
                words.append(cur)
            cur = ch
        elif label == "M":
            cur += ch
        elif label == "E":
            words.append(cur + ch)
            cur = ""
        elif label == "S":
            if cur:
                words.append(cur)
            words.append(ch)
            cur = ""
        else:
            raise InvalidInputError(f"unknown label {label!r}")
    if cur:
        words.append(cur)
    return words


def split_long(words, max_len=DEFAULT_MAX_LEN):
    """Cut a training sentence into pieces of at most ``max_len`` characters.

    Cuts fall on gold word boundaries; a single word longer than
    ``max_len`` is kept intact in its own piece.
    """
    pieces, cur, size = [], [], 0
    for w in words:
        if cur and size + len(w) > max_len:
            pieces.append(cur)
            cur, size = [], 0
        cur.append(w)
        size += len(w)
    if cur:
        pieces.append(cur)
    return pieces


def split_train_dev(corpus, fraction=0.1, seed=0):
    """Random dev hold-out of ``round(fraction * N)`` sentences; order kept."""
    n = len(corpus)
    if n == 0:
        raise InvalidInputError("cannot split an empty corpus")
    n_dev = int(np.floor(fraction * n + 0.5))
    dev_idx = set(make_rng(seed).permutation(n)[:n_dev].tolist())
    train = [s for i, s in enumerate(corpus) if i not in dev_idx]
    dev = [s for i, s in enumerate(corpus) if i in dev_idx]
    return train, dev


def word_dictionary(corpus):
    return {w for words in corpus for w in words}


def oov_words(train, gold):
    """Gold word types never seen as words in ``train``, and their token rate."""
    known = word_dictionary(train)
    total = oov = 0
    types = set()
    for words in gold:
        for w in words:
            total += 1
            if w not in known:
                oov += 1
                types.add(w)
    return types, (oov / total if total else 0.0)


@dataclass
class CorpusStats:
    tokens: int
    chars: int
    dict_size: int
    char_types: int
    sentences: int
    oov_rate: float = None

    HEADER = ("tokens", "chars", "dict_size", "char_types", "sentences", "oov_rate")

    def tsv_row(self, name=""):
        oov = "-" if self.oov_rate is None else f"{self.oov_rate:.4f}"
        vals = [self.tokens, self.chars, self.dict_size, self.char_types, self.sentences]
        return "\t".join([name] + [str(v) for v in vals] + [oov])


def corpus_stats(corpus, train=None):
    chars = [ch for words in corpus for w in words for ch in w]
    stats = CorpusStats(
        tokens=sum(len(words) for words in corpus),
        chars=len(chars),
        dict_size=len(word_dictionary(corpus)),
        char_types=len(set(chars)),
        sentences=len(corpus),
    )
    if train is not None:
        stats.oov_rate = oov_words(train, corpus)[1]
    return stats


def stats_tsv(rows):
    """``rows``: iterable of ``(name, CorpusStats)``."""
    lines = ["\t".join(("corpus",) + CorpusStats.HEADER)]
    lines += [s.tsv_row(name) for name, s in rows]
    return "\n".join(lines) + "\n"
