"""Versioned single-file checkpoint container.

Layout (all integers little-endian)::

    magic    8 bytes  b"SWSEGCK\\0"
    version  u32
    hlen     u64      byte length of the header
    header   hlen     UTF-8 JSON, sorted keys, no insignificant whitespace
    payload           raw tensors back to back

The header holds ``tensors`` (a manifest of ``name``, ``shape``, ``dtype``
(always ``"<f8"``), ``offset`` from the payload start and ``nbytes``), the
model and training configs, the vocabularies, task names and the best dev
metric. Tensors are written in sorted name order, so save -> load -> save
reproduces the file byte for byte.
"""
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from switchseg.embeddings import Vocab
from switchseg.errors import FormatError
from switchseg.model import ModelConfig, SwitchSegModel

MAGIC = b"SWSEGCK\0"
VERSION = 1
DTYPE = "<f8"


@dataclass
class Checkpoint:
    params: dict
    model_config: dict
    char_tokens: list
    bigram_tokens: list = None
    task_names: list = field(default_factory=list)
    best_metric: float = None
    train_config: dict = None
    meta: dict = field(default_factory=dict)


def _header(ck):
    tensors, offset = [], 0
    for name in sorted(ck.params):
        arr = ck.params[name]
        nbytes = int(arr.size) * 8
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": DTYPE,
                        "offset": offset, "nbytes": nbytes})
        offset += nbytes
    return {"tensors": tensors, "model_config": ck.model_config,
            "char_tokens": ck.char_tokens, "bigram_tokens": ck.bigram_tokens,
            "task_names": ck.task_names, "best_metric": ck.best_metric,
            "train_config": ck.train_config, "meta": ck.meta}


def to_bytes(ck):
    header = json.dumps(_header(ck), sort_keys=True, separators=(",", ":"),
                        ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(header)), header]
    for name in sorted(ck.params):
        parts.append(np.ascontiguousarray(ck.params[name], dtype=DTYPE).tobytes())
    return b"".join(parts)


def from_bytes(data):
    if data[:8] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    if len(data) < 20:
        raise FormatError("truncated checkpoint")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from None
    base = 20 + hlen
    params = {}
    for t in header["tensors"]:
        if t["dtype"] != DTYPE:
            raise FormatError(f"unsupported tensor dtype {t['dtype']}")
        start = base + t["offset"]
        if start + t["nbytes"] > len(data):
            raise FormatError(f"tensor {t['name']} runs past end of file")
        raw = np.frombuffer(data, dtype=DTYPE, count=t["nbytes"] // 8, offset=start)
        params[t["name"]] = raw.astype(np.float64).reshape(t["shape"])
    return Checkpoint(params, header["model_config"], header["char_tokens"],
                      header["bigram_tokens"], header["task_names"], header["best_metric"],
                      header["train_config"], header.get("meta") or {})


def save_checkpoint(ck, path):
    with open(path, "wb") as f:
        f.write(to_bytes(ck))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return from_bytes(f.read())


def from_model(model, best_metric=None, train_config=None, meta=None):
    mc = model.config.to_dict()
    mc["ablate"] = list(mc["ablate"])
    return Checkpoint({k: np.array(v) for k, v in model.params.items()}, mc,
                      list(model.char_vocab.tokens),
                      list(model.bigram_vocab.tokens) if model.bigram_vocab is not None else None,
                      model.task_names, best_metric, train_config, dict(meta or {}))


def to_model(ck):
    mc = dict(ck.model_config)
    mc["ablate"] = tuple(mc.get("ablate", ()))
    config = ModelConfig(**mc)
    char_vocab = Vocab(list(ck.char_tokens))
    bigram_vocab = Vocab(list(ck.bigram_tokens)) if ck.bigram_tokens is not None else None
    params = {k: np.array(v) for k, v in ck.params.items()}
    return SwitchSegModel(config, char_vocab, bigram_vocab, params=params,
                          task_names=ck.task_names)


def tensor_digest(arrays):
    """sha256 over ``(name, little-endian bytes)`` pairs in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arrays[name], dtype=DTYPE).tobytes())
    return h.hexdigest()
