"""The full tagger: embeddings -> Bi-Switch-LSTM -> switch-weighted emissions -> CRF.

Parameters live in one flat ``dict[str, ndarray]`` (see :data:`PARAM_DOC`);
that dict is what the optimizer updates and what checkpoints store.
"""
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from switchseg import crf
from switchseg.embeddings import PAD, InputEncoder, TaskTable, init_embedding
from switchseg.errors import ConfigError, InvalidInputError
from switchseg.lstm import LstmParams
from switchseg.numerics import dropout_mask, make_rng, xavier_uniform
from switchseg.switch import (
    NUM_LABELS,
    DirectionParams,
    emission_backward,
    emission_scores,
    force_switch_mode,
    init_direction,
    run_bidirectional,
    run_bidirectional_backward,
)

PARAM_DOC = {
    "emb.char": "(V_char, d_e) character embeddings",
    "emb.bigram": "(V_bigram, d_bi) bigram embeddings, absent when d_bi = 0",
    "emb.task": "(slots, d_m) task embeddings, absent in single-criterion mode",
    "{dir}.W": "(d_in, K, 4 d_h) input weights of the K cells, gates (i, f, g, o)",
    "{dir}.U": "(d_h, K, 4 d_h) recurrent weights",
    "{dir}.b": "(K, 4 d_h) gate biases",
    "{dir}.switch": "(K, d_in + d_h + d_m) switcher rows",
    "{dir}.proj": "(K, 4, d_h) per-cell emission projections",
    "crf.trans": "(4, 4) transitions, [prev, cur]",
    "crf.start / crf.stop": "(4,) boundary transitions, only with crf_boundary",
}
DIRECTIONS = ("fw", "bw")
EMBEDDING_PARAMS = ("emb.char", "emb.bigram")


@dataclass
class ModelConfig:
    k: int = 4
    d_e: int = 100
    d_bi: int = 100
    d_h: int = 100
    d_m: int = 20
    multi: bool = True
    task_slots: int = 8
    dropout: float = 0.2
    switch_mode: str = "normal"
    ablate: tuple = field(default_factory=tuple)
    crf_boundary: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        for name in ("d_e", "d_h"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_bi < 0 or (self.multi and self.d_m < 1):
            raise ConfigError("d_bi must be >= 0 and d_m >= 1 in multi-criteria mode")
        self.ablate = tuple(sorted(self.ablate))
        self.mode = force_switch_mode(self.switch_mode, self.ablate)

    @property
    def d_in(self):
        return self.d_e + self.d_bi

    @property
    def task_dim(self):
        return self.d_m if self.multi else 0

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    ids: np.ndarray       # (T, B)
    bigram_ids: np.ndarray
    lengths: np.ndarray   # (B,)

    @property
    def mask(self):
        return np.arange(self.ids.shape[0])[:, None] < self.lengths[None, :]


class SwitchSegModel:
    def __init__(self, config, char_vocab, bigram_vocab=None, seed=0, params=None,
                 task_names=None):
        self.config = config
        self.char_vocab = char_vocab
        self.bigram_vocab = bigram_vocab if config.d_bi > 0 else None
        if config.d_bi > 0 and bigram_vocab is None:
            raise ConfigError("d_bi > 0 requires a bigram vocabulary")
        rng = make_rng(seed)
        if params is None:
            params = self._init_params(rng)
        self.params = params
        self.tasks = None
        if config.multi:
            self.tasks = TaskTable(config.d_m, matrix=params["emb.task"], names=task_names)
        self.init_rng = rng

    def _init_params(self, rng):
        c = self.config
        p = {"emb.char": init_embedding(len(self.char_vocab), c.d_e, rng)}
        if c.d_bi > 0:
            p["emb.bigram"] = init_embedding(len(self.bigram_vocab), c.d_bi, rng)
        if c.multi:
            p["emb.task"] = np.zeros((c.task_slots, c.d_m))
        for d in DIRECTIONS:
            dp = init_direction(c.k, c.d_in, c.d_h, c.task_dim, rng)
            p[f"{d}.W"], p[f"{d}.U"], p[f"{d}.b"] = dp.cells.W, dp.cells.U, dp.cells.b
            p[f"{d}.switch"], p[f"{d}.proj"] = dp.switch, dp.proj
        p["crf.trans"] = xavier_uniform(NUM_LABELS, NUM_LABELS, rng)
        if c.crf_boundary:
            p["crf.start"] = np.zeros(NUM_LABELS)
            p["crf.stop"] = np.zeros(NUM_LABELS)
        return p

    def with_switch_mode(self, switch_mode, ablate=None):
        """A view of this model (shared parameters) with another switch mode."""
        cfg = replace(self.config, switch_mode=switch_mode,
                      ablate=self.config.ablate if ablate is None else tuple(ablate))
        view = SwitchSegModel(cfg, self.char_vocab, self.bigram_vocab, params=self.params,
                              task_names=self.task_names)
        view.tasks = self.tasks
        return view

    # -- tasks ---------------------------------------------------------------

    def register_task(self, name=None, rng=None):
        if self.tasks is None:
            raise ConfigError("single-criterion model has no task table")
        tid = self.tasks.register(rng if rng is not None else self.init_rng, name)
        self.params["emb.task"] = self.tasks.matrix
        return tid

    def task_id(self, task):
        """Resolve a task name or id; ``None`` in single-criterion mode."""
        if self.tasks is None:
            return None
        if isinstance(task, str):
            return self.tasks.id_of(task)
        if task is None:
            raise InvalidInputError("multi-criteria model needs a task")
        self.tasks.lookup(task)
        return int(task)

    @property
    def task_names(self):
        return list(self.tasks.names) if self.tasks is not None else []

    # -- views -----------------------------------------------------------------

    def direction(self, d, params=None):
        p = self.params if params is None else params
        return DirectionParams(LstmParams(p[f"{d}.W"], p[f"{d}.U"], p[f"{d}.b"]),
                               p[f"{d}.switch"], p[f"{d}.proj"])

    def crf_params(self, params=None):
        p = self.params if params is None else params
        return crf.CrfParams(p["crf.trans"], p.get("crf.start"), p.get("crf.stop"))

    def encoder(self):
        return InputEncoder(self.char_vocab, self.params["emb.char"], self.bigram_vocab,
                            self.params.get("emb.bigram"))

    def param_count(self, include_embeddings=False):
        """Model size; task rows count only when registered."""
        n = 0
        for name, arr in self.params.items():
            if name in EMBEDDING_PARAMS and not include_embeddings:
                continue
            if name == "emb.task":
                n += len(self.tasks) * self.config.d_m
            else:
                n += arr.size
        return n

    # -- batching --------------------------------------------------------------

    def encode_batch(self, sentences):
        """``sentences``: list of non-empty character strings."""
        if not sentences:
            raise InvalidInputError("empty batch")
        lengths = np.array([len(s) for s in sentences])
        if np.any(lengths == 0):
            raise InvalidInputError("empty sentence in batch")
        T, B = int(lengths.max()), len(sentences)
        ids = np.full((T, B), PAD, dtype=np.int64)
        bids = np.full((T, B), PAD, dtype=np.int64) if self.bigram_vocab is not None else None
        enc = self.encoder()
        for b, s in enumerate(sentences):
            cid, bid = enc.encode(s)
            ids[: len(s), b] = cid
            if bids is not None:
                bids[: len(s), b] = bid
        return Batch(ids, bids, lengths)

    def _inputs(self, batch, params):
        X = params["emb.char"][batch.ids]
        if batch.bigram_ids is not None:
            X = np.concatenate([X, params["emb.bigram"][batch.bigram_ids]], axis=-1)
        return X

    def _task_rows(self, task_id, B, params):
        if not self.config.multi:
            return None
        if task_id is None:
            raise InvalidInputError("multi-criteria model needs a task id")
        self.tasks.lookup(task_id)
        return np.broadcast_to(params["emb.task"][task_id], (B, self.config.d_m))

    def _onehots(self, batch, train, rng):
        mode = self.config.mode
        if not mode.forced(train):
            return None
        if rng is None:
            raise InvalidInputError("random switch mode needs an rng")
        shape = batch.ids.shape
        return (rng.integers(self.config.k, size=shape), rng.integers(self.config.k, size=shape))

    def forward(self, batch, task_id, train=False, rng=None, params=None):
        """Emission scores and everything backward needs."""
        p = self.params if params is None else params
        X = self._inputs(batch, p)
        drop = None
        if train and self.config.dropout > 0:
            if rng is None:
                raise InvalidInputError("training-mode dropout needs an rng")
            drop = dropout_mask(self.config.dropout, X.shape, rng)
            X = X * drop
        em = self._task_rows(task_id, X.shape[1], p)
        fw, bw = self.direction("fw", p), self.direction("bw", p)
        onehots = self._onehots(batch, train, rng)
        Hf, Hb, Af, Ab, cache = run_bidirectional(X, batch.lengths, fw, bw, em,
                                                  self.config.mode, onehots)
        D = emission_scores(Hf, Af, fw.proj) + emission_scores(Hb, Ab, bw.proj)
        return D, (Hf, Hb, Af, Ab, cache, drop, fw, bw)

    def loss_and_grad(self, batch, gold, task_id, train=True, rng=None, params=None,
                      normalize=True):
        """Negative log-likelihood of ``gold`` (T, B label ids) and its gradient.

        With ``normalize`` the loss (and gradient) is divided by the number of
        characters in the batch. Returns ``(loss, per_sentence_nll, grads)``.
        """
        p = self.params if params is None else params
        D, (Hf, Hb, Af, Ab, cache, drop, fw, bw) = self.forward(batch, task_id, train, rng, p)
        ntok = int(batch.lengths.sum())
        scale = 1.0 / ntok if normalize else 1.0
        nll, dD, gcrf = crf.batch_nll(D, batch.lengths, self.crf_params(p), gold, scale)
        loss = float(nll.sum() * scale)

        grads = {"crf.trans": gcrf.trans}
        if gcrf.start is not None:
            grads["crf.start"], grads["crf.stop"] = gcrf.start, gcrf.stop
        dHf, dAf, grads["fw.proj"] = emission_backward(dD, Hf, Af, fw.proj)
        dHb, dAb, grads["bw.proj"] = emission_backward(dD, Hb, Ab, bw.proj)
        dX, gf, gb, dem = run_bidirectional_backward(cache, dHf, dHb, dAf, dAb, fw, bw,
                                                     self.config.mode)
        for d, g in (("fw", gf), ("bw", gb)):
            grads[f"{d}.W"], grads[f"{d}.U"], grads[f"{d}.b"] = g.cells.W, g.cells.U, g.cells.b
            grads[f"{d}.switch"] = g.switch
        if drop is not None:
            dX = dX * drop
        d_e = self.config.d_e
        g_char = np.zeros_like(p["emb.char"])
        np.add.at(g_char, batch.ids.ravel(), dX[..., :d_e].reshape(-1, d_e))
        grads["emb.char"] = g_char
        if batch.bigram_ids is not None:
            g_bi = np.zeros_like(p["emb.bigram"])
            np.add.at(g_bi, batch.bigram_ids.ravel(), dX[..., d_e:].reshape(-1, self.config.d_bi))
            grads["emb.bigram"] = g_bi
        if self.config.multi:
            g_task = np.zeros_like(p["emb.task"])
            if dem is not None:
                g_task[task_id] = dem.sum(0)
            grads["emb.task"] = g_task
        return loss, nll, grads

    def predict(self, sentences, task, rng=None, return_trace=False):
        """Viterbi label ids per sentence (and optionally per-sentence switch traces).

        A trace is ``(A_fw, A_bw)``, each ``(n, K)``.
        """
        tid = self.task_id(task)
        batch = self.encode_batch(sentences)
        D, (_, _, Af, Ab, *_rest) = self.forward(batch, tid, train=False, rng=rng)
        labels = crf.batch_viterbi(D, batch.lengths, self.crf_params())
        if not return_trace:
            return labels
        traces = [(Af[:n, b].copy(), Ab[:n, b].copy()) for b, n in enumerate(batch.lengths)]
        return labels, traces
