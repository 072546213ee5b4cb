"""Switched LSTM layer: K candidate cells mixed per step by a softmax switcher.

Per direction, at step t every cell k steps from the shared mixed state::

    s_k, c_k = LSTM_k(x_t, h_{t-1}, c_{t-1})
    a_t      = softmax_k( W_k . [x_t ; s_k ; e_m] )
    h_t      = sum_k a_tk s_k          c_t = sum_k a_tk c_k

and the label scores of both directions are switch-weighted projections::

    delta_t = sum_k a->_tk P->_k h->_t + sum_k a<-_tk P<-_k h<-_t

Arrays are time-major: ``(T, B, ...)``. Padding only ever follows the valid
prefix of a row, so padded steps never influence valid ones; callers mask
their outputs.
"""
from dataclasses import dataclass, field

import numpy as np

from switchseg.errors import InvalidInputError
from switchseg.lstm import LstmParams, init_lstm_params, lstm_step, lstm_step_backward
from switchseg.numerics import xavier_uniform

NUM_LABELS = 4
SWITCH_MODES = ("normal", "random_train", "random_test")
ABLATABLE = ("x", "s", "e_m")


@dataclass
class SwitchMode:
    """How the switch distribution is produced.

    ``random_train`` / ``random_test`` replace ``a_t`` by a uniformly drawn
    one-hot vector in that phase. ``ablate`` zeroes components of the
    switcher input.
    """
    kind: str = "normal"
    ablate: frozenset = field(default_factory=frozenset)

    def forced(self, train):
        return (self.kind == "random_train" and train) or (self.kind == "random_test" and not train)


def force_switch_mode(mode="normal", ablate=()):
    mode = mode.replace("-", "_")
    if mode not in SWITCH_MODES:
        raise InvalidInputError(f"unknown switch mode {mode!r}")
    ablate = frozenset(ablate)
    bad = ablate - set(ABLATABLE)
    if bad:
        raise InvalidInputError(f"cannot ablate {sorted(bad)}; choose from {ABLATABLE}")
    return SwitchMode(mode, ablate)


@dataclass
class DirectionParams:
    cells: LstmParams      # stacked: W (d_in, K, 4 d_h), U (d_h, K, 4 d_h), b (K, 4 d_h)
    switch: np.ndarray     # (K, d_in + d_h + d_m)
    proj: np.ndarray       # (K, |L|, d_h)

    @property
    def k(self):
        return self.switch.shape[0]

    @property
    def d_in(self):
        return self.cells.d_in

    @property
    def d_h(self):
        return self.cells.d_h

    @property
    def d_m(self):
        return self.switch.shape[1] - self.d_in - self.d_h


def init_direction(k, d_in, d_h, d_m, rng, num_labels=NUM_LABELS):
    if k < 1:
        raise InvalidInputError("K must be >= 1")
    cells = init_lstm_params(d_in, d_h, rng, k=k)
    switch = xavier_uniform(d_in + d_h + d_m, k, rng).T.copy()
    proj = np.ascontiguousarray(
        np.stack([xavier_uniform(d_h, num_labels, rng).T for _ in range(k)]))
    return DirectionParams(cells, switch, proj)


def _split_switch(W, d_in, d_h):
    return W[:, :d_in], W[:, d_in:d_in + d_h], W[:, d_in + d_h:]


def _switch_logits(x, s, em, W, ablate):
    """x (B, d_in), s (B, K, d_h), em (B, d_m) or None -> logits (B, K)."""
    d_in, d_h = x.shape[-1], s.shape[-1]
    Wx, Ws, Wm = _split_switch(W, d_in, d_h)
    logits = np.zeros((x.shape[0], W.shape[0]))
    if "x" not in ablate:
        logits += x @ Wx.T
    if "s" not in ablate:
        logits += np.einsum("bkd,kd->bk", s, Ws)
    if em is not None and "e_m" not in ablate:
        logits += em @ Wm.T
    return logits


def _softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def switch_scores(x, candidates, W, task_emb=None, ablate=frozenset()):
    """Switch distribution over K candidate states.

    ``x`` is ``(d_in,)`` or ``(B, d_in)``; ``candidates`` is ``(K, d_h)`` or
    ``(B, K, d_h)``; ``W`` is ``(K, d_in + d_h + d_m)``. ``task_emb`` must be
    given iff ``W`` has task columns.
    """
    x = np.asarray(x, dtype=float)
    s = np.asarray(candidates, dtype=float)
    single = x.ndim == 1
    if single:
        x, s = x[None], s[None]
        if task_emb is not None:
            task_emb = np.asarray(task_emb, dtype=float)[None]
    k, d_in, d_h = s.shape[1], x.shape[-1], s.shape[-1]
    if W.shape[0] != k:
        raise InvalidInputError(f"{k} candidates but switch has {W.shape[0]} rows")
    d_m = W.shape[1] - d_in - d_h
    if d_m < 0 or (d_m > 0) != (task_emb is not None):
        raise InvalidInputError("task embedding presence does not match switch weights")
    if task_emb is not None and task_emb.shape[-1] != d_m:
        raise InvalidInputError(f"task embedding dim {task_emb.shape[-1]} != {d_m}")
    a = _softmax_rows(_switch_logits(x, s, task_emb, W, frozenset(ablate)))
    return a[0] if single else a


@dataclass
class SwitchStepCache:
    x: np.ndarray
    s: np.ndarray
    c_cells: np.ndarray
    a: np.ndarray
    em: np.ndarray
    forced: bool
    cell_cache: object


def switch_lstm_step(x, state, params, task_emb=None, mode=None, onehot=None):
    """One switched step over a batch.

    ``x`` (B, d_in), ``state`` = (h, c) each (B, d_h), ``task_emb`` (B, d_m).
    ``onehot`` (B,) of cell indices overrides the switcher (random modes).
    Returns ``(h, c, a, cache)``.
    """
    ablate = mode.ablate if mode is not None else frozenset()
    if params.d_m > 0 and task_emb is None:
        raise InvalidInputError("multi-criteria switch requires a task embedding")
    if params.d_m == 0:
        task_emb = None
    (s, c_cells), cell_cache = lstm_step(x, state, params.cells)
    if onehot is not None:
        a = np.zeros((x.shape[0], params.k))
        a[np.arange(x.shape[0]), onehot] = 1.0
    else:
        a = _softmax_rows(_switch_logits(x, s, task_emb, params.switch, ablate))
    a3 = a[:, :, None]
    h = (a3 * s).sum(1)
    c = (a3 * c_cells).sum(1)
    cache = SwitchStepCache(x, s, c_cells, a, task_emb, onehot is not None, cell_cache)
    return h, c, a, cache


def switch_lstm_step_backward(cache, dh, dc, da_extra, params, grads, ablate=frozenset()):
    """Backward of :func:`switch_lstm_step`, accumulating into ``grads``.

    ``grads`` is a :class:`DirectionParams` of accumulators. Returns
    ``(dx, (dh_prev, dc_prev), d_task_emb)``.
    """
    s, c_cells, a = cache.s, cache.c_cells, cache.a
    da = da_extra + np.einsum("bkd,bd->bk", s, dh) + np.einsum("bkd,bd->bk", c_cells, dc)
    a3 = a[:, :, None]
    ds = a3 * dh[:, None, :]
    dcc = a3 * dc[:, None, :]
    dx = 0.0
    dem = None
    if not cache.forced:
        dl = a * (da - (a * da).sum(axis=1, keepdims=True))
        d_in, d_h = cache.x.shape[-1], s.shape[-1]
        Wx, Ws, Wm = _split_switch(params.switch, d_in, d_h)
        gx, gs, gm = _split_switch(grads.switch, d_in, d_h)
        if "x" not in ablate:
            gx += dl.T @ cache.x
            dx = dl @ Wx
        if "s" not in ablate:
            gs += np.einsum("bk,bkd->kd", dl, s)
            ds = ds + dl[:, :, None] * Ws[None]
        if cache.em is not None and "e_m" not in ablate:
            gm += dl.T @ cache.em
            dem = dl @ Wm
    dx_cell, (dh_prev, dc_prev), g = lstm_step_backward(cache.cell_cache, ds, dcc)
    grads.cells.W += g.W
    grads.cells.U += g.U
    grads.cells.b += g.b
    return dx + dx_cell, (dh_prev, dc_prev), dem


def zeros_like_direction(params):
    return DirectionParams(
        LstmParams(np.zeros_like(params.cells.W), np.zeros_like(params.cells.U),
                   np.zeros_like(params.cells.b)),
        np.zeros_like(params.switch), np.zeros_like(params.proj))


def run_direction(X, params, task_emb=None, mode=None, onehots=None):
    """Run one direction left to right over time-major ``X`` (T, B, d_in)."""
    T, B, _ = X.shape
    h = np.zeros((B, params.d_h))
    c = np.zeros((B, params.d_h))
    H = np.empty((T, B, params.d_h))
    A = np.empty((T, B, params.k))
    caches = []
    for t in range(T):
        oh = None if onehots is None else onehots[t]
        h, c, a, cache = switch_lstm_step(X[t], (h, c), params, task_emb, mode, oh)
        H[t], A[t] = h, a
        caches.append(cache)
    return H, A, caches


def run_direction_backward(caches, dH, dA, params, mode=None):
    """BPTT for :func:`run_direction`. Returns ``(dX, grads, d_task_emb)``."""
    ablate = mode.ablate if mode is not None else frozenset()
    T, B, d_h = dH.shape
    grads = zeros_like_direction(params)
    dX = np.zeros((T, B, params.d_in))
    dem_total = None
    dh_next = np.zeros((B, d_h))
    dc_next = np.zeros((B, d_h))
    for t in range(T - 1, -1, -1):
        dx, (dh_next, dc_next), dem = switch_lstm_step_backward(
            caches[t], dH[t] + dh_next, dc_next, dA[t], params, grads, ablate)
        dX[t] = dx
        if dem is not None:
            dem_total = dem if dem_total is None else dem_total + dem
    return dX, grads, dem_total


def reverse_padded(arr, lengths):
    """Reverse each row's valid prefix along time; padded slots become 0.

    Self-inverse on the valid region, so it maps both activations and their
    gradients between the two directions.
    """
    T, B = arr.shape[:2]
    lengths = np.asarray(lengths)
    t = np.arange(T)[:, None]
    valid = t < lengths[None, :]
    idx = np.where(valid, lengths[None, :] - 1 - t, t)
    out = arr[idx, np.arange(B)[None, :]]
    return out * valid.reshape(valid.shape + (1,) * (arr.ndim - 2))


@dataclass
class BiCache:
    fw: list
    bw: list
    lengths: np.ndarray


def run_bidirectional(X, lengths, fw, bw, task_emb=None, mode=None, onehots=None):
    """Both directions over time-major ``X`` (T, B, d_in) with row ``lengths``.

    Forward starts from zero state at position 0, backward from zero state
    at each row's last valid position. Returns ``(H_fw, H_bw, A_fw, A_bw,
    cache)`` all aligned to original positions; padded slots are zero.
    ``onehots`` is an optional pair of (T, B) forced cell indices.
    """
    if X.shape[0] == 0 or np.any(np.asarray(lengths) < 1):
        raise InvalidInputError("empty sequence")
    oh_f, oh_b = onehots if onehots is not None else (None, None)
    Hf, Af, cf = run_direction(X, fw, task_emb, mode, oh_f)
    Xr = reverse_padded(X, lengths)
    Hr, Ar, cb = run_direction(Xr, bw, task_emb, mode, oh_b)
    T = X.shape[0]
    valid = (np.arange(T)[:, None] < np.asarray(lengths)[None, :])[:, :, None]
    return (Hf * valid, reverse_padded(Hr, lengths), Af * valid,
            reverse_padded(Ar, lengths), BiCache(cf, cb, np.asarray(lengths)))


def run_bidirectional_backward(cache, dHf, dHb, dAf, dAb, fw, bw, mode=None):
    """Returns ``(dX, grads_fw, grads_bw, d_task_emb)``."""
    dXf, gf, demf = run_direction_backward(cache.fw, dHf, dAf, fw, mode)
    dXr, gb, demb = run_direction_backward(
        cache.bw, reverse_padded(dHb, cache.lengths), reverse_padded(dAb, cache.lengths),
        bw, mode)
    dX = dXf + reverse_padded(dXr, cache.lengths)
    if demf is None:
        dem = demb
    elif demb is None:
        dem = demf
    else:
        dem = demf + demb
    return dX, gf, gb, dem


def emission_scores(H, A, proj):
    """Switch-weighted projection ``sum_k a_k P_k h`` for one direction.

    ``H`` (..., d_h), ``A`` (..., K), ``proj`` (K, |L|, d_h) -> (..., |L|).
    No bias term. Sum the result over both directions to get label scores.
    """
    if A.shape[-1] != proj.shape[0]:
        raise InvalidInputError(f"trace has K={A.shape[-1]}, projection has K={proj.shape[0]}")
    PH = np.einsum("kld,...d->...kl", proj, H)
    return np.einsum("...k,...kl->...l", A, PH)


def emission_backward(dD, H, A, proj):
    """Returns ``(dH, dA, dproj)`` for :func:`emission_scores`."""
    PH = np.einsum("kld,...d->...kl", proj, H)
    dA = np.einsum("...l,...kl->...k", dD, PH)
    M = A[..., :, None] * dD[..., None, :]
    lead = "".join("abcdefgh"[: H.ndim - 1])
    dproj = np.einsum(f"{lead}kl,{lead}d->kld", M, H)
    dH = np.einsum("...kl,kld->...d", M, proj)
    return dH, dA, dproj


@dataclass
class SwitchTrace:
    """Switch distributions of one sentence: ``forward``/``backward`` are (n, K)."""
    task: object
    forward: np.ndarray
    backward: np.ndarray


TRACE_HEADER = ("task", "direction", "position", "k", "weight")


def write_trace_tsv(traces, stream):
    """One row per (sentence position, cell); positions are 0-based per sentence."""
    stream.write("\t".join(TRACE_HEADER) + "\n")
    for tr in traces:
        for direction, A in (("fw", tr.forward), ("bw", tr.backward)):
            for t, row in enumerate(A):
                for k, w in enumerate(row):
                    stream.write(f"{tr.task}\t{direction}\t{t}\t{k}\t{w:.6f}\n")
