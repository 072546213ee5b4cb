"""Vanilla LSTM cell (no peepholes) with an analytic backward pass.

Gates are packed along the last axis in the order ``(i, f, g, o)``:
``z = x W + h_prev U + b`` and ``z[..., j*d_h:(j+1)*d_h]`` is gate ``j``.

The same functions handle a *stack* of K cells that all step from the same
``(x, h_prev, c_prev)``: ``W`` is then ``(d_in, K, 4*d_h)``, ``U`` is
``(d_h, K, 4*d_h)`` and ``b`` is ``(K, 4*d_h)``, so one GEMM serves every
cell. Stacked outputs are ``(B, K, d_h)``. This is what the switched layer
uses.
"""
from dataclasses import dataclass

import numpy as np

from switchseg.errors import ContractError, InvalidInputError
from switchseg.numerics import xavier_uniform

GATES = ("i", "f", "g", "o")
FORGET_BIAS = 1.0


@dataclass
class LstmParams:
    W: np.ndarray  # (d_in, 4 d_h) or (d_in, K, 4 d_h)
    U: np.ndarray  # (d_h, 4 d_h) or (d_h, K, 4 d_h)
    b: np.ndarray  # (4 d_h,) or (K, 4 d_h)

    @property
    def d_in(self):
        return self.W.shape[0]

    @property
    def d_h(self):
        return self.U.shape[0]

    @property
    def stacked(self):
        return self.W.ndim == 3


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: np.ndarray  # activated (..., 4 d_h)
    tanh_c: np.ndarray
    params: LstmParams
    squeeze: bool


def init_lstm_params(d_in, d_h, rng, k=None):
    """Xavier-uniform weights per gate block; forget-gate bias 1, others 0."""
    def one():
        W = np.concatenate([xavier_uniform(d_in, d_h, rng) for _ in GATES], axis=1)
        U = np.concatenate([xavier_uniform(d_h, d_h, rng) for _ in GATES], axis=1)
        b = np.zeros(4 * d_h)
        b[d_h:2 * d_h] = FORGET_BIAS
        return W, U, b

    if k is None:
        return LstmParams(*one())
    W, U, b = zip(*[one() for _ in range(k)])
    return LstmParams(np.stack(W, axis=1), np.stack(U, axis=1), np.stack(b))


_SCALES = {}


def _gate_affine(d_h):
    if d_h not in _SCALES:
        scale = np.full(4 * d_h, 0.5)
        scale[2 * d_h:3 * d_h] = 1.0
        _SCALES[d_h] = (scale, 1.0 - scale)
    return _SCALES[d_h]


def _check(x, h_prev, c_prev, params):
    if x.shape[-1] != params.d_in:
        raise InvalidInputError(f"input dim {x.shape[-1]} != d_in {params.d_in}")
    if h_prev.shape[-1] != params.d_h or c_prev.shape != h_prev.shape:
        raise InvalidInputError(
            f"state shapes {h_prev.shape}/{c_prev.shape} do not match d_h {params.d_h}")
    if x.shape[:-1] != h_prev.shape[:-1]:
        raise InvalidInputError(f"batch shape mismatch {x.shape} vs {h_prev.shape}")


def lstm_step(x, state, params):
    """One step. Returns ``((h, c), cache)``.

    ``x`` is ``(d_in,)`` or ``(B, d_in)``; ``state`` is ``(h_prev, c_prev)``
    with matching batch shape.
    """
    h_prev, c_prev = (np.asarray(s) for s in state)
    x = np.asarray(x)
    _check(x, h_prev, c_prev, params)
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev, c_prev = x[None], h_prev[None], c_prev[None]

    d_h = params.d_h
    z = x @ params.W.reshape(params.d_in, -1) + h_prev @ params.U.reshape(d_h, -1)
    if params.stacked:
        z = z.reshape(z.shape[0], -1, 4 * d_h)
        c_prev = c_prev[:, None, :]
    z += params.b
    # sigmoid(z) = (1 + tanh(z / 2)) / 2 for i, f, o; plain tanh for g
    scale, shift = _gate_affine(d_h)
    gates = np.tanh(z * scale) * scale + shift
    i, f, g, o = (gates[..., j * d_h:(j + 1) * d_h] for j in range(4))
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c

    cache = StepCache(x, h_prev, c_prev, gates, tanh_c, params, squeeze)
    if squeeze:
        h, c = h[0], c[0]
    return (h, c), cache


def lstm_step_backward(cache, dh, dc):
    """Gradients of a step given upstream ``dL/dh`` and ``dL/dc``.

    Returns ``(dx, (dh_prev, dc_prev), LstmParams-of-gradients)``. For a
    stacked cell the shared inputs receive the sum over the K cells.
    """
    if not isinstance(cache, StepCache):
        raise ContractError("lstm_step_backward needs the cache of a matching lstm_step")
    if cache.squeeze:
        dh, dc = dh[None], dc[None]
    if dh.shape != cache.tanh_c.shape or dc.shape != cache.tanh_c.shape:
        raise ContractError(f"upstream shape {dh.shape} does not match cache {cache.tanh_c.shape}")

    p = cache.params
    d_h = p.d_h
    gates = cache.gates
    i, f, g, o = (gates[..., j * d_h:(j + 1) * d_h] for j in range(4))
    dct = dc + dh * o * (1.0 - cache.tanh_c ** 2)
    dgates = np.concatenate([dct * g, dct * cache.c_prev, dct * i, dh * cache.tanh_c], axis=-1)
    deriv = gates * (1.0 - gates)
    deriv[..., 2 * d_h:3 * d_h] = 1.0 - g ** 2
    dz = dgates * deriv
    dc_prev = dct * f

    B = dz.shape[0]
    dz_flat = dz.reshape(B, -1)
    dW = (cache.x.T @ dz_flat).reshape(p.W.shape)
    dU = (cache.h_prev.T @ dz_flat).reshape(p.U.shape)
    db = dz.sum(axis=0)
    dx = dz_flat @ p.W.reshape(p.d_in, -1).T
    dh_prev = dz_flat @ p.U.reshape(d_h, -1).T
    if p.stacked:
        dc_prev = dc_prev.sum(1)
    if cache.squeeze:
        dx, dh_prev, dc_prev = dx[0], dh_prev[0], dc_prev[0]
    return dx, (dh_prev, dc_prev), LstmParams(dW, dU, db)
