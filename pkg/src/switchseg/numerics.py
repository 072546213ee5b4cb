"""Dense numeric kernels shared by every model module.

All functions take numpy arrays and an explicit ``numpy.random.Generator``
where randomness is involved; nothing here keeps global state.
"""
import numpy as np

from switchseg.errors import InvalidInputError

DEFAULT_DTYPE = np.float64


def make_rng(seed):
    """PCG64 generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def _check_vector(v):
    v = np.asarray(v, dtype=DEFAULT_DTYPE)
    if v.size == 0:
        raise InvalidInputError("empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("non-finite element")
    return v


def softmax(v, axis=-1):
    v = _check_vector(v)
    z = v - v.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def logsumexp(v, axis=None):
    v = np.asarray(v, dtype=DEFAULT_DTYPE)
    if v.size == 0:
        raise InvalidInputError("empty vector")
    m = v.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.exp(v - m).sum(axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def xavier_uniform(fan_in, fan_out, rng, dtype=DEFAULT_DTYPE):
    """Matrix of shape ``(fan_in, fan_out)`` drawn from the Glorot uniform law."""
    if fan_in < 1 or fan_out < 1:
        raise InvalidInputError(f"fan sizes must be >= 1, got ({fan_in}, {fan_out})")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def dropout_mask(p, shape, rng, dtype=DEFAULT_DTYPE):
    """Inverted dropout mask: 0 with probability ``p``, else ``1 / (1 - p)``."""
    if not 0.0 <= p < 1.0:
        raise InvalidInputError(f"dropout probability must lie in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return keep.astype(dtype) / (1.0 - p)


def finite_diff_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape).

    ``x`` is not modified; ``f`` receives a perturbed copy each call.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x = np.array(x, dtype=DEFAULT_DTYPE, order="C")
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x.copy())
        flat[i] = old - eps
        fm = f(x.copy())
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b):
    """``||a - b|| / max(||a||, ||b||)``, 0 when both are zero."""
    a = np.asarray(a, dtype=DEFAULT_DTYPE)
    b = np.asarray(b, dtype=DEFAULT_DTYPE)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
