import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from switchseg.errors import ContractError, InvalidInputError
from switchseg.lstm import LstmParams, init_lstm_params, lstm_step, lstm_step_backward
from switchseg.numerics import finite_diff_grad, make_rng, relative_error


def random_params(d_in, d_h, seed, k=None, scale=0.5):
    rng = make_rng(seed)
    p = init_lstm_params(d_in, d_h, rng, k=k)
    p.b = p.b + scale * rng.standard_normal(p.b.shape)
    return p


def test_zero_params_zero_state():
    p = LstmParams(np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    (h, c), cache = lstm_step(np.zeros(3), (np.zeros(2), np.zeros(2)), p)
    np.testing.assert_array_equal(h, 0)
    np.testing.assert_array_equal(c, 0)
    np.testing.assert_allclose(cache.gates[0, :2], 0.5)


def test_memory_passthrough_when_saturated():
    d_h = 3
    p = random_params(4, d_h, 0)
    p.b[:d_h] = -20       # input gate closed
    p.b[d_h:2 * d_h] = 20  # forget gate open
    c_prev = np.array([0.3, -0.7, 0.1])
    (_, c), _ = lstm_step(make_rng(1).standard_normal(4) * 0.1, (np.zeros(d_h), c_prev), p)
    np.testing.assert_allclose(c, c_prev, atol=1e-7)


def test_shape_mismatch():
    p = random_params(4, 3, 0)
    with pytest.raises(InvalidInputError):
        lstm_step(np.zeros(5), (np.zeros(3), np.zeros(3)), p)
    with pytest.raises(InvalidInputError):
        lstm_step(np.zeros(4), (np.zeros(2), np.zeros(2)), p)


def test_backward_needs_cache():
    with pytest.raises(ContractError):
        lstm_step_backward(None, np.zeros(3), np.zeros(3))
    p = random_params(4, 3, 0)
    _, cache = lstm_step(np.zeros(4), (np.zeros(3), np.zeros(3)), p)
    with pytest.raises(ContractError):
        lstm_step_backward(cache, np.zeros(5), np.zeros(5))


def _step_loss(x, h, c, p, wh, wc):
    (h2, c2), _ = lstm_step(x, (h, c), p)
    return float(wh @ h2 + wc @ c2)


def test_step_gradients_match_finite_differences():
    rng = make_rng(2)
    p = random_params(4, 3, 3)
    x, h, c = rng.standard_normal(4), rng.standard_normal(3) * 0.5, rng.standard_normal(3)
    wh, wc = rng.standard_normal(3), rng.standard_normal(3)
    (_, _), cache = lstm_step(x, (h, c), p)
    dx, (dh, dc), g = lstm_step_backward(cache, wh, wc)
    checks = {
        "x": (dx, finite_diff_grad(lambda v: _step_loss(v, h, c, p, wh, wc), x)),
        "h": (dh, finite_diff_grad(lambda v: _step_loss(x, v, c, p, wh, wc), h)),
        "c": (dc, finite_diff_grad(lambda v: _step_loss(x, h, v, p, wh, wc), c)),
        "W": (g.W, finite_diff_grad(lambda v: _step_loss(x, h, c, LstmParams(v, p.U, p.b), wh, wc), p.W)),
        "U": (g.U, finite_diff_grad(lambda v: _step_loss(x, h, c, LstmParams(p.W, v, p.b), wh, wc), p.U)),
        "b": (g.b, finite_diff_grad(lambda v: _step_loss(x, h, c, LstmParams(p.W, p.U, v), wh, wc), p.b)),
    }
    for name, (ana, num) in checks.items():
        assert relative_error(ana, num) <= 1e-4, name


def test_zero_upstream_gives_zero_grads():
    p = random_params(4, 3, 0)
    _, cache = lstm_step(np.ones(4), (np.ones(3) * 0.2, np.ones(3)), p)
    dx, (dh, dc), g = lstm_step_backward(cache, np.zeros(3), np.zeros(3))
    for arr in (dx, dh, dc, g.W, g.U, g.b):
        np.testing.assert_array_equal(arr, 0)


def test_single_coordinate_jacobian_row():
    rng = make_rng(7)
    p = random_params(5, 4, 8)
    x, h, c = rng.standard_normal(5), rng.standard_normal(4) * 0.3, rng.standard_normal(4)
    _, cache = lstm_step(x, (h, c), p)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1.0
        dx, _, _ = lstm_step_backward(cache, e, np.zeros(4))
        num = finite_diff_grad(lambda v: float(lstm_step(v, (h, c), p)[0][0][j]), x)
        np.testing.assert_allclose(dx, num, atol=1e-10)


def test_unrolled_sequence_gradients():
    rng = make_rng(11)
    d_in, d_h, T = 3, 4, 5
    p = random_params(d_in, d_h, 12)
    X = rng.standard_normal((T, d_in))
    w = rng.standard_normal((T, d_h))

    def loss(params, X=X):
        h, c = np.zeros(d_h), np.zeros(d_h)
        total = 0.0
        for t in range(T):
            (h, c), _ = lstm_step(X[t], (h, c), params)
            total += w[t] @ h
        return float(total)

    h, c = np.zeros(d_h), np.zeros(d_h)
    caches = []
    for t in range(T):
        (h, c), cache = lstm_step(X[t], (h, c), p)
        caches.append(cache)
    gW, gU, gb = np.zeros_like(p.W), np.zeros_like(p.U), np.zeros_like(p.b)
    dX = np.zeros_like(X)
    dh, dc = np.zeros(d_h), np.zeros(d_h)
    for t in range(T - 1, -1, -1):
        dX[t], (dh, dc), g = lstm_step_backward(caches[t], w[t] + dh, dc)
        gW += g.W
        gU += g.U
        gb += g.b
    assert relative_error(gW, finite_diff_grad(lambda v: loss(LstmParams(v, p.U, p.b)), p.W)) <= 1e-4
    assert relative_error(gU, finite_diff_grad(lambda v: loss(LstmParams(p.W, v, p.b)), p.U)) <= 1e-4
    assert relative_error(gb, finite_diff_grad(lambda v: loss(LstmParams(p.W, p.U, v)), p.b)) <= 1e-4
    assert relative_error(dX, finite_diff_grad(lambda v: loss(p, v), X)) <= 1e-4


def test_stacked_cells_match_individual_cells():
    rng = make_rng(4)
    k, d_in, d_h, B = 3, 4, 5, 2
    p = random_params(d_in, d_h, 5, k=k)
    x, h, c = rng.standard_normal((B, d_in)), rng.standard_normal((B, d_h)), rng.standard_normal((B, d_h))
    (hs, cs), cache = lstm_step(x, (h, c), p)
    assert hs.shape == (B, k, d_h)
    dh_up, dc_up = rng.standard_normal((B, k, d_h)), rng.standard_normal((B, k, d_h))
    dx, (dh, dc), g = lstm_step_backward(cache, dh_up, dc_up)
    dx_sum, dh_sum, dc_sum = 0, 0, 0
    for j in range(k):
        pj = LstmParams(p.W[:, j], p.U[:, j], p.b[j])
        (hj, cj), cj_cache = lstm_step(x, (h, c), pj)
        np.testing.assert_allclose(hs[:, j], hj, atol=1e-14)
        np.testing.assert_allclose(cs[:, j], cj, atol=1e-14)
        dxj, (dhj, dcj), gj = lstm_step_backward(cj_cache, dh_up[:, j], dc_up[:, j])
        np.testing.assert_allclose(g.W[:, j], gj.W, atol=1e-12)
        np.testing.assert_allclose(g.U[:, j], gj.U, atol=1e-12)
        np.testing.assert_allclose(g.b[j], gj.b, atol=1e-12)
        dx_sum, dh_sum, dc_sum = dx_sum + dxj, dh_sum + dhj, dc_sum + dcj
    np.testing.assert_allclose(dx, dx_sum, atol=1e-12)
    np.testing.assert_allclose(dh, dh_sum, atol=1e-12)
    np.testing.assert_allclose(dc, dc_sum, atol=1e-12)


@given(st.integers(0, 10 ** 6), st.floats(0.1, 20))
def test_output_ranges(seed, scale):
    rng = make_rng(seed)
    p = random_params(3, 4, seed, scale=scale)
    x = rng.standard_normal((6, 3)) * scale
    h, c = np.tanh(rng.standard_normal((6, 4))), rng.standard_normal((6, 4)) * scale
    (h2, _), cache = lstm_step(x, (h, c), p)
    assert np.all(np.abs(h2) <= 1)
    sig = np.delete(cache.gates, np.s_[8:12], axis=-1)
    assert np.all((sig >= 0) & (sig <= 1))


def test_deterministic():
    p = random_params(3, 4, 1)
    x = np.linspace(-1, 1, 3)
    a = lstm_step(x, (np.zeros(4), np.zeros(4)), p)[0]
    b = lstm_step(x, (np.zeros(4), np.zeros(4)), p)[0]
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_init_forget_bias():
    p = init_lstm_params(3, 4, make_rng(0))
    np.testing.assert_array_equal(p.b, np.r_[np.zeros(4), np.ones(4), np.zeros(8)])
    assert p.W.shape == (3, 16) and p.U.shape == (4, 16)
