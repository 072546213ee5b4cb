import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from switchseg.crf import (
    BRUTE_FORCE_MAX_LEN,
    CrfParams,
    batch_nll,
    batch_viterbi,
    brute_force,
    emission_marginals,
    log_likelihood,
    log_partition,
    sequence_score,
    viterbi,
)
from switchseg.errors import InvalidInputError
from switchseg.numerics import finite_diff_grad, logsumexp, make_rng, relative_error


def instance(seed, n, boundary=False):
    rng = make_rng(seed)
    E = rng.uniform(-2, 2, (n, 4))
    p = CrfParams(rng.uniform(-2, 2, (4, 4)))
    if boundary:
        p.start, p.stop = rng.uniform(-2, 2, 4), rng.uniform(-2, 2, 4)
    return E, p


def test_single_position():
    E = np.array([[3.0, 1.0, 0.0, 2.0]])
    p = CrfParams(np.zeros((4, 4)))
    assert log_partition(E, p) == pytest.approx(logsumexp([3, 1, 0, 2]), abs=1e-14)
    assert viterbi(E, p) == [0]


def test_uniform_two_positions():
    p = CrfParams(np.zeros((4, 4)))
    assert log_partition(np.zeros((2, 4)), p) == pytest.approx(np.log(16), abs=1e-14)
    assert log_likelihood(np.zeros((2, 4)), p, [1, 3])[0] == pytest.approx(np.log(16), abs=1e-14)


def test_forced_path():
    trans = np.full((4, 4), -1e6)
    trans[0, 2] = 0.0
    assert viterbi(np.zeros((2, 4)), CrfParams(trans)) == [0, 2]


def test_saturated_gold():
    E = np.zeros((4, 4))
    gold = [0, 1, 2, 3]
    E[np.arange(4), gold] = 1000.0
    assert log_likelihood(E, CrfParams(np.zeros((4, 4))), gold)[0] == pytest.approx(0.0, abs=1e-9)


def test_empty_and_bad_labels():
    p = CrfParams(np.zeros((4, 4)))
    with pytest.raises(InvalidInputError):
        log_partition(np.zeros((0, 4)), p)
    with pytest.raises(InvalidInputError):
        log_likelihood(np.zeros((2, 4)), p, [0, 4])
    with pytest.raises(InvalidInputError):
        log_likelihood(np.zeros((2, 4)), p, [0])


@pytest.mark.parametrize("boundary", [False, True])
def test_matches_brute_force(boundary):
    for seed in range(100):
        n = 1 + seed % 6
        E, p = instance(seed, n, boundary)
        Z, best = brute_force(E, p)
        assert abs(log_partition(E, p) - Z) <= 1e-8
        assert viterbi(E, p) == best


def test_tie_break_is_lexicographic():
    # integer scores make many exact ties
    for seed in range(60):
        rng = make_rng(seed)
        n = 1 + seed % 5
        E = rng.integers(-1, 2, (n, 4)).astype(float)
        p = CrfParams(rng.integers(-1, 2, (4, 4)).astype(float))
        scores = {y: sequence_score(E, p, y) for y in itertools.product(range(4), repeat=n)}
        top = max(scores.values())
        expected = min(y for y, s in scores.items() if s == top)
        assert viterbi(E, p) == list(expected)
        assert brute_force(E, p)[1] == list(expected)


def test_brute_force_refuses_long_input():
    with pytest.raises(InvalidInputError):
        brute_force(np.zeros((BRUTE_FORCE_MAX_LEN + 1, 4)), CrfParams(np.zeros((4, 4))))


@pytest.mark.parametrize("boundary", [False, True])
def test_gradients(boundary):
    E, p = instance(3, 5, boundary)
    gold = [3, 0, 1, 2, 3]
    nll, dE, g = log_likelihood(E, p, gold)

    def f(E_=E, trans=p.trans, start=p.start, stop=p.stop):
        return log_likelihood(E_, CrfParams(trans, start, stop), gold)[0]

    assert relative_error(dE, finite_diff_grad(lambda v: f(E_=v), E)) <= 1e-4
    assert relative_error(g.trans, finite_diff_grad(lambda v: f(trans=v), p.trans)) <= 1e-4
    if boundary:
        assert relative_error(g.start, finite_diff_grad(lambda v: f(start=v), p.start)) <= 1e-4
        assert relative_error(g.stop, finite_diff_grad(lambda v: f(stop=v), p.stop)) <= 1e-4


def test_emission_gradient_is_marginal_minus_gold():
    E, p = instance(4, 4)
    gold = [0, 2, 3, 3]
    _, dE, _ = log_likelihood(E, p, gold)
    onehot = np.eye(4)[gold]
    np.testing.assert_allclose(dE, emission_marginals(E, p) - onehot, atol=1e-12)


def test_batch_with_padding_matches_single():
    rng = make_rng(5)
    lengths = [3, 5, 1]
    T = max(lengths)
    E = rng.uniform(-2, 2, (T, 3, 4))
    p = CrfParams(rng.uniform(-2, 2, (4, 4)), rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4))
    gold = rng.integers(0, 4, (T, 3))
    nll, dE, g = batch_nll(E, lengths, p, gold)
    paths = batch_viterbi(E, lengths, p)
    total_trans = 0
    for b, n in enumerate(lengths):
        nll_b, dE_b, g_b = log_likelihood(E[:n, b], p, gold[:n, b])
        assert nll[b] == pytest.approx(nll_b, abs=1e-12)
        np.testing.assert_allclose(dE[:n, b], dE_b, atol=1e-12)
        np.testing.assert_array_equal(dE[n:, b], 0)
        assert paths[b] == viterbi(E[:n, b], p)
        total_trans = total_trans + g_b.trans
    np.testing.assert_allclose(g.trans, total_trans, atol=1e-12)


@given(st.integers(0, 10 ** 6), st.integers(1, 7))
def test_marginals_sum_to_one(seed, n):
    E, p = instance(seed, n)
    np.testing.assert_allclose(emission_marginals(E, p).sum(1), 1.0, atol=1e-8)


@given(st.integers(0, 10 ** 6), st.integers(1, 7), st.floats(-5, 5))
def test_constant_shift_at_one_position(seed, n, c):
    E, p = instance(seed, n)
    t = seed % n
    E2 = E.copy()
    E2[t] += c
    assert log_partition(E2, p) == pytest.approx(log_partition(E, p) + c, abs=1e-9)
    assert viterbi(E2, p) == viterbi(E, p)


@given(st.integers(0, 10 ** 6), st.integers(1, 6))
def test_partition_dominates_every_path(seed, n):
    E, p = instance(seed, n)
    y = list(make_rng(seed).integers(0, 4, n))
    assert log_partition(E, p) > sequence_score(E, p, y)
    assert all(0 <= v < 4 for v in viterbi(E, p))
