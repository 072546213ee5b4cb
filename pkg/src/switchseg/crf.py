"""First-order linear-chain CRF over the BMES label set.

Sequence score::

    score(Y) = start[y_1] + sum_t delta[t, y_t] + sum_{t>=2} b[y_{t-1}, y_t] + stop[y_n]

``start``/``stop`` are optional (``None`` means zero). The unary term at the
first position is always included.

Batched routines take time-major emissions ``(T, B, L)`` plus row lengths;
single-sentence wrappers take ``(n, L)``.
"""
import itertools
from dataclasses import dataclass

import numpy as np

from switchseg.errors import InvalidInputError
from switchseg.numerics import logsumexp

BRUTE_FORCE_MAX_LEN = 10


@dataclass
class CrfParams:
    trans: np.ndarray          # (L, L), trans[prev, cur]
    start: np.ndarray = None   # (L,) or None
    stop: np.ndarray = None    # (L,) or None

    @property
    def num_labels(self):
        return self.trans.shape[0]

    def _start(self):
        return np.zeros(self.num_labels) if self.start is None else self.start

    def _stop(self):
        return np.zeros(self.num_labels) if self.stop is None else self.stop


def _as_batch(emissions):
    E = np.asarray(emissions, dtype=float)
    if E.ndim != 2 or E.shape[0] == 0:
        raise InvalidInputError(f"emissions must be (n >= 1, L), got {E.shape}")
    return E[:, None, :], np.array([E.shape[0]])


def _valid(T, lengths):
    lengths = np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > T):
        raise InvalidInputError("row lengths must lie in [1, T]")
    return np.arange(T)[:, None] < lengths[None, :]


def forward_backward(E, lengths, params):
    """Forward/backward log-messages. Returns ``(logZ (B,), alpha, beta)``."""
    T, B, L = E.shape
    mask = _valid(T, lengths)
    trans, start, stop = params.trans, params._start(), params._stop()
    alpha = np.empty((T, B, L))
    alpha[0] = start + E[0]
    for t in range(1, T):
        new = logsumexp(alpha[t - 1][:, :, None] + trans[None], axis=1) + E[t]
        alpha[t] = np.where(mask[t][:, None], new, alpha[t - 1])
    logZ = logsumexp(alpha[T - 1] + stop, axis=1)
    beta = np.empty((T, B, L))
    beta[T - 1] = stop
    for t in range(T - 2, -1, -1):
        rec = logsumexp(trans[None] + (E[t + 1] + beta[t + 1])[:, None, :], axis=2)
        beta[t] = np.where(mask[t + 1][:, None], rec, stop)
    return logZ, alpha, beta


def gold_scores(E, lengths, params, gold):
    """Score of each row's gold labels; ``gold`` (T, B) ints (padding ignored)."""
    T, B, L = E.shape
    mask = _valid(T, lengths)
    lengths = np.asarray(lengths)
    g = np.where(mask, gold, 0)
    cols = np.arange(B)
    unary = (E[np.arange(T)[:, None], cols[None, :], g] * mask).sum(0)
    pair = (params.trans[g[:-1], g[1:]] * mask[1:]).sum(0) if T > 1 else 0.0
    score = unary + pair
    score = score + params._start()[g[0]] + params._stop()[g[lengths - 1, cols]]
    return score


def batch_nll(E, lengths, params, gold, scale=1.0):
    """Summed negative log-likelihood of a batch and its gradients.

    Returns ``(nll (B,), dE (T, B, L), CrfParams of gradients)``; gradients
    are of ``scale * sum(nll)``.
    """
    gold = np.asarray(gold)
    T, B, L = E.shape
    if np.any((gold < 0) | (gold >= L)):
        raise InvalidInputError("label out of range")
    mask = _valid(T, lengths)
    lengths = np.asarray(lengths)
    logZ, alpha, beta = forward_backward(E, lengths, params)
    nll = logZ - gold_scores(E, lengths, params, gold)

    lz = logZ[None, :, None]
    unary = np.exp(alpha + beta - lz) * mask[:, :, None]
    g = np.where(mask, gold, 0)
    onehot = np.zeros((T, B, L))
    onehot[np.arange(T)[:, None], np.arange(B)[None, :], g] = 1.0
    onehot *= mask[:, :, None]
    dE = scale * (unary - onehot)

    d_trans = np.zeros((L, L))
    if T > 1:
        logp = (alpha[:-1, :, :, None] + params.trans[None, None]
                + (E[1:] + beta[1:])[:, :, None, :] - logZ[None, :, None, None])
        pair = np.exp(logp) * mask[1:, :, None, None]
        d_trans = pair.sum((0, 1))
        np.add.at(d_trans, (g[:-1][mask[1:]], g[1:][mask[1:]]), -1.0)
    grads = CrfParams(scale * d_trans)
    if params.start is not None:
        d_start = unary[0].sum(0)
        np.add.at(d_start, g[0], -1.0)
        grads.start = scale * d_start
    if params.stop is not None:
        last = unary[lengths - 1, np.arange(B)]
        d_stop = last.sum(0)
        np.add.at(d_stop, g[lengths - 1, np.arange(B)], -1.0)
        grads.stop = scale * d_stop
    return nll, dE, grads


def emission_marginals(emissions, params):
    """Per-position label marginals ``P(y_t = y)`` of one sentence, (n, L)."""
    E, lengths = _as_batch(emissions)
    logZ, alpha, beta = forward_backward(E, lengths, params)
    return np.exp(alpha + beta - logZ[None, :, None])[:, 0]


def log_partition(emissions, params):
    E, lengths = _as_batch(emissions)
    return float(forward_backward(E, lengths, params)[0][0])


def sequence_score(emissions, params, labels):
    E, lengths = _as_batch(emissions)
    return float(gold_scores(E, lengths, params, np.asarray(labels)[:, None])[0])


def log_likelihood(emissions, params, gold):
    """Negative log-likelihood of ``gold`` and its gradients.

    Returns ``(nll, d_emissions (n, L), CrfParams of gradients)``.
    """
    E, lengths = _as_batch(emissions)
    gold = np.asarray(gold)
    if gold.shape != (E.shape[0],):
        raise InvalidInputError(f"gold length {gold.shape} != n={E.shape[0]}")
    nll, dE, grads = batch_nll(E, lengths, params, gold[:, None])
    return float(nll[0]), dE[:, 0], grads


def batch_viterbi(E, lengths, params):
    """Best label sequence per row; ties go to the lexicographically smallest.

    Uses suffix values so that a greedy left-to-right pass with first-index
    argmax picks the smallest label among optimal continuations.
    """
    T, B, L = E.shape
    mask = _valid(T, lengths)
    lengths = np.asarray(lengths)
    trans, stop = params.trans, params._stop()
    V = np.empty((T, B, L))
    V[T - 1] = E[T - 1] + stop
    for t in range(T - 2, -1, -1):
        rec = E[t] + (trans[None] + V[t + 1][:, None, :]).max(axis=2)
        V[t] = np.where(mask[t + 1][:, None], rec, E[t] + stop)
    out = []
    for b in range(B):
        n = int(lengths[b])
        y = [int(np.argmax(params._start() + V[0, b]))]
        for t in range(1, n):
            y.append(int(np.argmax(trans[y[-1]] + V[t, b])))
        out.append(y)
    return out


def viterbi(emissions, params):
    E, lengths = _as_batch(emissions)
    return batch_viterbi(E, lengths, params)[0]


def brute_force(emissions, params):
    """Exact ``(log partition, argmax sequence)`` by enumerating L^n paths.

    Enumeration is in lexicographic order and only a strictly larger score
    replaces the incumbent, matching :func:`viterbi`'s tie-break.
    """
    E = np.asarray(emissions, dtype=float)
    if E.ndim != 2 or E.shape[0] == 0:
        raise InvalidInputError(f"emissions must be (n >= 1, L), got {E.shape}")
    n, L = E.shape
    if n > BRUTE_FORCE_MAX_LEN:
        raise InvalidInputError(f"brute force refuses n={n} > {BRUTE_FORCE_MAX_LEN}")
    paths = np.array(list(itertools.product(range(L), repeat=n)))
    scores = E[np.arange(n)[None, :], paths].sum(1)
    if n > 1:
        scores = scores + params.trans[paths[:, :-1], paths[:, 1:]].sum(1)
    scores = scores + params._start()[paths[:, 0]] + params._stop()[paths[:, -1]]
    best = int(np.argmax(scores))
    return logsumexp(scores), [int(v) for v in paths[best]]
