"""Hot dynamic-programming kernels for the chain CRF.

Two implementations of each kernel are kept side by side: an explicit-loop
version compiled with numba's @njit, and a vectorized pure-numpy fallback.
The active path is chosen at import time by the NGCMOTION_NUMBA environment
variable ("0" forces the numpy path; anything else uses numba when it is
importable).  ``benchmarks/bench_kernels.py`` compares the two.

All kernels take a (tau, L) unary score matrix and an (L, L) transition
matrix (row = previous label, column = next label); there is no transition
term at the first frame.  Scores are log-potentials.
"""

from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("NGCMOTION_NUMBA", "1") not in ("", "0")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# numpy path (vectorized over labels, loop over time)


def crf_log_partition_numpy(unary, trans):
    """Return (logZ, alpha) where alpha[t, j] = log-sum over prefixes ending in j."""
    tau, L = unary.shape
    alpha = np.empty((tau, L))
    alpha[0] = unary[0]
    for t in range(1, tau):
        scores = alpha[t - 1][:, None] + trans  # (L_prev, L_next)
        mx = scores.max(axis=0)
        alpha[t] = unary[t] + mx + np.log(np.exp(scores - mx).sum(axis=0))
    mx = alpha[-1].max()
    return float(mx + np.log(np.exp(alpha[-1] - mx).sum())), alpha


def crf_marginals_numpy(unary, trans):
    """Forward-backward: (logZ, node marginals (tau,L), edge marginals (L,L) summed over t)."""
    tau, L = unary.shape
    logz, alpha = crf_log_partition_numpy(unary, trans)
    beta = np.zeros((tau, L))
    for t in range(tau - 2, -1, -1):
        scores = trans + (unary[t + 1] + beta[t + 1])[None, :]  # (L_here, L_next)
        mx = scores.max(axis=1)
        beta[t] = mx + np.log(np.exp(scores - mx[:, None]).sum(axis=1))
    node = np.exp(alpha + beta - logz)
    edge = np.zeros((L, L))
    for t in range(1, tau):
        s = alpha[t - 1][:, None] + trans + (unary[t] + beta[t])[None, :] - logz
        edge += np.exp(s)
    return logz, node, edge


def viterbi_numpy(unary, trans):
    """Best label path and its score; ties resolve to the smaller label index."""
    tau, L = unary.shape
    delta = unary[0].copy()
    back = np.zeros((tau, L), dtype=np.int64)
    for t in range(1, tau):
        scores = delta[:, None] + trans  # (L_prev, L_next)
        back[t] = scores.argmax(axis=0)  # argmax picks the first (smallest) max
        delta = scores[back[t], np.arange(L)] + unary[t]
    path = np.zeros(tau, dtype=np.int64)
    path[-1] = int(delta.argmax())
    score = float(delta[path[-1]])
    for t in range(tau - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, score


# ---------------------------------------------------------------------------
# numba path (explicit loops)


@njit(cache=True)
def _crf_alpha_jit(unary, trans):
    tau, L = unary.shape
    alpha = np.empty((tau, L))
    for j in range(L):
        alpha[0, j] = unary[0, j]
    for t in range(1, tau):
        for j in range(L):
            mx = alpha[t - 1, 0] + trans[0, j]
            for i in range(1, L):
                s = alpha[t - 1, i] + trans[i, j]
                if s > mx:
                    mx = s
            acc = 0.0
            for i in range(L):
                acc += np.exp(alpha[t - 1, i] + trans[i, j] - mx)
            alpha[t, j] = unary[t, j] + mx + np.log(acc)
    return alpha


@njit(cache=True)
def _logz_from_alpha_jit(alpha):
    L = alpha.shape[1]
    mx = alpha[-1, 0]
    for j in range(1, L):
        if alpha[-1, j] > mx:
            mx = alpha[-1, j]
    acc = 0.0
    for j in range(L):
        acc += np.exp(alpha[-1, j] - mx)
    return mx + np.log(acc)


def crf_log_partition_jit(unary, trans):
    alpha = _crf_alpha_jit(unary, trans)
    return float(_logz_from_alpha_jit(alpha)), alpha


@njit(cache=True)
def _crf_marginals_jit(unary, trans):
    tau, L = unary.shape
    alpha = _crf_alpha_jit(unary, trans)
    logz = _logz_from_alpha_jit(alpha)
    beta = np.zeros((tau, L))
    for t in range(tau - 2, -1, -1):
        for i in range(L):
            mx = trans[i, 0] + unary[t + 1, 0] + beta[t + 1, 0]
            for j in range(1, L):
                s = trans[i, j] + unary[t + 1, j] + beta[t + 1, j]
                if s > mx:
                    mx = s
            acc = 0.0
            for j in range(L):
                acc += np.exp(trans[i, j] + unary[t + 1, j] + beta[t + 1, j] - mx)
            beta[t, i] = mx + np.log(acc)
    node = np.empty((tau, L))
    for t in range(tau):
        for j in range(L):
            node[t, j] = np.exp(alpha[t, j] + beta[t, j] - logz)
    edge = np.zeros((L, L))
    for t in range(1, tau):
        for i in range(L):
            for j in range(L):
                edge[i, j] += np.exp(
                    alpha[t - 1, i] + trans[i, j] + unary[t, j] + beta[t, j] - logz
                )
    return logz, node, edge


def crf_marginals_jit(unary, trans):
    logz, node, edge = _crf_marginals_jit(unary, trans)
    return float(logz), node, edge


@njit(cache=True)
def _viterbi_jit(unary, trans):
    tau, L = unary.shape
    delta = np.empty(L)
    for j in range(L):
        delta[j] = unary[0, j]
    back = np.zeros((tau, L), dtype=np.int64)
    nxt = np.empty(L)
    for t in range(1, tau):
        for j in range(L):
            best_i = 0
            best = delta[0] + trans[0, j]
            for i in range(1, L):
                s = delta[i] + trans[i, j]
                if s > best:  # strict: ties keep the smaller index
                    best = s
                    best_i = i
            back[t, j] = best_i
            nxt[j] = best + unary[t, j]
        for j in range(L):
            delta[j] = nxt[j]
    last = 0
    best = delta[0]
    for j in range(1, L):
        if delta[j] > best:
            best = delta[j]
            last = j
    path = np.zeros(tau, dtype=np.int64)
    path[-1] = last
    for t in range(tau - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best


def viterbi_jit(unary, trans):
    path, score = _viterbi_jit(unary, trans)
    return path, float(score)


# ---------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    crf_log_partition = crf_log_partition_jit
    crf_marginals = crf_marginals_jit
    viterbi = viterbi_jit
else:
    crf_log_partition = crf_log_partition_numpy
    crf_marginals = crf_marginals_numpy
    viterbi = viterbi_numpy
