"""Hot HMM kernels: numba-compiled loops with pure-numpy fallbacks.

The log-domain forward/backward recursions, Viterbi, and the transition
posterior accumulation are the only places where per-frame Python loops
dominate runtime. Each kernel exists twice: a ``_nb``-suffixed version
compiled with ``numba.njit`` and a ``_np`` version written against plain
numpy. Which one backs the public name is decided once at import time:

* ``SPARSEASR_NUMBA=0`` (or ``false``/``off``) forces the numpy path;
* otherwise numba is used when importable, numpy when not.

``benchmarks/bench_kernels.py`` times the two paths against each other.

All kernels take float64 C-contiguous arrays. ``log_b`` is the (T, S)
matrix of per-frame per-state emission log-probabilities; ``log_a`` is the
(S, S) log transition matrix (``-inf`` marks forbidden transitions);
``log_pi`` the (S,) initial log distribution.
"""

import os

import numpy as np

NEG_INF = float("-inf")


def _select_backend(env_value, numba_available):
    """Pick 'numba' or 'numpy' from the env flag and availability."""
    if env_value is not None and env_value.strip().lower() in ("0", "false", "off", "no"):
        return "numpy"
    return "numba" if numba_available else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _logsumexp_rows(m):
    """Row-wise logsumexp of a 2-D array, tolerating all -inf rows."""
    mx = np.max(m, axis=1)
    out = np.full(m.shape[0], NEG_INF)
    ok = mx > NEG_INF
    if np.any(ok):
        with np.errstate(invalid="ignore"):
            out[ok] = mx[ok] + np.log(np.sum(np.exp(m[ok] - mx[ok, None]), axis=1))
    return out


def forward_np(log_pi, log_a, log_b):
    """Log-domain forward recursion. Returns the (T, S) log-alpha matrix."""
    T, S = log_b.shape
    log_alpha = np.empty((T, S))
    log_alpha[0] = log_pi + log_b[0]
    for t in range(1, T):
        # alpha[t, j] = lse_i(alpha[t-1, i] + a[i, j]) + b[t, j]
        log_alpha[t] = _logsumexp_rows(log_alpha[t - 1][None, :] + log_a.T) + log_b[t]
    return log_alpha


def backward_np(log_a, log_b):
    """Log-domain backward recursion. Returns the (T, S) log-beta matrix."""
    T, S = log_b.shape
    log_beta = np.empty((T, S))
    log_beta[T - 1] = 0.0
    for t in range(T - 2, -1, -1):
        log_beta[t] = _logsumexp_rows(log_a + (log_b[t + 1] + log_beta[t + 1])[None, :])
    return log_beta


def viterbi_np(log_pi, log_a, log_b):
    """Most likely state path and its log score."""
    T, S = log_b.shape
    delta = log_pi + log_b[0]
    back = np.zeros((T, S), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + log_a
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(S)] + log_b[t]
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = int(np.argmax(delta))
    score = float(delta[path[T - 1]])
    for t in range(T - 2, -1, -1):
        path[t] = back[t + 1, path[t + 1]]
    return path, score


def xi_sum_np(log_alpha, log_beta, log_a, log_b, log_lik):
    """Transition posteriors summed over time: an (S, S) count matrix."""
    T, S = log_b.shape
    xi = np.zeros((S, S))
    for t in range(T - 1):
        m = (log_alpha[t][:, None] + log_a
             + (log_b[t + 1] + log_beta[t + 1])[None, :]) - log_lik
        xi += np.exp(m)
    return xi


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

try:
    import numba

    HAVE_NUMBA = True

    @numba.njit(cache=True)
    def _lse_vec(v):
        mx = v[0]
        for i in range(1, v.shape[0]):
            if v[i] > mx:
                mx = v[i]
        if mx == NEG_INF:
            return NEG_INF
        acc = 0.0
        for i in range(v.shape[0]):
            acc += np.exp(v[i] - mx)
        return mx + np.log(acc)

    @numba.njit(cache=True)
    def forward_nb(log_pi, log_a, log_b):
        T, S = log_b.shape
        log_alpha = np.empty((T, S))
        for j in range(S):
            log_alpha[0, j] = log_pi[j] + log_b[0, j]
        work = np.empty(S)
        for t in range(1, T):
            for j in range(S):
                for i in range(S):
                    work[i] = log_alpha[t - 1, i] + log_a[i, j]
                log_alpha[t, j] = _lse_vec(work) + log_b[t, j]
        return log_alpha

    @numba.njit(cache=True)
    def backward_nb(log_a, log_b):
        T, S = log_b.shape
        log_beta = np.empty((T, S))
        for j in range(S):
            log_beta[T - 1, j] = 0.0
        work = np.empty(S)
        for t in range(T - 2, -1, -1):
            for i in range(S):
                for j in range(S):
                    work[j] = log_a[i, j] + log_b[t + 1, j] + log_beta[t + 1, j]
                log_beta[t, i] = _lse_vec(work)
        return log_beta

    @numba.njit(cache=True)
    def viterbi_nb(log_pi, log_a, log_b):
        T, S = log_b.shape
        delta = np.empty(S)
        for j in range(S):
            delta[j] = log_pi[j] + log_b[0, j]
        back = np.zeros((T, S), dtype=np.int64)
        new = np.empty(S)
        for t in range(1, T):
            for j in range(S):
                best = delta[0] + log_a[0, j]
                arg = 0
                for i in range(1, S):
                    v = delta[i] + log_a[i, j]
                    if v > best:
                        best = v
                        arg = i
                back[t, j] = arg
                new[j] = best + log_b[t, j]
            delta[:] = new
        path = np.empty(T, dtype=np.int64)
        best = delta[0]
        arg = 0
        for j in range(1, S):
            if delta[j] > best:
                best = delta[j]
                arg = j
        path[T - 1] = arg
        for t in range(T - 2, -1, -1):
            path[t] = back[t + 1, path[t + 1]]
        return path, best

    @numba.njit(cache=True)
    def xi_sum_nb(log_alpha, log_beta, log_a, log_b, log_lik):
        T, S = log_b.shape
        xi = np.zeros((S, S))
        for t in range(T - 1):
            for i in range(S):
                for j in range(S):
                    v = (log_alpha[t, i] + log_a[i, j]
                         + log_b[t + 1, j] + log_beta[t + 1, j]) - log_lik
                    xi[i, j] += np.exp(v)
        return xi

except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    forward_nb = backward_nb = viterbi_nb = xi_sum_nb = None


BACKEND = _select_backend(os.environ.get("SPARSEASR_NUMBA"), HAVE_NUMBA)

if BACKEND == "numba":
    forward = forward_nb
    backward = backward_nb
    viterbi = viterbi_nb
    xi_sum = xi_sum_nb
else:
    forward = forward_np
    backward = backward_np
    viterbi = viterbi_np
    xi_sum = xi_sum_np


def active_backend():
    """Name of the kernel backend selected at import time."""
    return BACKEND
