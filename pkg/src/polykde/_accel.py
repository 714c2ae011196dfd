"""Hot loops of the estimator: kernel log-matrices built from blockwise Gram
matrices, row-wise log-sum-exp, and class-restricted log-sum-exp used by the
permutation test.

Each routine has a numba version (``nb_*``) and a pure-numpy version
(``np_*``) with the same signature. Setting ``POLYKDE_NO_NUMBA=1`` in the
environment, or a missing numba, selects numpy. Results agree to rounding.
"""

import math
import os

import numpy as np

VMF, EPA, SFP = 0, 1, 2
FAMILY_CODE = {"vmf": VMF, "epa": EPA, "sfp": SFP}

try:  # pragma: no cover - exercised implicitly
    import numba
    # the bundled TBB is too old for numba; prefer OpenMP, then workqueue
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("POLYKDE_NO_NUMBA", "").strip().lower()
    return _HAVE_NUMBA and flag not in ("1", "true", "yes", "on")


def set_threads(n):
    """Thread count for the numba parallel loops (no effect on results)."""
    if _HAVE_NUMBA and n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


# -- numpy versions ------------------------------------------------------------

def _np_log_softplus(x):
    out = np.empty_like(x)
    low = x < -30.0
    out[low] = x[low] - 0.5 * np.exp(x[low])
    out[~low] = np.log(np.logaddexp(0.0, x[~low]))
    return out


def _np_log_profile(s, fam, nu, log_sfp_nu):
    if fam == VMF:
        return -s
    if fam == EPA:
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log1p(-np.minimum(s, 1.0))
        out[s >= 1.0] = -np.inf
        return out
    return _np_log_softplus(nu * (1.0 - s)) - log_sfp_nu


def np_log_kernel_matrix(G, inv_h2, fam, nu, product):
    """log L_h between every evaluation/sample pair; G has shape (r, m, n)."""
    r = G.shape[0]
    log_sfp_nu = math.log(math.log1p(math.exp(-nu)) + nu) if fam == SFP else 0.0
    if product or fam == VMF:
        out = np.zeros(G.shape[1:])
        for j in range(r):
            s = np.maximum(1.0 - G[j], 0.0) * inv_h2[j]
            out += _np_log_profile(s, fam, nu, log_sfp_nu)
        return out
    S = np.zeros(G.shape[1:])
    for j in range(r):
        S += np.maximum(1.0 - G[j], 0.0) * inv_h2[j]
    return _np_log_profile(S, fam, nu, log_sfp_nu)


def np_row_logsumexp(A):
    """Row-wise log-sum-exp; rows of all -inf give -inf."""
    M = np.max(A, axis=1)
    safe = np.where(np.isfinite(M), M, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.sum(np.exp(A - safe[:, None]), axis=1))


def np_group_logsumexp(A, labels, k):
    """out[i, g] = log sum_{l: labels[l] == g} exp(A[i, l])."""
    n = A.shape[0]
    out = np.empty((n, k))
    for g in range(k):
        cols = labels == g
        out[:, g] = np_row_logsumexp(A[:, cols]) if np.any(cols) else -np.inf
    return out


# -- numba versions --------------------------------------------------------------

if _HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def _nb_log_profile(s, fam, nu, log_sfp_nu):
        if fam == 0:
            return -s
        if fam == 1:
            if s >= 1.0:
                return -np.inf
            return math.log1p(-s)
        x = nu * (1.0 - s)
        if x < -30.0:
            return x - 0.5 * math.exp(x) - log_sfp_nu
        if x > 30.0:
            sp = x + math.log1p(math.exp(-x))
        else:
            sp = math.log1p(math.exp(x))
        return math.log(sp) - log_sfp_nu

    @numba.njit(cache=True, parallel=True)
    def nb_log_kernel_matrix(G, inv_h2, fam, nu, product):
        r, m, n = G.shape
        out = np.empty((m, n))
        log_sfp_nu = math.log(math.log1p(math.exp(-nu)) + nu) if fam == 2 else 0.0
        for i in numba.prange(m):
            for k in range(n):
                if product or fam == 0:
                    acc = 0.0
                    for j in range(r):
                        s = max(1.0 - G[j, i, k], 0.0) * inv_h2[j]
                        acc += _nb_log_profile(s, fam, nu, log_sfp_nu)
                    out[i, k] = acc
                else:
                    S = 0.0
                    for j in range(r):
                        S += max(1.0 - G[j, i, k], 0.0) * inv_h2[j]
                    out[i, k] = _nb_log_profile(S, fam, nu, log_sfp_nu)
        return out

    @numba.njit(cache=True, parallel=True)
    def nb_row_logsumexp(A):
        m, n = A.shape
        out = np.empty(m)
        for i in numba.prange(m):
            mx = -np.inf
            for k in range(n):
                if A[i, k] > mx:
                    mx = A[i, k]
            if mx == -np.inf:
                out[i] = -np.inf
                continue
            acc = 0.0
            for k in range(n):
                acc += math.exp(A[i, k] - mx)
            out[i] = mx + math.log(acc)
        return out

    @numba.njit(cache=True)
    def nb_group_logsumexp(A, labels, k):
        n = A.shape[0]
        out = np.empty((n, k))
        mx = np.empty(k)
        acc = np.empty(k)
        for i in range(n):
            for g in range(k):
                mx[g] = -np.inf
                acc[g] = 0.0
            for l in range(A.shape[1]):
                v = A[i, l]
                g = labels[l]
                if v > mx[g]:
                    mx[g] = v
            for l in range(A.shape[1]):
                g = labels[l]
                if mx[g] > -np.inf:
                    acc[g] += math.exp(A[i, l] - mx[g])
            for g in range(k):
                out[i, g] = mx[g] + math.log(acc[g]) if mx[g] > -np.inf else -np.inf
        return out


# -- dispatch ------------------------------------------------------------------------

def log_kernel_matrix(G, inv_h2, fam, nu=0.0, product=True):
    G = np.ascontiguousarray(G, dtype=float)
    inv_h2 = np.ascontiguousarray(inv_h2, dtype=float)
    if numba_enabled():
        return nb_log_kernel_matrix(G, inv_h2, int(fam), float(nu), bool(product))
    return np_log_kernel_matrix(G, inv_h2, int(fam), float(nu), bool(product))


def row_logsumexp(A):
    A = np.ascontiguousarray(A, dtype=float)
    if numba_enabled():
        return nb_row_logsumexp(A)
    return np_row_logsumexp(A)


def group_logsumexp(A, labels, k):
    A = np.ascontiguousarray(A, dtype=float)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if numba_enabled():
        return nb_group_logsumexp(A, labels, int(k))
    return np_group_logsumexp(A, labels, int(k))
