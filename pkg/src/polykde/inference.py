"""k-sample homogeneity testing: the JSD permutation test, parametric
location/scatter baselines, the affine-invariant SPD distance and FDR
adjustment."""

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy import linalg

from . import _accel
from .errors import ClassTooSmall, KNotTwo, NotSPD, SingularScatter
from .kde import log_kernel_matrix
from .kernels import KernelSpec, log_norm_const
from .polycore import PolySample, as_bandwidths
from .sampling import as_seed_sequence, make_rng

__all__ = [
    "GroupedSample",
    "TestResult",
    "jsd_statistic",
    "jsd_from_matrix",
    "permutation_test",
    "loc_scatter_statistics",
    "spd_affine_distance",
    "fdr_adjust",
    "k_sample_test",
]


@dataclass
class GroupedSample:
    """Pooled labelled sample; labels are 0..k-1."""

    sample: PolySample

    def __post_init__(self):
        if self.sample.labels is None:
            raise ValueError("a grouped sample needs labels")
        if np.any(self.sizes < 2):
            raise ClassTooSmall(f"every class needs at least 2 points, sizes are {self.sizes.tolist()}")

    @classmethod
    def from_classes(cls, *blocks, dims):
        X = np.concatenate(blocks, axis=0)
        lab = np.concatenate([np.full(len(b), j) for j, b in enumerate(blocks)])
        return cls(PolySample(X, dims, lab))

    @property
    def labels(self):
        return self.sample.labels

    @property
    def k(self):
        return int(self.labels.max()) + 1

    @property
    def n(self):
        return self.sample.n

    @property
    def sizes(self):
        return np.bincount(self.sample.labels)

    @property
    def priors(self):
        return self.sizes / self.n


@dataclass
class TestResult:
    statistic: float
    replicates: np.ndarray
    p_value: float
    seed: object
    B: int


# the estimator may dip below zero; values under this are flagged
NEGATIVE_FLAG = -0.05


# -- JSD statistic -----------------------------------------------------------------

def jsd_from_matrix(Lmat, labels, k, log_c, pooled: str = "verbatim"):
    """JSD statistic from a log-kernel matrix whose diagonal is -inf.

    ``pooled='verbatim'`` weights class m's kernel sum by pi_m inside the
    1/(n-1) factor, exactly as the estimator is defined; ``'normalized'``
    uses the plain pooled leave-one-out kde instead.
    """
    labels = np.asarray(labels)
    n = labels.size
    sizes = np.bincount(labels, minlength=k)
    if np.any(sizes < 2):
        raise ClassTooSmall("every class needs at least 2 points")
    pri = sizes / n
    GL = _accel.group_logsumexp(Lmat, labels, k)            # (n, k)
    own = GL[np.arange(n), labels]
    log_fj = log_c + own - np.log(sizes[labels] - 1.0)
    H = np.array([-np.mean(log_fj[labels == g]) for g in range(k)])
    if pooled == "verbatim":
        log_f0 = log_c - math.log(n - 1) + _logsumexp_rows(GL + np.log(pri)[None, :])
    elif pooled == "normalized":
        log_f0 = log_c - math.log(n - 1) + _logsumexp_rows(GL)
    else:
        raise ValueError("pooled must be 'verbatim' or 'normalized'")
    H0 = -np.mean(log_f0)
    return float(H0 - pri @ H)


def _logsumexp_rows(A):
    return _accel.row_logsumexp(A)


def _loo_matrix(sample, spec, h):
    L = log_kernel_matrix(spec, sample.dims, h, sample.X)
    np.fill_diagonal(L, -np.inf)
    return L


def jsd_statistic(g: GroupedSample, spec: KernelSpec, h, pooled: str = "verbatim") -> float:
    """T = H(f0) - sum_j pi_j H(f_j) with leave-one-out kdes and a shared h."""
    dims = g.sample.dims
    h = as_bandwidths(h, dims)
    log_c = log_norm_const(spec, dims, h)
    T = jsd_from_matrix(_loo_matrix(g.sample, spec, h), g.labels, g.k, log_c, pooled)
    if pooled == "normalized" and T < NEGATIVE_FLAG:
        warnings.warn(f"JSD estimate {T:.3g} is below {NEGATIVE_FLAG}; small classes bias it downwards",
                      RuntimeWarning)
    return T


# -- permutation calibration -------------------------------------------------------------

def permutation_test(g: GroupedSample, statistic_fn, B: int, seed=None,
                     plus_one: bool = False) -> TestResult:
    """Calibrate ``statistic_fn(labels)`` by B label shuffles.

    The p-value counts replicates strictly above the observed value,
    divided by B; ``plus_one`` switches to (1 + count)/(B + 1).
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    labels = g.labels
    T = float(statistic_fn(labels))
    ss = as_seed_sequence(seed)
    reps = np.empty(int(B))
    for b, child in enumerate(ss.spawn(int(B))):
        perm = make_rng(child).permutation(labels)
        reps[b] = statistic_fn(perm)
    count = int(np.sum(reps > T))
    p = (count + 1) / (B + 1) if plus_one else count / B
    return TestResult(T, reps, float(p), seed, int(B))


def _jsd_fn(g, spec, h, pooled="verbatim"):
    dims = g.sample.dims
    h = as_bandwidths(h, dims)
    log_c = log_norm_const(spec, dims, h)
    L = _loo_matrix(g.sample, spec, h)
    k = g.k
    return lambda lab: jsd_from_matrix(L, lab, k, log_c, pooled)


def k_sample_test(g: GroupedSample, spec: KernelSpec = KernelSpec(), h=None, c=1.0, B: int = 199,
                  seed=None, plus_one: bool = False, pooled: str = "verbatim"):
    """JSD permutation test; without ``h`` the bandwidth is c times the pooled ROT.

    A sequence of multipliers ``c`` returns one TestResult per value, each
    with its own derived seed.
    """
    from .bandwidth import rot_bandwidth
    if h is None:
        h_rot = rot_bandwidth(PolySample(g.sample.X, g.sample.dims), spec).h
    if np.ndim(c) > 0:
        seeds = as_seed_sequence(seed).spawn(len(c))
        return [k_sample_test(g, spec, h, float(ci), B, s, plus_one, pooled) for ci, s in zip(c, seeds)]
    hh = as_bandwidths(h, g.sample.dims) if h is not None else float(c) * h_rot
    return permutation_test(g, _jsd_fn(g, spec, hh, pooled), B, seed, plus_one)


# -- parametric baselines ---------------------------------------------------------------

def spd_affine_distance(A, B) -> float:
    """||log lambda||_2 over the generalized eigenvalues of (B, A), i.e. of A^{-1} B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    try:
        La = np.linalg.cholesky(A)
        np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("matrix is not symmetric positive definite") from exc
    # whitening: A^{-1}B is similar to La^{-1} B La^{-T}
    W = linalg.solve_triangular(La, B, lower=True)
    W = linalg.solve_triangular(La, W.T, lower=True)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))
    if np.any(lam <= 0):
        raise NotSPD("non-positive generalized eigenvalue")
    return float(np.linalg.norm(np.log(lam)))


def _class_blocks(X, labels, dims):
    return [dims.blocks(X[labels == g]) for g in (0, 1)]


def loc_scatter_statistics(g: GroupedSample, which: str = "loc", labels=None) -> float:
    """Maximum over spheres of the mean-direction gap or the scatter distance."""
    lab = g.labels if labels is None else np.asarray(labels)
    if g.k != 2:
        raise KNotTwo("location/scatter statistics are defined for two classes")
    dims = g.sample.dims
    b1, b2 = _class_blocks(g.sample.X, lab, dims)
    vals = []
    for x1, x2 in zip(b1, b2):
        if which == "loc":
            m1 = x1.mean(axis=0)
            m2 = x2.mean(axis=0)
            vals.append(np.linalg.norm(m1 / np.linalg.norm(m1) - m2 / np.linalg.norm(m2)))
        elif which == "scatter":
            S1 = x1.T @ x1 / x1.shape[0]
            S2 = x2.T @ x2 / x2.shape[0]
            for S in (S1, S2):
                if np.linalg.eigvalsh(S)[0] < 1e-12:
                    raise SingularScatter("scatter matrix is numerically singular")
            vals.append(spd_affine_distance(S1, S2))
        else:
            raise ValueError("which must be 'loc' or 'scatter'")
    return float(max(vals))


def loc_scatter_test(g: GroupedSample, which: str, B: int = 199, seed=None, plus_one=False):
    """Permutation calibration of the location or scatter statistic."""
    return permutation_test(g, lambda lab: loc_scatter_statistics(g, which, lab), B, seed, plus_one)


__all__.append("loc_scatter_test")


# -- multiplicity --------------------------------------------------------------------------

def fdr_adjust(p, method: str = "by"):
    """Step-up FDR adjusted p-values; Benjamini-Yekutieli by default, 'bh' optional."""
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranks = np.arange(1, m + 1)
    factor = np.sum(1.0 / ranks) if method.lower() == "by" else 1.0
    if method.lower() not in ("by", "bh"):
        raise ValueError("method must be 'by' or 'bh'")
    adj_sorted = np.minimum.accumulate((p[order] * m * factor / ranks)[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj_sorted, 1.0)
    return out
