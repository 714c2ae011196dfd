"""Desk-scale simulation harnesses: kernel efficiency table, pointwise
normality study, the four-cluster versus small-circle two-sample design,
exact ISE of vMF kdes under PvMF truths, and level/power drivers."""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

from .bandwidth import amise_bandwidth, curvature_matrix, select_bandwidth_cv
from .inference import GroupedSample, k_sample_test, loc_scatter_test
from .kernels import KernelSpec, efficiency, kernel_moments
from .polycore import Dims, PolySample, as_bandwidths, block_gram
from .sampling import make_rng, sample_pvmf, sample_small_circle, sample_vmf, vmf_log_const

__all__ = [
    "efficiency_table",
    "EFFICIENCY_COLUMNS",
    "NormalityRun",
    "run_normality",
    "pvmf_log_density",
    "ise_vmf_kde",
    "e1_sample",
    "e1_pilot_bandwidth",
    "level_study",
    "power_study",
]


# -- efficiency table --------------------------------------------------------------

def EFFICIENCY_COLUMNS(nus=(1, 10, 100)):
    cols = [("vMF", KernelSpec("vmf"))]
    cols += [(f"sfpS_{nu:g}", KernelSpec("sfp", "spherical", nu)) for nu in nus]
    cols += [("EpaP", KernelSpec("epa", "product"))]
    cols += [(f"sfpP_{nu:g}", KernelSpec("sfp", "product", nu)) for nu in nus]
    return cols


def efficiency_table(ds=(1, 2, 3, 5, 10), rs=(1, 2, 3, 5, 10), nus=(1, 10, 100)):
    """Rows (r, d, {column: 100 * efficiency}) relative to the spherical Epa kernel."""
    cols = EFFICIENCY_COLUMNS(nus)
    rows = []
    for r in rs:
        for d in ds:
            rows.append({"r": int(r), "d": int(d),
                         **{name: 100.0 * efficiency(spec, int(d), int(r)) for name, spec in cols}})
    return rows


# -- PvMF helpers -------------------------------------------------------------------------

def pvmf_log_density(x, mus, kappas, dims):
    dims = Dims.of(dims)
    x = np.atleast_2d(x)
    mus = np.asarray(mus, dtype=float)
    out = np.zeros(x.shape[0])
    for xb, mb, k, d in zip(dims.blocks(x), dims.blocks(mus), np.broadcast_to(kappas, (dims.r,)), dims.d):
        out += vmf_log_const(d, float(k)) + float(k) * (xb @ mb)
    return out


def _log_c_array(d, kappa):
    """Vectorized log vMF constant on S^d (closed form on S^2)."""
    kappa = np.asarray(kappa, dtype=float)
    if d == 2:
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.log(kappa) - math.log(2 * math.pi) - kappa - np.log(-np.expm1(-2.0 * kappa))
        return np.where(kappa > 1e-8, val, -math.log(4 * math.pi))
    from scipy.special import ive
    nu = 0.5 * (d - 1)
    with np.errstate(divide="ignore"):
        val = nu * np.log(kappa) - 0.5 * (d + 1) * math.log(2 * math.pi) - np.log(ive(nu, kappa)) - kappa
    from .specfun import log_sphere_area
    return np.where(kappa > 1e-8, val, -log_sphere_area(d))


def ise_vmf_kde(X, h, dims, mus, kappas):
    """Exact ISE of the vMF product kde against a PvMF density.

    Uses the vMF product identity: integral of c(a) e^{a x'u} c(b) e^{b x'v}
    over S^d equals c(a) c(b) / c(||a u + b v||).
    """
    dims = Dims.of(dims)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    h = as_bandwidths(h, dims)
    kh = 1.0 / h**2
    kappas = np.broadcast_to(np.asarray(kappas, dtype=float), (dims.r,))
    mus = np.asarray(mus, dtype=float)
    G = block_gram(dims, X)
    t_ff = np.zeros((n, n))
    t_fg = np.zeros(n)
    t_gg = 0.0
    for j, d in enumerate(dims.d):
        lc_h = float(_log_c_array(d, kh[j]))
        lc_k = float(_log_c_array(d, kappas[j]))
        nrm = kh[j] * np.sqrt(np.clip(2.0 + 2.0 * G[j], 0.0, None))
        t_ff += 2.0 * lc_h - _log_c_array(d, nrm)
        xm = dims.blocks(X)[j] @ dims.blocks(mus)[j]
        nr2 = np.sqrt(np.clip(kh[j] ** 2 + kappas[j] ** 2 + 2.0 * kh[j] * kappas[j] * xm, 0.0, None))
        t_fg += lc_h + lc_k - _log_c_array(d, nr2)
        t_gg += 2.0 * lc_k - float(_log_c_array(d, 2.0 * kappas[j]))
    from scipy.special import logsumexp
    iff = math.exp(logsumexp(t_ff) - 2.0 * math.log(n))
    ifg = math.exp(logsumexp(t_fg) - math.log(n))
    return iff - 2.0 * ifg + math.exp(t_gg)


# -- normality experiment -------------------------------------------------------------------

@dataclass
class NormalityRun:
    d: int = 2
    r: int = 2
    kappa: tuple = (5.0, 5.0)
    deltas: tuple = (-2, -1, 0, 1, 2, 4)
    ns: tuple = (2**7, 2**9, 2**11)
    M: int = 2000
    spec: KernelSpec = field(default_factory=KernelSpec)


def run_normality(cfg: NormalityRun, seed=None):
    """Monte Carlo of the standardized kde at the mode of a PvMF density.

    Returns one dict per (n, delta) with mean/sd of Z1 and Z2 and their KS
    distances to N(0, 1). Samples are shared across deltas for a given n.
    """
    dims = Dims.common(cfg.d, cfg.r)
    kappa = np.broadcast_to(np.asarray(cfg.kappa, dtype=float), (cfg.r,)).copy()
    mu = np.concatenate([np.eye(cfg.d + 1)[0]] * cfg.r)
    spec = cfg.spec
    mom = kernel_moments(spec, cfg.d if spec.is_product else cfg.d * cfg.r)
    v = mom.v_d ** cfg.r if spec.is_product else mom.v_d
    b = mom.b_d
    curv = curvature_matrix(kappa, dims)
    C = float(amise_bandwidth(float(np.sum(curv.R)), spec, dims, 1).h[0])
    logf = float(pvmf_log_density(mu, mu, kappa, dims)[0])
    f = math.exp(logf)
    lap = f * float(np.sum(-cfg.d * kappa))                  # trace of the Hessian operator at the mode
    p = cfg.d * cfg.r
    from .kde import KdeModel, log_kde
    out = []
    ss = np.random.SeedSequence(seed)
    for n, child in zip(cfg.ns, ss.spawn(len(cfg.ns))):
        rngs = [make_rng(s) for s in child.spawn(cfg.M)]
        samples = [sample_pvmf(mu, kappa, dims, rg, n) for rg in rngs]
        for delta in cfg.deltas:
            h = C * n ** (-1.0 / (p + 4.0 + delta))
            fhat = np.empty(cfg.M)
            for m, X in enumerate(samples):
                model = KdeModel(PolySample(X, dims), h, spec, uniform_offset=False)
                fhat[m] = math.exp(log_kde(model, mu))
            scale = math.sqrt(n * h**p / (v * f))
            z1 = scale * (fhat - fhat.mean())
            z2 = scale * (fhat - f - b * lap * h * h)
            out.append({
                "n": int(n), "delta": delta, "h": h,
                "z1_mean": float(z1.mean()), "z1_sd": float(z1.std(ddof=1)),
                "z2_mean": float(z2.mean()), "z2_sd": float(z2.std(ddof=1)),
                "ks_z1": float(stats.kstest(z1, "norm").statistic),
                "ks_z2": float(stats.kstest(z2, "norm").statistic),
            })
    return out


# -- two-sample mixture design --------------------------------------------------------------

_E3 = np.array([0.0, 0.0, 1.0])
_CLUSTERS = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])


def _draw_f1(rng, m):
    which = rng.integers(0, 4, size=m)
    out = np.empty((m, 3))
    for c in range(4):
        idx = np.where(which == c)[0]
        if idx.size:
            out[idx] = sample_vmf(_CLUSTERS[c], 50.0, rng, idx.size)
    return out


def _draw_f2(rng, m):
    return sample_small_circle(_E3, 25.0, 0.0, rng, m)


def _mixture(rng, m, w1):
    from1 = rng.random(m) < w1
    out = np.empty((m, 3))
    k = int(from1.sum())
    if k:
        out[from1] = _draw_f1(rng, k)
    if m - k:
        out[~from1] = _draw_f2(rng, m - k)
    return out


def e1_sample(a: float, n1: int, n2: int, rng) -> GroupedSample:
    """Class j draws from ((1 + (-1)^j a)/2) f1 + ((1 - (-1)^j a)/2) f2 on S^2.

    f1 is four vMF(50) clusters at +-e1, +-e2; f2 the small circle
    exp(-25 (x'e3)^2). At a = 1, class 1 is pure f2 and class 2 pure f1.
    """
    X1 = _mixture(rng, n1, (1.0 - a) / 2.0)
    X2 = _mixture(rng, n2, (1.0 + a) / 2.0)
    return GroupedSample.from_classes(X1, X2, dims=Dims((2,)))


def e1_pilot_bandwidth(spec: KernelSpec, n1=50, n2=50, reps=20, seed=0):
    """Median pooled LCV bandwidth at a = 0."""
    rngs = [make_rng(s) for s in np.random.SeedSequence(seed).spawn(reps)]
    hs = []
    for rg in rngs:
        g = e1_sample(0.0, n1, n2, rg)
        pooled = PolySample(g.sample.X, g.sample.dims)
        hs.append(select_bandwidth_cv(pooled, spec, "lcv").h[0])
    return float(np.median(hs))


# -- Monte Carlo drivers --------------------------------------------------------------------

def level_study(M=500, n_per=30, kappa=5.0, B=199, spec=KernelSpec(), c=1.0, seed=0):
    """p-values of the JSD test when both classes come from one vMF on S^2."""
    mu = np.array([0.0, 0.0, 1.0])
    pvals = np.empty(M)
    for m, child in enumerate(np.random.SeedSequence(seed).spawn(M)):
        data_ss, test_ss = child.spawn(2)
        X = sample_vmf(mu, kappa, make_rng(data_ss), 2 * n_per)
        g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], n_per)))
        pvals[m] = k_sample_test(g, spec, c=c, B=B, seed=test_ss).p_value
    return pvals


def power_study(M=200, n_per=50, a=1.0, B=199, spec=KernelSpec("sfp", "product", 10.0),
                cs=(2.0, 4.0, 8.0), h_med=None, seed=0, baselines=True):
    """Rejection p-values on the mixture design for JSD at c * h_med and the baselines."""
    if h_med is None:
        h_med = e1_pilot_bandwidth(spec, n_per, n_per, seed=seed + 1)
    res = {f"jsd_c{c:g}": np.empty(M) for c in cs}
    if baselines:
        res["loc"] = np.empty(M)
        res["scatter"] = np.empty(M)
    for m, child in enumerate(np.random.SeedSequence(seed).spawn(M)):
        subs = child.spawn(len(cs) + 3)
        g = e1_sample(a, n_per, n_per, make_rng(subs[0]))
        for c, s in zip(cs, subs[1:]):
            res[f"jsd_c{c:g}"][m] = k_sample_test(g, spec, h=c * h_med, B=B, seed=s).p_value
        if baselines:
            res["loc"][m] = loc_scatter_test(g, "loc", B, subs[-2]).p_value
            res["scatter"][m] = loc_scatter_test(g, "scatter", B, subs[-1]).p_value
    return res, h_med
