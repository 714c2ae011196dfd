"""Bandwidth selectors: PvMF rule of thumb, AMISE closed forms, and the
least-squares / likelihood cross-validation criteria."""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import AllNegInfinity, NoConvergence, SampleTooSmall, UnsupportedKernel
from .kde import KdeModel, loo_log_kde
from .kernels import KernelSpec, kernel_moments
from .polycore import Dims, PolySample, as_bandwidths, block_gram
from .specfun import bessel_ratio_A, inv_bessel_ratio, log_bessel_i, log_sphere_area

__all__ = [
    "CurvatureMatrix",
    "SelectorResult",
    "kappa_mle",
    "curvature_matrix",
    "marginal_rot",
    "rot_bandwidth",
    "rot_residual",
    "amise_bandwidth",
    "amise_value",
    "lscv_loss",
    "lcv_loss",
    "critical_lcv_bandwidth",
    "select_bandwidth_cv",
]

RESULTANT_CLAMP = 1.0 - 1e-12


@dataclass(frozen=True)
class CurvatureMatrix:
    """r x r curvature matrix R(kappa) of a PvMF reference density."""

    R: np.ndarray
    kappa: np.ndarray
    dims: Dims


@dataclass
class SelectorResult:
    h: np.ndarray
    method: str
    residual: float = None
    loss: float = None
    iterations: int = 0
    converged: bool = True
    extra: dict = field(default_factory=dict)


# -- rule of thumb ---------------------------------------------------------------------

def kappa_mle(sample: PolySample) -> np.ndarray:
    """Blockwise vMF concentration MLEs, A_d^{-1}(mean resultant length)."""
    if sample.n < 1:
        raise SampleTooSmall("need at least one point")
    out = []
    for blk, d in zip(sample.blocks(), sample.dims.d):
        rbar = float(np.linalg.norm(blk.mean(axis=0)))
        if rbar > RESULTANT_CLAMP:
            warnings.warn(f"mean resultant length {rbar:.17g} clamped to 1 - 1e-12", RuntimeWarning)
            rbar = RESULTANT_CLAMP
        out.append(inv_bessel_ratio(d, rbar))
    return np.array(out)


def _log_R0(d, kappa):
    if kappa <= 0:
        return -log_sphere_area(d)
    nu = 0.5 * (d - 1)
    # scaled Bessel values: e^{2k} / (e^{k})^2 cancels
    return (nu * math.log(kappa) + log_bessel_i(nu, 2.0 * kappa, scaled=True)
            - 2.0 * log_bessel_i(nu, kappa, scaled=True)
            - d * math.log(2.0) - 0.5 * (d + 1) * math.log(math.pi))


def curvature_matrix(kappa, dims) -> CurvatureMatrix:
    """R(kappa) = 1/4 [diag(v)/2 + (u u')^o] prod_j R_0(kappa_j)."""
    dims = Dims.of(dims)
    kappa = np.asarray(kappa, dtype=float).ravel()
    if kappa.size != dims.r or np.any(kappa < 0):
        raise ValueError("kappa must be a nonnegative vector of length r")
    d = np.asarray(dims.d, dtype=float)
    ratio = np.array([float(bessel_ratio_A(dj, 2.0 * kj)) for dj, kj in zip(dims.d, kappa)])
    v = d * kappa * (2.0 * (2.0 + d) * kappa - (d * d - d + 2.0) * ratio)
    u = d * kappa * ratio
    uu = np.outer(u, u)
    np.fill_diagonal(uu, 0.0)
    log_prod = sum(_log_R0(dj, kj) for dj, kj in zip(dims.d, kappa))
    R = 0.25 * (0.5 * np.diag(v) + uu) * math.exp(log_prod)
    return CurvatureMatrix(R, kappa, dims)


def _moments(spec: KernelSpec, dims: Dims):
    """(b vector, v scalar) entering the AMISE for this kernel and polysphere."""
    if spec.is_product:
        ms = [kernel_moments(spec, dj) for dj in dims.d]
        return np.array([m.b_d for m in ms]), float(np.prod([m.v_d for m in ms]))
    m = kernel_moments(spec, dims.d_tilde)
    return np.full(dims.r, m.b_d), m.v_d


def marginal_rot(kappa, dims, n) -> np.ndarray:
    """Per-sphere closed-form starters (vMF-kernel rule of thumb on each S^{d_j})."""
    dims = Dims.of(dims)
    out = []
    for d, k in zip(dims.d, np.asarray(kappa, dtype=float)):
        if k <= 0:
            out.append(math.inf)
            continue
        nu = 0.5 * (d - 1)
        # scaled Bessel values: the e^{2k} factors of numerator and denominator cancel
        la = log_bessel_i(nu + 1.0, 2.0 * k, scaled=True)
        lb = log_bessel_i(nu + 2.0, 2.0 * k, scaled=True)
        den = np.logaddexp(math.log(2.0 * d) + la, math.log((2.0 + d) * k) + lb)
        logh = (math.log(4.0) + 0.5 * math.log(math.pi) + 2.0 * log_bessel_i(nu, k, scaled=True)
                - 0.5 * (d + 1) * math.log(k) - den - math.log(n)) / (4.0 + d)
        out.append(math.exp(logh))
    return np.array(out)


def _log_system(y, R, b, v, dvec, n):
    """Log form of the ROT/AMISE stationarity system and its Jacobian in y = log h."""
    h2 = np.exp(2.0 * y)
    q = h2 * b
    Rq = R @ q
    G = (math.log(4.0) + np.log(Rq) + 2.0 * y + np.log(b) + math.log(n) + float(dvec @ y)
         - math.log(v) - np.log(dvec))
    J = 2.0 * R * q[None, :] / Rq[:, None] + 2.0 * np.eye(y.size) + dvec[None, :]
    return G, J


def rot_residual(h, curv: CurvatureMatrix, spec: KernelSpec, n):
    """Raw residual vector 4 R(h^2 b) h b - v/(n rho(h)) d/h of the stationarity system."""
    dims = curv.dims
    h = as_bandwidths(h, dims)
    b, v = _moments(spec, dims)
    d = np.asarray(dims.d, dtype=float)
    rho = float(np.prod(h ** d))
    return 4.0 * (curv.R @ (h * h * b)) * h * b - v / (n * rho) * d / h


def _solve_system(curv, spec, n, h0, maxiter=100, tol=1e-14):
    dims = curv.dims
    b, v = _moments(spec, dims)
    dvec = np.asarray(dims.d, dtype=float)
    if np.any(np.diag(curv.R) <= 0) or not np.all(np.isfinite(curv.R)):
        return h0, False, 0, math.inf
    y = np.log(h0)
    G, J = _log_system(y, curv.R, b, v, dvec, n)
    norm = float(np.max(np.abs(G)))
    it = 0
    for it in range(1, maxiter + 1):
        if norm < tol:
            break
        step = np.linalg.solve(J, G)
        lam = 1.0
        while True:
            y_new = y - lam * step
            G_new, J_new = _log_system(y_new, curv.R, b, v, dvec, n)
            n_new = float(np.max(np.abs(G_new)))
            if np.isfinite(n_new) and n_new < norm:
                break
            lam *= 0.5
            if lam < 1e-10:
                break
        if lam < 1e-10:
            # no further descent possible: accept only if already at rounding level
            break
        y, G, J, norm = y_new, G_new, J_new, n_new
    return np.exp(y), norm < 1e-12, it, norm


def rot_bandwidth(sample: PolySample, spec: KernelSpec = KernelSpec()) -> SelectorResult:
    """Rule-of-thumb plug-in bandwidths under a PvMF reference density."""
    if sample.n < 2:
        raise SampleTooSmall("rule of thumb needs n >= 2")
    dims = sample.dims
    kappa = kappa_mle(sample)
    h0 = marginal_rot(kappa, dims, sample.n)
    curv = curvature_matrix(kappa, dims)
    if not np.all(np.isfinite(h0)):
        raise NoConvergence("a block has zero estimated concentration", fallback=h0)
    h, ok, it, lognorm = _solve_system(curv, spec, sample.n, h0)
    res = float(np.max(np.abs(rot_residual(h, curv, spec, sample.n))))
    if not ok:
        raise NoConvergence(f"ROT Newton stalled (log residual {lognorm:.3g})",
                            fallback=SelectorResult(h0, "rot-marginal", res, iterations=it,
                                                    converged=False))
    return SelectorResult(h, "rot", residual=res, iterations=it,
                          extra={"kappa": kappa, "start": h0, "rel_residual": math.expm1(lognorm)})


def amise_value(curv: CurvatureMatrix, spec: KernelSpec, h, n) -> float:
    dims = curv.dims
    h = as_bandwidths(h, dims)
    b, v = _moments(spec, dims)
    q = h * h * b
    return float(q @ curv.R @ q + v / (n * np.prod(h ** np.asarray(dims.d, dtype=float))))


def amise_bandwidth(curv, spec: KernelSpec, dims, n, common: bool = True) -> SelectorResult:
    """AMISE-optimal bandwidth.

    ``curv`` is a CurvatureMatrix or a scalar R(laplacian f) for a common
    dimension. With ``common`` the equal-bandwidth closed form is used;
    otherwise the full stationarity system is solved.
    """
    dims = Dims.of(dims)
    b, v = _moments(spec, dims)
    dt = dims.d_tilde
    if not isinstance(curv, CurvatureMatrix):
        if len(set(dims.d)) != 1:
            raise ValueError("a scalar curvature needs a common dimension")
        bRb = b[0] ** 2 * float(curv)
        h = (dt * v / (4.0 * bRb * n)) ** (1.0 / (dt + 4.0))
        val = h**4 * bRb + v / (n * h**dt)
        return SelectorResult(np.full(dims.r, h), "amise", loss=val)
    if common:
        h = (dt * v / (4.0 * float(b @ curv.R @ b) * n)) ** (1.0 / (dt + 4.0))
        hv = np.full(dims.r, h)
        return SelectorResult(hv, "amise", loss=amise_value(curv, spec, hv, n))
    h0 = np.full(dims.r, (dt * v / (4.0 * float(b @ curv.R @ b) * n)) ** (1.0 / (dt + 4.0)))
    h, ok, it, lognorm = _solve_system(curv, spec, n, h0)
    if not ok:
        raise NoConvergence("AMISE system did not converge", fallback=h0)
    return SelectorResult(h, "amise", residual=float(np.max(np.abs(rot_residual(h, curv, spec, n)))),
                          loss=amise_value(curv, spec, h, n), iterations=it)


# -- cross-validation --------------------------------------------------------------------

def _log_cvec(dims, kappas):
    """log prod_j c^vMF_{d_j}(kappa_j), vectorized over leading axes of kappas."""
    kappas = np.asarray(kappas, dtype=float)
    out = np.zeros(kappas.shape[:-1])
    for j, d in enumerate(dims.d):
        k = kappas[..., j]
        nu = 0.5 * (d - 1)
        with np.errstate(divide="ignore"):
            val = nu * np.log(k) - 0.5 * (d + 1) * math.log(2 * math.pi) - log_bessel_i(nu, k)
        out = out + np.where(k > 0, val, -log_sphere_area(d))
    return out


def lscv_loss(sample: PolySample, spec: KernelSpec, h) -> float:
    """Least-squares CV loss in closed form (vMF product kernel only)."""
    if spec.family != "vmf":
        raise UnsupportedKernel("closed-form LSCV is available for the vMF kernel only")
    n = sample.n
    if n < 2:
        raise SampleTooSmall("LSCV needs n >= 2")
    dims = sample.dims
    h = as_bandwidths(h, dims)
    kap = 1.0 / h**2
    logc = float(_log_cvec(dims, kap))
    G = block_gram(dims, sample.X)                       # (r, n, n)
    iu = np.triu_indices(n, 1)
    Gp = G[:, iu[0], iu[1]].T                             # (npairs, r)
    norms = np.sqrt(np.clip(2.0 + 2.0 * Gp, 0.0, None))   # ||X_il + X_jl||
    logA = 2.0 * logc - math.log(n) - float(_log_cvec(dims, 2.0 * kap))
    logB = math.log(2.0) + 2.0 * logc - 2.0 * math.log(n) + logsumexp(-_log_cvec(dims, norms * kap))
    logC = (math.log(4.0) + logc - math.log(n) - math.log(n - 1)
            + logsumexp(Gp @ kap))
    return math.exp(logA) + math.exp(logB) - math.exp(logC)


def lcv_loss(sample: PolySample, spec: KernelSpec, h) -> float:
    """Pseudo log-likelihood sum_i log f_hat_{-i}(X_i); may be -inf for Epa."""
    model = KdeModel(sample, h, spec)
    return float(np.sum(loo_log_kde(model)))


def critical_lcv_bandwidth(sample: PolySample) -> float:
    """Smallest common Epa bandwidth with finite leave-one-out likelihood."""
    if sample.n < 2:
        raise SampleTooSmall("need n >= 2")
    G = block_gram(sample.dims, sample.X)
    M = np.max(1.0 - G, axis=0)
    np.fill_diagonal(M, np.inf)
    val = float(np.max(np.min(M, axis=1)))
    return math.sqrt(max(val, 0.0))


def _maximize_log(fun, lo, hi, xtol=1e-6):
    """Maximize fun(h) over log h in [log lo, log hi] (bounded Brent search)."""
    def neg(y):
        v = fun(math.exp(y))
        return math.inf if not np.isfinite(v) or v == -math.inf else -v
    res = optimize.minimize_scalar(neg, bounds=(math.log(lo), math.log(hi)), method="bounded",
                                   options={"xatol": xtol})
    return math.exp(res.x), -res.fun, res.nfev


def select_bandwidth_cv(sample: PolySample, spec: KernelSpec = KernelSpec(), method: str = "lcv",
                        search: str = "common", sweeps: int = 3) -> SelectorResult:
    """LSCV or LCV bandwidth by bounded search in log h.

    ``search='per-sphere'`` runs coordinate-wise sweeps starting at the ROT
    vector and is therefore an approximation to the joint optimum.
    """
    if sample.n < 2:
        raise SampleTooSmall("cross-validation needs n >= 2")
    method = method.lower()
    if method not in ("lcv", "lscv"):
        raise ValueError("method must be 'lcv' or 'lscv'")
    if method == "lscv" and spec.family != "vmf":
        raise UnsupportedKernel("LSCV is provided for the vMF kernel only")
    dims = sample.dims
    try:
        rot = rot_bandwidth(sample, spec)
        h_rot = rot.h
        curv = curvature_matrix(rot.extra["kappa"], dims)
    except NoConvergence as exc:
        fb = exc.fallback
        h_rot = fb.h if isinstance(fb, SelectorResult) else np.asarray(fb, dtype=float)
        h_rot = np.where(np.isfinite(h_rot), h_rot, 1.0)
        curv = None
    floor = None
    if spec.family == "epa" and method == "lcv":
        floor = critical_lcv_bandwidth(sample) * (1.0 + 1e-6)
        if floor == 0.0:
            floor = None

    if method == "lcv":
        def crit(hv):
            return lcv_loss(sample, spec, hv)
    else:
        def crit(hv):
            return -lscv_loss(sample, spec, hv)

    if search == "common":
        if curv is not None and np.all(np.diag(curv.R) > 0):
            h0 = float(amise_bandwidth(curv, spec, dims, sample.n).h[0])
        else:
            h0 = float(np.exp(np.mean(np.log(h_rot))))
        lo = floor if floor is not None else 0.05 * h0
        hi = max(10.0 * h0, 2.0 * lo)
        hbest, val, nfev = _maximize_log(lambda x: crit(np.full(dims.r, x)), lo, hi)
        if not np.isfinite(val):
            raise AllNegInfinity("cross-validation loss is -inf on the whole bracket")
        loss = -val if method == "lscv" else val
        return SelectorResult(np.full(dims.r, hbest), method, loss=loss, iterations=nfev,
                              extra={"bracket": (lo, hi)})
    if search != "per-sphere":
        raise ValueError("search must be 'common' or 'per-sphere'")
    h = np.array(h_rot, dtype=float)
    if floor is not None:
        h = np.maximum(h, 1.05 * floor)
    total = 0
    val = crit(h)
    for _ in range(sweeps):
        for j in range(dims.r):
            lo = floor if floor is not None else 0.05 * h_rot[j]
            hi = max(10.0 * h_rot[j], 2.0 * lo)

            def one(x, j=j):
                hv = h.copy()
                hv[j] = x
                return crit(hv)
            xj, vj, nfev = _maximize_log(one, lo, hi)
            total += nfev
            if np.isfinite(vj) and vj >= val:
                h[j], val = xj, vj
    if not np.isfinite(val):
        raise AllNegInfinity("cross-validation loss is -inf at every visited bandwidth")
    loss = -val if method == "lscv" else val
    return SelectorResult(h, method, loss=loss, iterations=total, extra={"floor": floor})
