"""Kernel families, their normalizing constants, moments and efficiencies.

A kernel profile L acts on scaled distances s_j = (1 - x_j'y_j) / h_j^2.
Families: ``vmf`` (L = e^{-s}), ``epa`` (L = (1 - s) on [0, 1]) and ``sfp``
(softplus, L = sfp(nu (1 - s)) / sfp(nu)). Product kernels multiply the
per-sphere profiles; spherical kernels apply L to sum_j s_j.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, special

from .errors import QuadratureFailure
from .polycore import Dims, as_bandwidths
from .specfun import (log_bessel_i, log_sphere_area, polylog_neg_exp, polylog2_neg_exp, proj_unif_sf,
                      softplus)

__all__ = [
    "KernelSpec",
    "KernelMoments",
    "kernel_eval",
    "log_kernel",
    "log_profile",
    "log_norm_const",
    "log_lambda",
    "kernel_moments",
    "efficiency",
    "efficiency_closed_form",
    "amise_constant",
    "amise_rate_constant",
    "sfp_J",
]

FAMILIES = ("vmf", "epa", "sfp")
COMBINES = ("product", "spherical")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus combination rule across spheres.

    ``nu`` is the softplus sharpness and is only used by ``sfp``.
    """

    family: str = "vmf"
    combine: str = "product"
    nu: float = 10.0

    def __post_init__(self):
        fam = self.family.lower()
        comb = self.combine.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if comb not in COMBINES:
            raise ValueError(f"unknown combination rule {self.combine!r}")
        if fam == "sfp" and not (self.nu > 0):
            raise ValueError("sfp kernel needs nu > 0")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "combine", comb)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def is_product(self):
        # the vMF product and spherical kernels coincide
        return self.combine == "product" or self.family == "vmf"

    @property
    def compact(self):
        return self.family == "epa"

    def label(self):
        tag = {"vmf": "vMF", "epa": "Epa", "sfp": f"sfp{self.nu:g}"}[self.family]
        return tag + ("" if self.family == "vmf" else ("^P" if self.is_product else "^S"))


@dataclass(frozen=True)
class KernelMoments:
    b_d: float
    v_d: float
    lambda_d: float
    log_lambda_d: float


# -- profiles ---------------------------------------------------------------

def _log_softplus(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    low = x < -30.0
    out[low] = x[low] - 0.5 * np.exp(x[low])
    out[~low] = np.log(softplus(x[~low]))
    return out


def log_profile(spec: KernelSpec, s):
    """log L(s) elementwise for s >= 0 (-inf outside compact support)."""
    s = np.asarray(s, dtype=float)
    if spec.family == "vmf":
        return -s
    if spec.family == "epa":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log1p(-np.minimum(s, 1.0))
        return np.where(s < 1.0, out, -np.inf)
    nu = spec.nu
    return _log_softplus(nu * (1.0 - s)) - math.log(float(softplus(nu)))


def log_kernel(spec: KernelSpec, s):
    """log of the combined kernel; ``s`` has shape (..., r)."""
    s = np.asarray(s, dtype=float)
    if spec.is_product:
        return np.sum(log_profile(spec, s), axis=-1)
    return log_profile(spec, np.sum(s, axis=-1))


def kernel_eval(spec: KernelSpec, s):
    """Combined kernel value L(s) for a length-r vector (or stack) of s."""
    return np.exp(log_kernel(spec, s))


# -- one-sphere normalizing constants ----------------------------------------

def _log_cinv_vmf(d, h):
    kappa = 1.0 / (h * h)
    if d == 2:
        return math.log(2.0 * math.pi) + 2.0 * math.log(h) + math.log1p(-math.exp(-2.0 * kappa))
    nu = 0.5 * (d - 1)
    log_ive = float(log_bessel_i(nu, kappa, scaled=True))
    return -(nu * math.log(kappa) - 0.5 * (d + 1) * math.log(2.0 * math.pi) - log_ive)


def _log_cinv_epa(d, h):
    h2 = h * h
    if h < 1.0:
        # cancellation-free form of the same closed-form integral
        a = 0.5 * d
        f = special.hyp2f1(1.0 - a, a, a + 2.0, 0.5 * h2)
        return (log_sphere_area(d - 1) + d * math.log(h) + (a - 1.0) * math.log(2.0)
                + special.gammaln(a) - special.gammaln(a + 2.0) + math.log(f))
    if d == 1:
        m = max(-1.0, 1.0 - h2)
        val = 2.0 / h2 * ((h2 - 1.0) * math.acos(m) + math.sqrt(max(0.0, 1.0 - m * m)))
        return math.log(val)
    if d == 2:
        m = max(-1.0, 1.0 - h2)
        return math.log(math.pi * (1.0 - m) * (2.0 - (1.0 - m) / h2))
    if h2 >= 2.0:
        return log_sphere_area(d) + math.log1p(-1.0 / h2)
    m = 1.0 - h2
    val = (math.exp(log_sphere_area(d)) * (1.0 - 1.0 / h2) * float(proj_unif_sf(d, m))
           + math.exp(log_sphere_area(d - 1)) * (1.0 - m * m) ** (0.5 * d) / (d * h2))
    return math.log(val)


def _log_cinv_sfp2(nu, h):
    h2 = h * h
    wlo = nu * (1.0 - 2.0 / h2)
    diff = float(polylog2_neg_exp(np.array([wlo]))[0]) - polylog_neg_exp(2, nu)
    return math.log(2.0 * math.pi * h2) - math.log(float(softplus(nu)) * nu) + math.log(diff)


def _block_weight_logs(d, h):
    """Pieces of the angular weight in the scaled variable u = (1 - t)/h^2.

    omega_{d-1} (1-t^2)^{d/2-1} dt = omega_{d-1} h^{2d-2} u^a (U-u)^a du,
    with a = d/2 - 1 and U = 2/h^2.
    """
    a = 0.5 * d - 1.0
    return a, 2.0 / (h * h), log_sphere_area(d - 1) + (2 * d - 2) * math.log(h)


def _block_integral(spec, d, h):
    """log of int_0^U L(u) u^a (U-u)^a du times the weight constant."""
    a, U, logk = _block_weight_logs(d, h)
    if spec.family == "epa":
        b = min(U, 1.0)
        tail = None
    else:
        nu = spec.nu if spec.family == "sfp" else 1.0
        b = min(U, 1.0 + 40.0 / nu) if spec.family == "sfp" else min(U, 40.0)
        tail = (b, U) if U > b else None

    def L(u):
        return float(np.exp(log_profile(spec, u)))

    # weight u^a at 0 (integrable singularity for d = 1)
    if tail is None and b == U:
        v, err = integrate.quad(L, 0.0, U, weight="alg", wvar=(a, a), limit=400,
                                epsabs=0.0, epsrel=1e-11)
    else:
        v, err = integrate.quad(lambda u: L(u) * (U - u) ** a, 0.0, b, weight="alg",
                                wvar=(a, 0.0), limit=400, epsabs=0.0, epsrel=1e-11)
        if tail is not None:
            v2, err2 = integrate.quad(lambda u: L(u) * u**a, tail[0], tail[1], weight="alg",
                                      wvar=(0.0, a), limit=400, epsabs=0.0, epsrel=1e-11)
            v, err = v + v2, err + err2
    if not (v > 0) or err > 1e-8 * v:
        raise QuadratureFailure(f"block integral d={d}, h={h}: value {v}, error {err}")
    return logk + math.log(v)


def _log_cinv_block(spec, d, h, exact=True):
    fam = spec.family
    if fam == "vmf":
        return _log_cinv_vmf(d, h)
    if fam == "epa":
        return _log_cinv_epa(d, h)
    if d == 2:
        return _log_cinv_sfp2(spec.nu, h)
    return _block_integral(spec, d, h)


# -- spherical (non-product) constants ---------------------------------------

def _log_cinv_epa_s2(r, h):
    """(S^2)^r, common h: alternating-sum closed form."""
    h2 = h * h
    if h2 < 2.0:
        return r * math.log(2.0 * math.pi * h2) - special.gammaln(r + 2.0)
    lo = max(0, math.ceil(r - h2 / 2.0))
    tot = 0.0
    for ell in range(lo, r + 1):
        base = 1.0 - 2.0 / h2 * (r - ell)
        tot += special.comb(r, ell, exact=True) * (-1) ** ell * base ** (r + 1)
    tot *= (-1) ** r
    return r * math.log(2.0 * math.pi * h2) - special.gammaln(r + 2.0) + math.log(tot)


def _log_cinv_sfp_s2(r, nu, h):
    """(S^2)^r, common h: alternating sum of polylogarithms."""
    h2 = h * h
    terms = []
    for ell in range(r + 1):
        w = nu * (1.0 - r / h2) + nu * (2 * ell - r) / h2
        terms.append(special.comb(r, ell, exact=True) * (-1) ** ell * polylog_neg_exp(r + 1, w))
    tot = math.fsum(terms) * (-1) ** (r - 1)
    if not tot > 0:
        raise QuadratureFailure("alternating polylog sum lost all significance")
    return r * math.log(2.0 * math.pi * h2) - math.log(float(softplus(nu))) - r * math.log(nu) + math.log(tot)


def _spherical_cubature(spec, dims, h, rtol=1e-10):
    """Nested adaptive quadrature of int L(sum u_j) prod_j w_j(u_j) du."""
    r = dims.r
    parts = [_block_weight_logs(d, hj) for d, hj in zip(dims.d, h)]
    logk = sum(p[2] for p in parts)
    errs = []

    def level(k, B):
        a, U, _ = parts[k]
        if spec.family == "epa":
            top = min(U, 1.0 - B)
            if top <= 0:
                return 0.0
        else:
            top = U
        # the profile bends at sum u = 1
        knot = 1.0 - B
        cut = knot if 0.0 < knot < top else 0.5 * top
        if k == r - 1:
            def g(u):
                return float(np.exp(log_profile(spec, B + u)))
        else:
            def g(u):
                return level(k + 1, B + u)
        tol = rtol if k == 0 else 0.01 * rtol
        v0, e0 = integrate.quad(lambda u: g(u) * (U - u) ** a, 0.0, cut, weight="alg",
                                wvar=(a, 0.0), limit=200, epsabs=0.0, epsrel=tol)
        if top == U:
            v1, e1 = integrate.quad(lambda u: g(u) * u**a, cut, top, weight="alg",
                                    wvar=(0.0, a), limit=200, epsabs=0.0, epsrel=tol)
        else:
            v1, e1 = integrate.quad(lambda u: g(u) * (u * (U - u)) ** a, cut, top,
                                    limit=200, epsabs=0.0, epsrel=tol)
        if k == 0:
            errs.append(e0 + e1)
        return v0 + v1

    val = level(0, 0.0)
    if not (val > 0) or sum(errs) > 1e-8 * val:
        raise QuadratureFailure(f"spherical cubature failed: value {val}, error {sum(errs)}")
    return logk + math.log(val)


# -- public constants --------------------------------------------------------

def log_lambda(spec: KernelSpec, d: int) -> float:
    """log of lambda_d(L) = 2^{d/2-1} omega_{d-1} int_0^inf L(s) s^{d/2-1} ds."""
    fam = spec.family
    if fam == "vmf":
        return 0.5 * d * math.log(2.0 * math.pi)
    if fam == "epa":
        return 0.5 * d * math.log(2.0 * math.pi) - special.gammaln(0.5 * d + 2.0)
    nu = spec.nu
    li = polylog_neg_exp(0.5 * d + 1.0, nu)
    return 0.5 * d * math.log(2.0 * math.pi / nu) + math.log(-li) - math.log(float(softplus(nu)))


def _exact_available(spec, dims, h):
    if spec.is_product:
        if spec.family == "sfp":
            return all(d == 2 for d in dims.d)
        return True
    return all(d == 2 for d in dims.d) and np.all(h == h[0])


def log_norm_const(spec: KernelSpec, dims, h, mode: str = "auto") -> float:
    """log c_{d,L}(h) for the combined kernel.

    ``mode`` is ``exact`` (closed forms, numerical integration where none
    exist), ``cubature`` (always integrate numerically), ``asymptotic``
    (rho(h) lambda_d(L)) or ``auto``.
    """
    dims = Dims.of(dims)
    h = as_bandwidths(h, dims)
    if mode not in ("auto", "exact", "cubature", "asymptotic"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "asymptotic":
        return -_log_cinv_asymptotic(spec, dims, h)
    if mode == "auto":
        if _exact_available(spec, dims, h):
            mode = "exact"
        elif spec.is_product:
            mode = "exact"  # one-dimensional integrals per sphere are cheap
        elif dims.r * max(dims.d) <= 8 and dims.r <= 3 and np.all(h > 0.05):
            mode = "cubature"
        else:
            return -_log_cinv_asymptotic(spec, dims, h)
    if spec.is_product:
        if mode == "cubature":
            return -sum(_block_integral(spec, d, hj) for d, hj in zip(dims.d, h))
        return -sum(_log_cinv_block(spec, d, hj) for d, hj in zip(dims.d, h))
    if mode == "exact" and all(d == 2 for d in dims.d) and np.all(h == h[0]):
        if spec.family == "epa":
            return -_log_cinv_epa_s2(dims.r, float(h[0]))
        return -_log_cinv_sfp_s2(dims.r, spec.nu, float(h[0]))
    if dims.r == 1:
        return -_block_integral(spec, dims.d[0], float(h[0]))
    return -_spherical_cubature(spec, dims, h)


def _log_cinv_asymptotic(spec, dims, h):
    logrho = float(np.sum(np.asarray(dims.d) * np.log(h)))
    if spec.is_product:
        return logrho + sum(log_lambda(spec, d) for d in dims.d)
    return logrho + log_lambda(spec, dims.d_tilde)


# -- moments -----------------------------------------------------------------

def sfp_J(d: int, nu: float) -> float:
    """J_d(nu) = int_0^inf log(1 + e^{nu(1-t)})^2 t^{d/2-1} dt."""
    return math.exp(_log_sfp_J(d, nu))


def _log_sfp_J(d, nu):
    a = 0.5 * d - 1.0

    def logg(t):
        return 2.0 * float(_log_softplus(np.array([nu * (1.0 - t)]))[0])

    grid = np.linspace(1e-9, 1.0 + 40.0 / nu + 4.0 * max(a, 1.0) / nu, 2000)
    vals = 2.0 * _log_softplus(nu * (1.0 - grid)) + a * np.log(grid)
    M = float(np.max(vals))
    split = 1.0 + 40.0 / nu
    v0, e0 = integrate.quad(lambda t: math.exp(logg(t) - M), 0.0, 1.0, weight="alg",
                            wvar=(a, 0.0), limit=400, epsabs=0.0, epsrel=1e-13)
    f = lambda t: math.exp(logg(t) + a * math.log(t) - M)  # noqa: E731
    v1, e1 = integrate.quad(f, 1.0, split, limit=400, epsabs=0.0, epsrel=1e-13)
    # beyond the split the softplus is exponential; peak of t^a e^{-2 nu t} may lie there
    tpk = max(split, a / (2.0 * nu))
    v2, e2 = integrate.quad(f, split, tpk + 1.0, limit=400, epsabs=0.0, epsrel=1e-13) if tpk > split else (0.0, 0.0)
    v3, e3 = integrate.quad(f, max(split, tpk + 1.0) if tpk > split else split, math.inf,
                            limit=400, epsabs=0.0, epsrel=1e-13)
    return M + math.log(v0 + v1 + v2 + v3)


def kernel_moments(spec: KernelSpec, d_effective: int) -> KernelMoments:
    """Bias and variance moments b_d, v_d and the mass functional lambda_d.

    For spherical kernels pass the total dimension; for product kernels the
    per-sphere dimension.
    """
    d = int(d_effective)
    if d < 1:
        raise ValueError("dimension must be >= 1")
    fam = spec.family
    if fam == "vmf":
        b = 0.5
        logv = -d * math.log(2.0 * math.sqrt(math.pi))
    elif fam == "epa":
        b = 1.0 / (d + 4.0)
        logv = (math.log(4.0) + special.gammaln(0.5 * d + 2.0) - 0.5 * d * math.log(2.0 * math.pi)
                - math.log(d + 4.0))
    else:
        nu = spec.nu
        li1 = polylog_neg_exp(0.5 * d + 1.0, nu)
        li2 = polylog_neg_exp(0.5 * d + 2.0, nu)
        b = li2 / (2.0 * nu * li1)
        logv = (d * math.log(nu) + _log_sfp_J(d, nu) - 0.5 * d * math.log(2.0 * math.pi)
                - special.gammaln(0.5 * d) - 2.0 * math.log(-li1))
    ll = log_lambda(spec, d)
    return KernelMoments(b_d=b, v_d=math.exp(logv), lambda_d=math.exp(ll), log_lambda_d=ll)


def _log_moment_pair(spec, d, r):
    """(log v, log b) that enter the AMISE for common dimension d on r spheres."""
    if spec.is_product:
        m = kernel_moments(spec, d)
        return r * math.log(m.v_d), math.log(m.b_d)
    m = kernel_moments(spec, d * r)
    return math.log(m.v_d), math.log(m.b_d)


def amise_constant(spec: KernelSpec, d: int, r: int) -> float:
    """C_{d,r}(L) = [v^{r} b^{dr/2}]^{4/(dr+4)} (size-free AMISE factor)."""
    p = d * r
    lv, lb = _log_moment_pair(spec, d, r)
    return math.exp(4.0 / (p + 4.0) * (lv + 0.5 * p * lb))


def amise_rate_constant(d: int, r: int) -> float:
    """c_{d,r} = (dr/4)^{4/(dr+4)} (1 + 4/(dr)).

    The exponent follows from minimizing h^4 B + V/(n h^{dr}).
    """
    p = d * r
    return (p / 4.0) ** (4.0 / (p + 4.0)) * (1.0 + 4.0 / p)


def efficiency(spec: KernelSpec, d: int, r: int) -> float:
    """[C(Epa^S) / C(L)]^{(dr+4)/4}, computed from the kernel moments."""
    p = d * r
    lv0, lb0 = _log_moment_pair(KernelSpec("epa", "spherical"), d, r)
    lv, lb = _log_moment_pair(spec, d, r)
    return math.exp((lv0 + 0.5 * p * lb0) - (lv + 0.5 * p * lb))


def efficiency_closed_form(spec: KernelSpec, d: int, r: int) -> float:
    """Efficiencies through their explicit Gamma/polylog expressions."""
    p = d * r
    lg = special.gammaln
    if spec.family == "vmf":
        return math.exp((p + 2) * math.log(2) + lg(p / 2 + 2) - (p / 2 + 1) * math.log(p + 4))
    if spec.family == "epa":
        if not spec.is_product:
            return 1.0
        return math.exp((1 - r) * math.log(4) + lg(p / 2 + 2) + r * (d / 2 + 1) * math.log(d + 4)
                        - r * lg(d / 2 + 2) - (p / 2 + 1) * math.log(p + 4))
    nu = spec.nu
    Lp1 = abs(polylog_neg_exp(p / 2 + 1, nu))
    Lp2 = abs(polylog_neg_exp(p / 2 + 2, nu))
    log_es = ((p / 2 + 2) * math.log(2) + lg(p / 2 + 2) + lg(p / 2) + (p / 2 + 2) * math.log(Lp1)
              - (p / 2 + 1) * math.log(p + 4) - (p / 2) * math.log(nu) - _log_sfp_J(p, nu)
              - (p / 2) * math.log(Lp2))
    if not spec.is_product:
        return math.exp(log_es)
    Ld1 = abs(polylog_neg_exp(d / 2 + 1, nu))
    Ld2 = abs(polylog_neg_exp(d / 2 + 2, nu))
    log_ratio = (r * lg(d / 2) + _log_sfp_J(p, nu) + (p / 2) * math.log(Lp2)
                 + r * (d / 2 + 2) * math.log(Ld1)
                 - lg(p / 2) - r * _log_sfp_J(d, nu) - (p / 2 + 2) * math.log(Lp1)
                 - (p / 2) * math.log(Ld2))
    return math.exp(log_es + log_ratio)
