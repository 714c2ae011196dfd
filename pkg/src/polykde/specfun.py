"""Special functions: scaled Bessel functions, Bessel ratios and their
inverse, real-order polylogarithms on the negative axis, and the CDF of one
coordinate of a uniform point on a sphere."""

import math

import numpy as np
from scipy import integrate, special

from .errors import RhoOutOfRange

__all__ = [
    "log_bessel_i",
    "bessel_ratio_A",
    "inv_bessel_ratio",
    "polylog",
    "polylog_neg_exp",
    "proj_unif_cdf",
    "log_sphere_area",
    "softplus",
]

_LOG_2PI = math.log(2.0 * math.pi)


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    return np.logaddexp(0.0, x)


def log_sphere_area(d):
    """log of the surface area of S^d, 2 pi^{(d+1)/2} / Gamma((d+1)/2)."""
    return math.log(2.0) + 0.5 * (d + 1) * math.log(math.pi) - special.gammaln(0.5 * (d + 1))


def log_bessel_i(nu, x, scaled: bool = False):
    """Natural log of the modified Bessel function I_nu(x), x >= 0.

    With ``scaled`` the result is log(e^{-x} I_nu(x)). Built on scipy's
    ``ive``; where that overflows or returns nan (x beyond ~1e9) the Hankel
    large-argument expansion is used, and where it underflows (tiny x
    relative to nu) the leading power-series terms.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    with np.errstate(divide="ignore"):
        out = np.log(special.ive(nu, x))
    big = ~np.isfinite(out) & (x > 1e3 * (nu + 1.0))
    if np.any(big):
        xb = x[big]
        out[big] = -0.5 * np.log(2.0 * np.pi * xb) + np.log(_hankel_series(nu, xb))
    bad = ~np.isfinite(out) & (x > 0)
    if np.any(bad):
        xb = x[bad]
        # log of first two series terms, then rescaled
        lead = nu * np.log(xb / 2.0) - special.gammaln(nu + 1.0)
        out[bad] = lead + np.log1p(xb * xb / (4.0 * (nu + 1.0))) - xb
    if not scaled:
        out = out + x
    zero = x == 0
    if np.any(zero):
        out[zero] = 0.0 if nu == 0 else -np.inf
    return out[0] if scalar else out


def _hankel_series(nu, x, terms=4):
    """1 - (mu-1)/(8x) + (mu-1)(mu-9)/(2!(8x)^2) - ... for I_nu at large x."""
    mu = 4.0 * nu * nu
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(1, terms + 1):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        total = total + term
    return total


def bessel_ratio_A(d, x):
    """A_d(x) = I_{(d+1)/2}(x) / I_{(d-1)/2}(x), the vMF mean resultant length."""
    x = np.asarray(x, dtype=float)
    nu = 0.5 * (d - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = special.ive(nu + 1.0, x)
        den = special.ive(nu, x)
        out = num / den
    big = ~np.isfinite(out) & (x > 1e3 * (nu + 1.0))
    if np.any(big):
        xb = x[big] if out.ndim else x
        val = _hankel_series(nu + 1.0, xb) / _hankel_series(nu, xb)
        if out.ndim:
            out = out.copy()
            out[big] = val
        else:
            out = val
    # small x: series A_d(x) ~ x/(d+1) (1 - x^2/((d+1)(d+3)))
    small = (x < 1e-3 * (d + 1)) | ~np.isfinite(out)
    if np.any(small):
        xs = x[small] if out.ndim else x
        approx = xs / (d + 1.0) * (1.0 - xs * xs / ((d + 1.0) * (d + 3.0)))
        if out.ndim:
            out = out.copy()
            out[small] = approx
        else:
            out = approx
    return out[()] if np.ndim(out) == 0 else out


def _bessel_ratio_scalar(d, x):
    return float(bessel_ratio_A(d, float(x)))


def inv_bessel_ratio(d: int, rho: float, tol: float = 1e-13, maxiter: int = 50) -> float:
    """Solve A_d(kappa) = rho for kappa >= 0 (vMF concentration MLE)."""
    rho = float(rho)
    if not (0.0 <= rho < 1.0):
        raise RhoOutOfRange(f"rho must lie in [0, 1), got {rho!r}")
    if rho == 0.0:
        return 0.0
    kappa = rho * (d + 1.0 - rho * rho) / (1.0 - rho * rho)
    # bracket maintained for safeguarding
    lo, hi = 0.0, math.inf
    for _ in range(maxiter):
        a = _bessel_ratio_scalar(d, kappa)
        f = a - rho
        if f > 0:
            hi = min(hi, kappa)
        else:
            lo = max(lo, kappa)
        if abs(f) <= tol * rho:
            return kappa
        deriv = 1.0 - a * a - d * a / kappa
        step = f / deriv if deriv > 0 else math.inf
        new = kappa - step
        if not (lo < new < hi) or not math.isfinite(new):
            new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * kappa
        if abs(new - kappa) <= 1e-15 * kappa:
            return new
        kappa = new
    return kappa


# -- polylogarithm ---------------------------------------------------------

def _eta_even(k):
    """Dirichlet eta at 2k, with eta(0) = 1/2."""
    if k == 0:
        return 0.5
    return (1.0 - 2.0 ** (1 - 2 * k)) * special.zeta(2 * k, 1)


def _polylog_series(s, z):
    total = 0.0
    zk = 1.0
    for k in range(1, 2000):
        zk *= z
        term = zk / k**s
        total += term
        if abs(term) < 1e-17 * max(abs(total), 1e-300):
            break
    return total


def _polylog_asymptotic(s, w):
    """Li_s(-e^w) for large w: -sum_k 2 eta(2k) w^{s-2k} / Gamma(s+1-2k).

    Terminates for integer s; otherwise truncated at the smallest term.
    The omitted remainder is O(e^{-w}).
    """
    total = 0.0
    prev = math.inf
    logw = math.log(w)
    for k in range(0, 200):
        g = s + 1.0 - 2 * k
        if g <= 0 and float(g).is_integer():
            break  # 1/Gamma vanishes: the sum terminates
        lg = special.gammaln(g)
        sign = special.gammasgn(g)
        term = 2.0 * _eta_even(k) * sign * math.exp((s - 2 * k) * logw - lg)
        if abs(term) > prev:
            break
        total += term
        prev = abs(term)
        if abs(term) < 1e-18 * abs(total):
            break
    return -total


def _polylog_quad(s, w):
    """Li_s(-e^w) from -Gamma(s)^{-1} int_0^inf t^{s-1} / (e^{t-w} + 1) dt."""

    def logf(t):
        return (s - 1.0) * math.log(t) - float(np.logaddexp(0.0, t - w))

    # scale by the peak of the log integrand
    grid = np.linspace(1e-9, max(w, 0.0) + 4 * s + 60.0, 400)
    vals = (s - 1.0) * np.log(grid) - np.logaddexp(0.0, grid - w)
    M = float(np.max(vals))
    tpk = float(grid[np.argmax(vals)])

    if s < 1.0:
        # t^{s-1} is singular at 0: absorb it with the weighted rule there
        def f(t):
            return math.exp(-float(np.logaddexp(0.0, t - w)) - M)

        first = max(tpk, max(w, 0.0), 1.0)
        v0, _ = integrate.quad(f, 0.0, first, weight="alg", wvar=(s - 1.0, 0.0), limit=200)
        v1, _ = integrate.quad(lambda t: math.exp(logf(t) - M), first, math.inf, limit=200,
                               epsabs=0.0, epsrel=1e-13)
        return -math.exp(M + math.log(v0 + v1) - special.gammaln(s))

    def f(t):
        return math.exp(logf(t) - M)

    pts = sorted({p for p in (tpk, max(w, 0.0)) if p > 0})
    upper = max(w, 0.0) + 4 * s + 80.0
    edges = [0.0] + pts + [upper]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            v, _ = integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-13)
            total += v
    v, _ = integrate.quad(f, upper, math.inf, limit=200, epsabs=0.0, epsrel=1e-13)
    total += v
    return -math.exp(M + math.log(total) - special.gammaln(s))


def polylog_neg_exp(s, w):
    """Li_s(-e^w) for real s > 0 and real w, without forming e^w."""
    s = float(s)
    w = float(w)
    if s == 1.0:
        return -float(np.logaddexp(0.0, w))
    if s == 2.0:
        if w <= 0:
            return float(special.spence(1.0 + math.exp(w)))
        # inversion formula
        return -math.pi**2 / 6.0 - 0.5 * w * w - float(special.spence(1.0 + math.exp(-w)))
    if w <= -math.log(2.0):
        return _polylog_series(s, -math.exp(w))
    if w > 50.0:
        return _polylog_asymptotic(s, w)
    return _polylog_quad(s, w)


def polylog(s, z):
    """Real polylogarithm Li_s(z) for s > 0 and real z < 1."""
    s = float(s)
    z = float(z)
    if z >= 1.0:
        raise ValueError("polylog requires z < 1")
    if z == 0.0:
        return 0.0
    if abs(z) <= 0.5:
        return _polylog_series(s, z)
    if z < 0:
        return polylog_neg_exp(s, math.log(-z))
    if s == 2.0:
        return float(special.spence(1.0 - z))
    # 0.5 < z < 1: Bose-Einstein integral
    v, _ = integrate.quad(lambda t: t ** (s - 1.0) / (math.exp(t) / z - 1.0), 0, math.inf,
                          limit=200, epsrel=1e-13)
    return v / math.gamma(s)


def polylog2_neg_exp(w):
    """Vectorized Li_2(-e^w)."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    neg = w <= 0
    out[neg] = special.spence(1.0 + np.exp(w[neg]))
    wp = w[~neg]
    out[~neg] = -np.pi**2 / 6.0 - 0.5 * wp * wp - special.spence(1.0 + np.exp(-wp))
    return out


def proj_unif_cdf(d, x):
    """CDF of gamma'X for X uniform on S^d: I_{(1+x)/2}(d/2, d/2)."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    if d == 1:
        out = 0.5 + np.arcsin(x) / np.pi
    elif d == 2:
        out = 0.5 * (x + 1.0)
    else:
        out = special.betainc(0.5 * d, 0.5 * d, 0.5 * (1.0 + x))
    return out[()] if out.ndim == 0 else out


def proj_unif_sf(d, x):
    """Upper tail 1 - F_d(x), accurate near x = 1."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    out = special.betainc(0.5 * d, 0.5 * d, 0.5 * (1.0 - x))
    return out[()] if out.ndim == 0 else out

