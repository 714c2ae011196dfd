"""Exact samplers: von Mises-Fisher, kernel angular laws, kernels on the
polysphere and draws from a fitted kde.

Rotationally symmetric laws are simulated through the tangent-normal
decomposition y = t mu + sqrt(1 - t^2) B_mu xi, with t drawn from the
angular law and xi uniform on S^{d-1}.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import integrate, optimize

from .errors import EnvelopeViolation, UnsupportedLaw
from .kernels import KernelSpec, log_norm_const, log_profile
from .polycore import Dims, PolySample, as_bandwidths, complement_basis, sample_uniform_sphere
from .specfun import log_bessel_i, log_sphere_area, polylog2_neg_exp, polylog_neg_exp, proj_unif_cdf

__all__ = [
    "make_rng",
    "as_seed_sequence",
    "spawn_rngs",
    "AngularLaw",
    "angular_cdf",
    "angular_quantile",
    "sample_angular",
    "sample_vmf",
    "sample_vmf_angle",
    "sample_kernel_polysphere",
    "sample_kde",
    "sample_pvmf",
    "sample_small_circle",
    "vmf_log_const",
    "vmf_log_density",
]

_SLACK = 1e-12


def as_seed_sequence(seed=None):
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def make_rng(seed=None):
    """Counter-based generator (Philox); ``seed`` may be an int or SeedSequence."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def spawn_rngs(seed, k):
    """k independent substreams derived from one seed."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [make_rng(s) for s in ss.spawn(k)]


# -- vMF -----------------------------------------------------------------------------

def sample_vmf_angle(d: int, kappa: float, rng, size: int):
    """Draw T = Y'mu for Y ~ vMF(mu, kappa) on S^d (Wood's rejection scheme)."""
    size = int(size)
    if kappa <= 0:
        u = sample_uniform_sphere(d, rng, size)
        return u[:, 0]
    if d == 2:
        # exact inverse cdf: t = 1 + log(u + (1 - u) e^{-2 kappa}) / kappa
        u = rng.random(size)
        with np.errstate(divide="ignore"):
            lg = np.logaddexp(np.log(u), np.log1p(-u) - 2.0 * kappa)
        return np.clip(1.0 + lg / kappa, -1.0, 1.0)
    p1 = d  # (ambient dimension) - 1
    b = p1 / (2.0 * kappa + math.sqrt(4.0 * kappa * kappa + p1 * p1))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + p1 * math.log(1.0 - x0 * x0)
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(16, int(1.3 * (size - filled)))
        z = rng.beta(0.5 * p1, 0.5 * p1, k)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.random(k)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = kappa * w + p1 * np.log1p(-x0 * w) - c >= np.log(u)
        acc = w[ok][: size - filled]
        out[filled:filled + acc.size] = acc
        filled += acc.size
    return out


def _tangent_directions(mu, rng, size):
    """Uniform unit vectors orthogonal to each row of ``mu``."""
    z = rng.standard_normal((size, mu.shape[-1]))
    z -= np.sum(z * mu, axis=-1, keepdims=True) * mu
    return z / np.linalg.norm(z, axis=-1, keepdims=True)


def _compose_rows(mu, t, rng):
    """Rows t_i mu_i + sqrt(1 - t_i^2) xi_i with xi_i tangent at mu_i."""
    mu = np.broadcast_to(mu, (t.size, mu.shape[-1]))
    xi = _tangent_directions(mu, rng, t.size)
    st = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    y = t[:, None] * mu + st[:, None] * xi
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def sample_vmf(mu, kappa, rng, size=None):
    """vMF(mu, kappa) draws on S^d, d = len(mu) - 1."""
    mu = np.asarray(mu, dtype=float)
    d = mu.size - 1
    m = 1 if size is None else int(size)
    t = sample_vmf_angle(d, float(kappa), rng, m)
    if d == 1:
        # S^0 tangent: a random sign
        xi = rng.choice([-1.0, 1.0], size=(m, 1))
    else:
        xi = sample_uniform_sphere(d - 1, rng, m)
    B = complement_basis(mu)
    st = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    y = t[:, None] * mu + st[:, None] * (xi @ B.T)
    return y[0] if size is None else y


def sample_pvmf(mus, kappas, dims, rng, size):
    """Product of independent vMF draws, one block per sphere."""
    dims = Dims.of(dims)
    blocks = [sample_vmf(np.asarray(mu, dtype=float), k, rng, size)
              for mu, k in zip(dims.blocks(np.asarray(mus, dtype=float)), np.broadcast_to(kappas, (dims.r,)))]
    return np.concatenate(blocks, axis=1)


def sample_small_circle(mu, eta, tau, rng, size):
    """Draws on S^2 from the density proportional to exp(-eta (x'mu - tau)^2)."""
    mu = np.asarray(mu, dtype=float)
    if mu.size != 3:
        raise UnsupportedLaw("small-circle sampler is implemented on S^2")
    sd = 1.0 / math.sqrt(2.0 * eta)
    from scipy.stats import truncnorm
    a, b = (-1.0 - tau) / sd, (1.0 - tau) / sd
    t = truncnorm.rvs(a, b, loc=tau, scale=sd, size=size, random_state=rng)
    return _compose_rows(mu, np.asarray(t), rng)


# -- kernel angular laws ----------------------------------------------------------------

@dataclass(frozen=True)
class AngularLaw:
    """Law of T = Y'mu when Y has density c L((1 - y'mu)/h^2) on S^d."""

    family: str
    d: int
    h: float
    nu: float = 10.0

    @property
    def spec(self):
        return KernelSpec(self.family, "product", self.nu)

    @property
    def lower(self):
        """Left end of the support; 1 - h^2 for Epa when h < sqrt 2."""
        if self.family == "epa":
            return max(-1.0, 1.0 - self.h * self.h)
        return -1.0

    def log_c(self):
        return _law_log_c(self.family, self.d, self.h, self.nu)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        s = (1.0 - t) / self.h**2
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(np.abs(t) < 1, (1.0 - t * t) ** (0.5 * self.d - 1.0), 0.0)
        return np.exp(self.log_c() + log_sphere_area(self.d - 1) + log_profile(self.spec, s)) * w


@lru_cache(maxsize=256)
def _law_log_c(family, d, h, nu):
    return log_norm_const(KernelSpec(family, "product", nu), [d], h, mode="exact")


def angular_cdf(law: AngularLaw, t):
    """Closed-form CDF where available (Epa any d, sfp and vMF on S^2)."""
    t = np.clip(np.asarray(t, dtype=float), -1.0, 1.0)
    h2 = law.h**2
    d = law.d
    if law.family == "epa":
        m = law.lower
        tt = np.maximum(t, m)
        c = math.exp(law.log_c())
        w1 = math.exp(log_sphere_area(d - 1))
        wd = math.exp(log_sphere_area(d))
        val = (w1 * c / h2) * ((h2 - 1.0) * (wd / w1) * (proj_unif_cdf(d, tt) - proj_unif_cdf(d, m))
                              - ((1.0 - tt * tt) ** (0.5 * d) - (1.0 - m * m) ** (0.5 * d)) / d)
        return np.clip(val, 0.0, 1.0)
    if law.family == "sfp":
        if d != 2:
            raise UnsupportedLaw("sfp angular cdf is only available in closed form for d = 2")
        nu = law.nu
        lo = polylog2_neg_exp(np.array([nu * (1.0 - 2.0 / h2)]))[0]
        top = polylog_neg_exp(2, nu)
        cur = polylog2_neg_exp(np.atleast_1d(nu * (1.0 - (1.0 - t) / h2)))
        val = (lo - cur) / (lo - top)
        return np.clip(val.reshape(t.shape), 0.0, 1.0)
    kappa = 1.0 / h2
    if d == 2:
        return np.exp(kappa * (t - 1.0)) * (-np.expm1(-kappa * (t + 1.0))) / (-math.expm1(-2.0 * kappa))
    # general vMF: numerical integration of the angular density
    return np.vectorize(lambda x: integrate.quad(law.pdf, -1.0, x, limit=200, epsabs=1e-14, epsrel=1e-12)[0])(t)


def angular_quantile(law: AngularLaw, u, iters: int = 200):
    """Quantile of T: closed form for Epa on S^2, monotone bisection otherwise."""
    u = np.asarray(u, dtype=float)
    h2 = law.h**2
    if law.family == "epa" and law.d == 2:
        m = law.lower
        disc = (h2 - 1.0) ** 2 - m + (m + u * (1.0 - m)) * (2.0 * h2 - 1.0 + m)
        return np.clip(1.0 - h2 + np.sqrt(np.maximum(disc, 0.0)), m, 1.0)
    if law.family == "vmf" and law.d == 2:
        kappa = 1.0 / h2
        with np.errstate(divide="ignore"):
            lg = np.logaddexp(np.log(u), np.log1p(-u) - 2.0 * kappa)
        return np.clip(1.0 + lg / kappa, -1.0, 1.0)
    lo = np.full(u.shape, law.lower)
    hi = np.ones(u.shape)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = angular_cdf(law, mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo < 1e-15):
            break
    return 0.5 * (lo + hi)


def _log_ratio_sup(spec: KernelSpec, smax: float) -> float:
    """sup over [0, smax] of log L(s) + s, the log envelope constant versus vMF."""
    if spec.family in ("vmf", "epa"):
        return 0.0
    smax = min(smax, 1.0 + 60.0 / spec.nu + 60.0)
    grid = np.linspace(0.0, smax, 4001)
    g = log_profile(spec, grid) + grid
    i = int(np.argmax(g))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda s: -(float(log_profile(spec, s)) + s), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-12})
    return max(0.0, float(g[i]), -float(res.fun))


def _accept_log_prob(spec, S, log_M0):
    """log acceptance probability of vMF proposals with total scaled distance S."""
    lp = log_profile(spec, S) + S - log_M0
    if np.any(lp > _SLACK):
        raise EnvelopeViolation(f"acceptance ratio exp({lp.max():.3g}) exceeds 1")
    return np.minimum(lp, 0.0)


def sample_angular(law: AngularLaw, rng, size: int):
    """Draw T from the kernel angular law."""
    size = int(size)
    h2 = law.h**2
    kappa = 1.0 / h2
    if law.family == "vmf":
        return sample_vmf_angle(law.d, kappa, rng, size)
    if law.family == "epa" and law.d == 2:
        return angular_quantile(law, rng.random(size))
    spec = law.spec
    log_M0 = _log_ratio_sup(spec, 2.0 / h2)
    if law.family == "epa":
        log_c_vmf = log_norm_const(KernelSpec("vmf"), [law.d], law.h)
        accept_rate = math.exp(log_c_vmf - law.log_c())
        if accept_rate < 0.01:
            return angular_quantile(law, rng.random(size))
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(64, int(1.5 * (size - filled)))
        t = sample_vmf_angle(law.d, kappa, rng, k)
        s = (1.0 - t) / h2
        ok = np.log(rng.random(k)) < _accept_log_prob(spec, s, log_M0)
        acc = t[ok][: size - filled]
        out[filled:filled + acc.size] = acc
        filled += acc.size
    return out


# -- kernels on the polysphere --------------------------------------------------------------

def _rows_kernel_draws(spec: KernelSpec, centers, dims: Dims, h, rng):
    """One draw from L_h(., center) for every row of ``centers``."""
    m = centers.shape[0]
    blocks = dims.blocks(centers)
    if spec.is_product:
        out = []
        for blk, d, hj in zip(blocks, dims.d, h):
            t = sample_angular(AngularLaw(spec.family, d, float(hj), spec.nu), rng, m)
            out.append(_compose_rows(blk, t, rng))
        return np.concatenate(out, axis=1)
    # spherical kernel: accept-reject from the PvMF envelope
    log_M0 = _log_ratio_sup(spec, float(np.sum(2.0 / h**2)))
    result = np.empty_like(centers)
    todo = np.arange(m)
    while todo.size:
        prop, S = [], np.zeros(todo.size)
        for blk, d, hj in zip(blocks, dims.d, h):
            t = sample_vmf_angle(d, 1.0 / hj**2, rng, todo.size)
            S += (1.0 - t) / hj**2
            prop.append(_compose_rows(blk[todo], t, rng))
        ok = np.log(rng.random(todo.size)) < _accept_log_prob(spec, S, log_M0)
        result[todo[ok]] = np.concatenate(prop, axis=1)[ok]
        todo = todo[~ok]
    return result


def sample_kernel_polysphere(spec: KernelSpec, mu, h, rng, size=None, dims=None):
    """Draws from the normalized kernel density L_h(., mu) on the polysphere."""
    mu = np.asarray(mu, dtype=float)
    if dims is None:
        raise ValueError("dims is required")
    dims = Dims.of(dims)
    h = as_bandwidths(h, dims)
    if spec.family == "sfp" and spec.nu < 1.0:
        raise ValueError("the vMF envelope is only used for sfp kernels with nu >= 1")
    m = 1 if size is None else int(size)
    centers = np.broadcast_to(mu, (m, dims.ambient)).copy()
    y = _rows_kernel_draws(spec, centers, dims, h, rng)
    return y[0] if size is None else y


def sample_kde(model, m: int, rng) -> PolySample:
    """iid draws from f_hat: pick a sample point uniformly, then its kernel."""
    if m < 1:
        raise ValueError("m must be >= 1")
    idx = rng.integers(0, model.n, size=int(m))
    centers = model.sample.X[idx]
    y = _rows_kernel_draws(model.spec, centers, model.dims, model.h, rng)
    return PolySample(y, model.dims)


def vmf_log_const(d: int, kappa: float) -> float:
    """log of the vMF density constant on S^d (1/omega_d at kappa = 0)."""
    if kappa <= 0:
        return -log_sphere_area(d)
    nu = 0.5 * (d - 1)
    return (nu * math.log(kappa) - 0.5 * (d + 1) * math.log(2.0 * math.pi)
            - float(log_bessel_i(nu, kappa, scaled=True)) - kappa)


def vmf_log_density(x, mu, kappa):
    """log f_vMF(x; mu, kappa) on S^d for rows of x."""
    mu = np.asarray(mu, dtype=float)
    return vmf_log_const(mu.size - 1, kappa) + kappa * (np.asarray(x) @ mu)
