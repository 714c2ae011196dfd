"""Polysphere data model: dimension vectors, validated samples, bandwidths
and tangent-normal geometry."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ZeroBlock

__all__ = [
    "Dims",
    "PolySample",
    "Bandwidths",
    "as_bandwidths",
    "validate_and_normalize",
    "complement_basis",
    "tangent_normal_compose",
    "sample_uniform_sphere",
    "block_gram",
    "unit_blocks",
]

NORM_GATE = 1e-6
NORM_POST = 1e-10


@dataclass(frozen=True)
class Dims:
    """Dimension vector (d_1, ..., d_r) of S^{d_1} x ... x S^{d_r}."""

    d: tuple

    def __post_init__(self):
        d = tuple(int(x) for x in np.atleast_1d(self.d))
        if len(d) < 1:
            raise DimensionMismatch("need at least one sphere")
        if any(x < 1 for x in d):
            raise DimensionMismatch(f"every sphere dimension must be >= 1, got {d}")
        object.__setattr__(self, "d", d)

    @classmethod
    def of(cls, dims):
        if isinstance(dims, Dims):
            return dims
        return cls(tuple(np.atleast_1d(dims)))

    @classmethod
    def common(cls, d, r):
        return cls((int(d),) * int(r))

    @property
    def r(self):
        return len(self.d)

    @property
    def d_tilde(self):
        return sum(self.d)

    @property
    def ambient(self):
        return self.d_tilde + self.r

    @property
    def offsets(self):
        """Start index of each block in the concatenated coordinates."""
        return np.concatenate([[0], np.cumsum(np.asarray(self.d) + 1)])

    def blocks(self, x):
        """Split the last axis of ``x`` into the r sphere blocks."""
        off = self.offsets
        return [x[..., off[j]:off[j + 1]] for j in range(self.r)]

    def block_index(self):
        """Block id of every ambient coordinate."""
        return np.repeat(np.arange(self.r), np.asarray(self.d) + 1)

    def log_area(self):
        """log omega_d = sum_j log |S^{d_j}|."""
        from .specfun import log_sphere_area
        return float(sum(log_sphere_area(dj) for dj in self.d))


def as_bandwidths(h, dims) -> np.ndarray:
    """Broadcast a scalar or length-r vector into a validated bandwidth vector."""
    dims = Dims.of(dims)
    h = np.asarray(h, dtype=float).ravel()
    if h.size == 1:
        h = np.full(dims.r, float(h[0]))
    if h.size != dims.r:
        raise DimensionMismatch(f"bandwidth vector has length {h.size}, expected {dims.r}")
    if not np.all(h > 0) or not np.all(np.isfinite(h)):
        raise ValueError(f"bandwidths must be positive and finite, got {h}")
    return h


@dataclass(frozen=True)
class Bandwidths:
    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float).ravel()
        if not np.all(h > 0):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "h", h)

    @classmethod
    def common(cls, value, r):
        return cls(np.full(int(r), float(value)))

    def rho(self, dims):
        """rho(h) = prod_j h_j^{d_j}."""
        return float(np.prod(self.h ** np.asarray(Dims.of(dims).d)))


@dataclass
class PolySample:
    """n validated points on the polysphere, optionally labelled."""

    X: np.ndarray
    dims: Dims
    labels: np.ndarray = field(default=None)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != self.dims.ambient:
            raise DimensionMismatch(
                f"sample must be n x {self.dims.ambient}, got shape {self.X.shape}")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.shape != (self.X.shape[0],):
                raise DimensionMismatch("one label per point required")
            if not np.issubdtype(lab.dtype, np.integer):
                if not np.all(lab == np.round(lab)):
                    raise ValueError("labels must be integers")
                lab = lab.astype(np.int64)
            k = int(lab.max()) + 1 if lab.size else 0
            if lab.min() < 0 or np.any(np.bincount(lab, minlength=k) == 0):
                raise ValueError("labels must be 0..k-1 with every class present")
            self.labels = lab

    @property
    def n(self):
        return self.X.shape[0]

    def blocks(self):
        return self.dims.blocks(self.X)

    def subset(self, idx):
        lab = None if self.labels is None else self.labels[idx]
        return PolySample(self.X[idx], self.dims, None if lab is None else _relabel(lab))


def _relabel(lab):
    _, inv = np.unique(lab, return_inverse=True)
    return inv


def validate_and_normalize(raw, dims, force: bool = False, labels=None) -> PolySample:
    """Check block norms and project every block onto its unit sphere.

    Blocks whose norm differs from 1 by more than 1e-6 are rejected unless
    ``force`` is set, in which case they are rescaled.
    """
    dims = Dims.of(dims)
    X = np.array(raw, dtype=float, ndmin=2)
    if X.shape[1] != dims.ambient:
        raise DimensionMismatch(f"rows have {X.shape[1]} columns, dims {dims.d} need {dims.ambient}")
    if not np.all(np.isfinite(X)):
        raise DimensionMismatch("non-finite coordinates in sample")
    off = dims.offsets
    for j in range(dims.r):
        blk = X[:, off[j]:off[j + 1]]
        nrm = np.linalg.norm(blk, axis=1)
        if np.any(nrm < 1e-12):
            i = int(np.argmax(nrm < 1e-12))
            raise ZeroBlock(f"row {i}, block {j} has zero norm")
        dev = np.abs(nrm - 1.0)
        if not force and np.any(dev > NORM_GATE):
            i = int(np.argmax(dev))
            raise DimensionMismatch(
                f"row {i}, block {j} has norm {nrm[i]:.17g}; pass force=True to rescale")
        X[:, off[j]:off[j + 1]] = blk / nrm[:, None]
    for blk in dims.blocks(X):
        assert np.all(np.abs(np.linalg.norm(blk, axis=1) - 1.0) < NORM_POST)
    return PolySample(X, dims, labels)


def complement_basis(mu) -> np.ndarray:
    """Orthonormal basis of mu's orthogonal complement, shape (d+1, d).

    Columns 2..d+1 of the Householder reflection that sends e_1 to mu; the
    reflection direction is chosen by the sign of mu_1 so it never degenerates.
    """
    mu = np.asarray(mu, dtype=float)
    p = mu.size
    e1 = np.zeros(p)
    e1[0] = 1.0
    s = 1.0 if mu[0] >= 0 else -1.0
    # reflection along v = e_1 + s mu maps e_1 to -s mu; |v|^2 >= 2
    v = e1 + s * mu
    H = -s * (np.eye(p) - 2.0 * np.outer(v, v) / (v @ v))
    return H[:, 1:]


def tangent_normal_compose(mu, t, xi, B=None):
    """y = t mu + sqrt(1 - t^2) B xi (vectorized over leading axes of t, xi)."""
    mu = np.asarray(mu, dtype=float)
    if B is None:
        B = complement_basis(mu)
    t = np.asarray(t, dtype=float)
    xi = np.asarray(xi, dtype=float)
    st = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    y = t[..., None] * mu + st[..., None] * (xi @ B.T)
    return y


def sample_uniform_sphere(d: int, rng, size=None):
    """Uniform draw(s) on S^d as normalized Gaussian vectors."""
    if d < 0:
        raise ValueError("d must be >= 0")
    shape = (d + 1,) if size is None else (int(size), d + 1)
    while True:
        z = rng.standard_normal(shape)
        nrm = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.all(nrm > 0):
            return z / nrm


def block_gram(dims: Dims, X, Y=None):
    """Stacked blockwise inner products, shape (r, n, m)."""
    Y = X if Y is None else Y
    return np.stack([a @ b.T for a, b in zip(dims.blocks(X), dims.blocks(Y))])


def unit_blocks(x, dims):
    """Return x with every block normalized (no validation)."""
    x = np.array(x, dtype=float)
    for blk in Dims.of(dims).blocks(x):
        blk /= np.linalg.norm(blk, axis=-1, keepdims=True)
    return x

