"""The kernel density estimator on the polysphere, evaluated in log space."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import _accel
from .errors import SampleTooSmall
from .kernels import KernelSpec, log_norm_const
from .polycore import Dims, PolySample, as_bandwidths, block_gram

__all__ = ["KdeModel", "log_kde", "loo_log_kde", "rank_by_density", "log_kernel_matrix"]

_CHUNK = 2048


@dataclass
class KdeModel:
    """Immutable bundle of sample, bandwidths, kernel and cached constant.

    ``uniform_offset`` reports densities with respect to the normalized
    uniform measure (adds log omega_d). ``None`` switches it on exactly when
    omega_d > 1.
    """

    sample: PolySample
    h: np.ndarray
    spec: KernelSpec = field(default_factory=KernelSpec)
    uniform_offset: bool = None
    norm_mode: str = "auto"
    log_c: float = field(init=False)

    def __post_init__(self):
        self.h = as_bandwidths(self.h, self.sample.dims)
        self.h.setflags(write=False)
        self.log_c = log_norm_const(self.spec, self.sample.dims, self.h, mode=self.norm_mode)
        if self.uniform_offset is None:
            self.uniform_offset = self.dims.log_area() > 0.0

    @property
    def dims(self) -> Dims:
        return self.sample.dims

    @property
    def n(self):
        return self.sample.n

    @property
    def offset(self):
        return self.dims.log_area() if self.uniform_offset else 0.0

    def with_h(self, h):
        return KdeModel(self.sample, h, self.spec, self.uniform_offset, self.norm_mode)

    def __call__(self, x):
        return log_kde(self, x)


def log_kernel_matrix(spec: KernelSpec, dims: Dims, h, X, Y=None):
    """log L((1 - Y_j'X_ij)/h_j^2) for all evaluation rows Y and sample rows X."""
    Y = X if Y is None else Y
    G = block_gram(dims, Y, X)
    return _accel.log_kernel_matrix(G, 1.0 / np.asarray(h) ** 2, _accel.FAMILY_CODE[spec.family],
                                    spec.nu, spec.is_product)


def log_kde(model: KdeModel, x):
    """log f_hat at one point (1-D input) or at every row of a matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    Y = np.atleast_2d(x)
    out = np.empty(Y.shape[0])
    base = model.log_c - math.log(model.n) + model.offset
    for a in range(0, Y.shape[0], _CHUNK):
        Lm = log_kernel_matrix(model.spec, model.dims, model.h, model.sample.X, Y[a:a + _CHUNK])
        out[a:a + _CHUNK] = _accel.row_logsumexp(Lm)
    out += base
    return out[0] if single else out


def loo_log_kde(model: KdeModel, Lmat=None):
    """Leave-one-out log densities l_i = log f_hat_{-i}(X_i)."""
    n = model.n
    if n < 2:
        raise SampleTooSmall("leave-one-out needs n >= 2")
    if Lmat is None:
        Lmat = log_kernel_matrix(model.spec, model.dims, model.h, model.sample.X)
    else:
        Lmat = Lmat.copy()
    np.fill_diagonal(Lmat, -np.inf)
    return _accel.row_logsumexp(Lmat) + model.log_c - math.log(n - 1) + model.offset


def rank_by_density(model: KdeModel, loo: bool = True):
    """Rank 1 = highest (leave-one-out) density; ties go to the lower index."""
    if model.n < 2:
        raise SampleTooSmall("ranking needs n >= 2")
    ell = loo_log_kde(model) if loo else log_kde(model, model.sample.X)
    order = np.lexsort((np.arange(model.n), -ell))
    ranks = np.empty(model.n, dtype=np.int64)
    ranks[order] = np.arange(1, model.n + 1)
    return ranks
