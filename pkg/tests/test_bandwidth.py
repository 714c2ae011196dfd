import math

import numpy as np
import pytest
from scipy import integrate, optimize

from polykde.bandwidth import (_log_system, _moments, amise_bandwidth, amise_value, critical_lcv_bandwidth,
                               curvature_matrix, kappa_mle, lcv_loss, lscv_loss, marginal_rot, rot_bandwidth,
                               rot_residual, select_bandwidth_cv)
from polykde.errors import SampleTooSmall, UnsupportedKernel
from polykde.experiments import ise_vmf_kde
from polykde.kde import KdeModel, log_kde, loo_log_kde
from polykde.kernels import KernelSpec
from polykde.polycore import Dims, PolySample, sample_uniform_sphere
from polykde.sampling import make_rng, sample_pvmf, sample_vmf, vmf_log_const
from polykde.specfun import log_sphere_area


def circle(th):
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def random_rotation(p, rng):
    Q, R = np.linalg.qr(rng.standard_normal((p, p)))
    return Q * np.sign(np.diag(R))


def test_kappa_mle_consistency():
    x = sample_vmf(np.array([0, 0, 1.0]), 5.0, make_rng(2), 10000)
    assert kappa_mle(PolySample(x, Dims((2,))))[0] == pytest.approx(5.0, abs=0.3)


def test_kappa_mle_edge_cases():
    anti = PolySample(np.array([[1.0, 0], [-1.0, 0]]), Dims((1,)))
    assert kappa_mle(anti)[0] == pytest.approx(0.0, abs=1e-12)
    same = PolySample(np.tile([0.0, 0, 1], (5, 1)), Dims((2,)))
    with pytest.warns(RuntimeWarning):
        k = kappa_mle(same)
    assert k[0] > 1e11


def test_curvature_matches_quadrature():
    # R_jk = int psi_j psi_k f^2 over the polysphere for PvMF f
    for dims, kap in [((2,), [3.0]), ((1,), [2.0]), ((3,), [5.0]), ((2, 2), [3.0, 4.0]), ((1, 3), [1.5, 6.0])]:
        R = curvature_matrix(kap, dims).R

        def block(d, k, deg):
            c = math.exp(2 * vmf_log_const(d, k) + log_sphere_area(d - 1))
            f = lambda t: (k * (k * (1 - t * t) - d * t)) ** deg * c * math.exp(2 * k * t) * (1 - t * t) ** (d / 2 - 1)
            return integrate.quad(f, -1, 1, epsabs=0, epsrel=1e-11)[0]
        r = len(dims)
        for j in range(r):
            for l in range(r):
                val = 1.0
                for m in range(r):
                    deg = (m == j) + (m == l)
                    val *= block(dims[m], kap[m], deg)
                assert R[j, l] == pytest.approx(val, rel=1e-9)


def test_psi_values():
    d, k = 2, 3.0
    psi = lambda t: k * (k * (1 - t * t) - d * t)
    assert psi(1.0) == -d * k and psi(0.0) == k * k


def test_uniform_limit():
    from polykde.bandwidth import _log_R0
    for d in (1, 2, 5):
        assert math.exp(_log_R0(d, 1e-9)) == pytest.approx(math.exp(-log_sphere_area(d)), rel=1e-6)


def test_jacobian_against_finite_differences(rng):
    dims = Dims((1, 2, 3))
    curv = curvature_matrix([2.0, 5.0, 8.0], dims)
    b, v = _moments(KernelSpec("sfp", nu=10.0), dims)
    dvec = np.asarray(dims.d, dtype=float)
    y = np.log([0.3, 0.5, 0.4])
    G, J = _log_system(y, curv.R, b, v, dvec, 500)
    eps = 1e-6
    JF = np.empty_like(J)
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        JF[:, k] = (_log_system(y + e, curv.R, b, v, dvec, 500)[0] - _log_system(y - e, curv.R, b, v, dvec, 500)[0]) / (2 * eps)
    assert np.allclose(J, JF, atol=1e-7)


def test_rot_r1_vmf_equals_closed_form(rng):
    x = sample_vmf(np.array([1.0, 0, 0]), 7.0, rng, 300)
    s = PolySample(x, Dims((2,)))
    res = rot_bandwidth(s)
    assert res.h[0] == pytest.approx(marginal_rot(kappa_mle(s), s.dims, 300)[0], rel=1e-10)


@pytest.mark.parametrize("spec", [KernelSpec("vmf"), KernelSpec("epa"), KernelSpec("sfp", "spherical", 10.0)],
                         ids=lambda s: s.label())
def test_rot_residual_small(rng, spec):
    dims = Dims((2, 2))
    mus = np.concatenate([sample_uniform_sphere(2, rng), sample_uniform_sphere(2, rng)])
    s = PolySample(sample_pvmf(mus, [5.0, 5.0], dims, rng, 200), dims)
    res = rot_bandwidth(s, spec)
    assert res.converged and res.residual < 1e-8
    curv = curvature_matrix(res.extra["kappa"], dims)
    assert np.max(np.abs(rot_residual(res.h, curv, spec, 200))) < 1e-8


def test_equal_bandwidth_formula_is_constrained_minimizer():
    for dims, kap, spec in [((2, 2), [5.0, 3.0], KernelSpec()), ((1, 2, 3), [2.0, 4.0, 6.0], KernelSpec("epa")),
                            ((2, 2), [4.0, 4.0], KernelSpec("sfp", "spherical", 10.0))]:
        curv = curvature_matrix(kap, dims)
        closed = amise_bandwidth(curv, spec, dims, 700).h[0]
        r = len(dims)
        num = optimize.minimize_scalar(lambda y: amise_value(curv, spec, np.full(r, math.exp(y)), 700),
                                       bounds=(-6, 2), method="bounded", options={"xatol": 1e-12}).x
        assert closed == pytest.approx(math.exp(num), rel=1e-6)


def test_full_amise_system_beats_common():
    dims = Dims((2, 2))
    curv = curvature_matrix([2.0, 20.0], dims)
    com = amise_bandwidth(curv, KernelSpec(), dims, 500)
    full = amise_bandwidth(curv, KernelSpec(), dims, 500, common=False)
    assert full.loss <= com.loss
    assert full.residual < 1e-8


def test_scalar_amise_example():
    # d=2, r=1, vMF, R = 1, n = 1000; b = 1/2 and v = 1/(4 pi) on S^2
    res = amise_bandwidth(1.0, KernelSpec(), (2,), 1000)
    expected = (2 * (1 / (4 * math.pi)) / (4 * 0.25 * 1000)) ** (1 / 6)
    assert res.h[0] == pytest.approx(expected, rel=1e-12)
    assert res.h[0] == pytest.approx(0.23279, abs=1e-5)
    h2 = amise_bandwidth(1.0, KernelSpec(), (2,), 2000).h[0]
    assert h2 / res.h[0] == pytest.approx(2 ** (-1 / 6), rel=1e-12)


def test_spherical_and_product_epa_differ():
    dims = Dims((2, 2))
    curv = curvature_matrix([5.0, 5.0], dims)
    hp = amise_bandwidth(curv, KernelSpec("epa"), dims, 500)
    hs = amise_bandwidth(curv, KernelSpec("epa", "spherical"), dims, 500)
    assert hp.h[0] != pytest.approx(hs.h[0], rel=1e-3)
    assert hs.loss < hp.loss


def lscv_brute_torus(X, h):
    dims = Dims((1, 1))
    m = KdeModel(PolySample(X, dims), h, KernelSpec(), uniform_offset=False)
    g = np.linspace(-math.pi, math.pi, 513)[:-1]
    A, B = np.meshgrid(g, g, indexing="ij")
    Y = np.concatenate([circle(A.ravel()), circle(B.ravel())], axis=1)
    int_f2 = np.sum(np.exp(2 * log_kde(m, Y))) * (2 * math.pi / 512) ** 2
    return int_f2 - 2 * np.mean(np.exp(loo_log_kde(m)))


def test_lscv_closed_form_n2_circle():
    X = circle(np.array([0.3, 1.9]))
    m = KdeModel(PolySample(X, Dims((1,))), 1.0, KernelSpec(), uniform_offset=False)
    g = np.linspace(-math.pi, math.pi, 2**14 + 1)[:-1]
    int_f2 = np.sum(np.exp(2 * log_kde(m, circle(g)))) * (2 * math.pi / 2**14)
    brute = int_f2 - 2 * np.mean(np.exp(loo_log_kde(m)))
    assert lscv_loss(PolySample(X, Dims((1,))), KernelSpec(), 1.0) == pytest.approx(brute, abs=1e-6)


def test_lscv_closed_form_torus(rng):
    X = np.concatenate([circle(rng.uniform(-1, 1, 6)), circle(rng.uniform(0, 2, 6))], axis=1)
    for h in ([0.4, 0.7], [1.0, 1.0], [0.3, 2.0]):
        got = lscv_loss(PolySample(X, Dims((1, 1))), KernelSpec(), h)
        assert got == pytest.approx(lscv_brute_torus(X, np.array(h)), rel=1e-6)


def test_lscv_rotation_and_permutation_invariance(rng):
    dims = Dims((1, 2))
    X = np.concatenate([circle(rng.uniform(-1, 1, 8)), sample_vmf([0, 0, 1.0], 3, rng, 8)], axis=1)
    base = lscv_loss(PolySample(X, dims), KernelSpec(), [0.5, 0.6])
    Q1, Q2 = random_rotation(2, rng), random_rotation(3, rng)
    Xr = np.concatenate([X[:, :2] @ Q1.T, X[:, 2:] @ Q2.T], axis=1)
    assert lscv_loss(PolySample(Xr, dims), KernelSpec(), [0.5, 0.6]) == pytest.approx(base, rel=1e-11)
    perm = rng.permutation(8)
    assert lscv_loss(PolySample(X[perm], dims), KernelSpec(), [0.5, 0.6]) == pytest.approx(base, rel=1e-12)
    assert lcv_loss(PolySample(X[perm], dims), KernelSpec(), 0.5) == pytest.approx(
        lcv_loss(PolySample(X, dims), KernelSpec(), 0.5), rel=1e-12)
    with pytest.raises(UnsupportedKernel):
        lscv_loss(PolySample(X, dims), KernelSpec("epa"), 0.5)


def test_critical_bandwidth_examples():
    s = PolySample(circle(np.radians([0.0, 90.0, 180.0])), Dims((1,)))
    hmin = critical_lcv_bandwidth(s)
    assert hmin == pytest.approx(1.0, abs=1e-15)
    epa = KernelSpec("epa")
    assert np.isfinite(lcv_loss(s, epa, hmin + 1e-3))
    assert lcv_loss(s, epa, hmin - 1e-3) == -math.inf
    assert critical_lcv_bandwidth(PolySample(np.array([[1.0, 0], [1.0, 0]]), Dims((1,)))) == 0.0
    with pytest.raises(SampleTooSmall):
        critical_lcv_bandwidth(PolySample(np.array([[1.0, 0]]), Dims((1,))))


def test_epa_lcv_finite_above_floor(rng):
    s = PolySample(sample_vmf([0, 0, 1.0], 2.0, rng, 40), Dims((2,)))
    hmin = critical_lcv_bandwidth(s)
    for h in hmin * np.linspace(1.0001, 5, 60):
        assert np.isfinite(lcv_loss(s, KernelSpec("epa"), h))
    res = select_bandwidth_cv(s, KernelSpec("epa"), "lcv")
    assert res.h[0] > hmin and np.isfinite(res.loss)


def test_lcv_selector_matches_grid(rng):
    s = PolySample(sample_vmf([0, 1.0, 0], 4.0, rng, 50), Dims((2,)))
    res = select_bandwidth_cv(s, KernelSpec(), "lcv")
    grid = np.exp(np.linspace(math.log(0.05), math.log(3.0), 801))
    vals = [lcv_loss(s, KernelSpec(), h) for h in grid]
    g = grid[int(np.argmax(vals))]
    assert abs(math.log(res.h[0]) - math.log(g)) <= (grid[1] / grid[0] - 1) * 1.01


def test_lscv_selector_and_per_sphere(rng):
    dims = Dims((1, 2))
    X = sample_pvmf(np.array([1.0, 0, 0, 0, 1.0]), [3.0, 6.0], dims, rng, 80)
    s = PolySample(X, dims)
    res = select_bandwidth_cv(s, KernelSpec(), "lscv")
    per = select_bandwidth_cv(s, KernelSpec(), "lscv", search="per-sphere")
    assert per.loss <= res.loss + 1e-12
    per_lcv = select_bandwidth_cv(s, KernelSpec("epa"), "lcv", search="per-sphere")
    assert np.all(per_lcv.h >= critical_lcv_bandwidth(s))


def test_rot_ise_close_to_oracle_amise():
    rng = make_rng(31)
    mu = np.array([0, 0, 1.0])
    dims = Dims((2,))
    h_true = amise_bandwidth(curvature_matrix([4.0], dims), KernelSpec(), dims, 4000).h
    ratios = []
    for _ in range(5):
        X = sample_vmf(mu, 4.0, rng, 4000)
        h_rot = rot_bandwidth(PolySample(X, dims)).h
        ratios.append(ise_vmf_kde(X, h_rot, dims, mu, 4.0) / ise_vmf_kde(X, h_true, dims, mu, 4.0))
    assert 0.5 < np.mean(ratios) < 2.0


def test_lscv_tracks_ise_minimizer():
    rng = make_rng(77)
    mu = np.array([0, 0, 1.0])
    dims = Dims((2,))
    grid = np.exp(np.linspace(math.log(0.1), math.log(1.2), 25))
    logratio = []
    for _ in range(200):
        X = sample_vmf(mu, 5.0, rng, 100)
        s = PolySample(X, dims)
        h_l = grid[np.argmin([lscv_loss(s, KernelSpec(), h) for h in grid])]
        h_i = grid[np.argmin([ise_vmf_kde(X, h, dims, mu, 5.0) for h in grid])]
        logratio.append(math.log(h_l / h_i))
    assert abs(np.mean(logratio)) < math.log(2.0)
