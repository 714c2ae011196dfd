import math
import warnings

import numpy as np
import pytest
from scipy import integrate

from polykde.errors import ClassTooSmall, KNotTwo, NotSPD, SingularScatter
from polykde.inference import (GroupedSample, fdr_adjust, jsd_statistic, k_sample_test, loc_scatter_statistics,
                               loc_scatter_test, permutation_test, spd_affine_distance)
from polykde.kernels import KernelSpec, log_norm_const
from polykde.polycore import Dims, PolySample
from polykde.sampling import make_rng, sample_vmf


def circle(th):
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def brute_jsd(X, lab, h, pooled="verbatim"):
    """Double loop over the vMF kernel on S^1."""
    n = len(lab)
    k = lab.max() + 1
    c = math.exp(log_norm_const(KernelSpec(), [1], h))
    Kf = lambda a, b: c * math.exp((a @ b - 1) / h**2)
    sizes = np.bincount(lab)
    pri = sizes / n
    H = np.zeros(k)
    H0 = 0.0
    for i in range(n):
        j = lab[i]
        own = sum(Kf(X[i], X[l]) for l in range(n) if l != i and lab[l] == j) / (sizes[j] - 1)
        H[j] -= math.log(own) / sizes[j]
        if pooled == "verbatim":
            f0 = 0.0
            for m in range(k):
                s = sum(Kf(X[i], X[l]) for l in range(n) if l != i and lab[l] == m)
                f0 += pri[m] * s
            f0 /= n - 1
        else:
            f0 = sum(Kf(X[i], X[l]) for l in range(n) if l != i) / (n - 1)
        H0 -= math.log(f0) / n
    return H0 - pri @ H


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
@pytest.mark.parametrize("pooled", ["verbatim", "normalized"])
def test_jsd_brute_force(pooled):
    X = circle(np.array([0.1, 0.5, 1.3, 2.0, -0.4, 3.0]))
    lab = np.array([0, 0, 0, 1, 1, 1])
    g = GroupedSample(PolySample(X, Dims((1,)), lab))
    assert jsd_statistic(g, KernelSpec(), 0.7, pooled) == pytest.approx(brute_jsd(X, lab, 0.7, pooled), abs=1e-12)
    Xc = np.concatenate([X[:3], X[:3]])
    gc = GroupedSample(PolySample(Xc, Dims((1,)), lab))
    assert jsd_statistic(gc, KernelSpec(), 0.7, pooled) == pytest.approx(brute_jsd(Xc, lab, 0.7, pooled), abs=1e-12)


def test_jsd_three_classes_brute():
    X = circle(np.linspace(0, 5, 9))
    lab = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2])
    g = GroupedSample(PolySample(X, Dims((1,)), lab))
    assert jsd_statistic(g, KernelSpec(), 0.9) == pytest.approx(brute_jsd(X, lab, 0.9), abs=1e-12)


def test_label_swap_symmetry(rng):
    X = sample_vmf([0, 0, 1.0], 3.0, rng, 20)
    lab = np.repeat([0, 1], 10)
    a = jsd_statistic(GroupedSample(PolySample(X, Dims((2,)), lab)), KernelSpec(), 0.5)
    b = jsd_statistic(GroupedSample(PolySample(X, Dims((2,)), 1 - lab)), KernelSpec(), 0.5)
    assert a == pytest.approx(b, abs=1e-13)


def test_replicated_points_finite():
    X = np.array([[1.0, 0, 0]] * 3 + [[0, 1.0, 0]] * 3)
    g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], 3)))
    assert np.isfinite(jsd_statistic(g, KernelSpec(), 0.3))


def test_class_too_small():
    X = circle(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ClassTooSmall):
        GroupedSample(PolySample(X, Dims((1,)), np.array([0, 0, 1])))


def test_normalized_jsd_matches_population_value():
    # large-sample normalized estimator vs quadrature JSD of two vMFs on S^1, which lies in [0, log 2]
    rng = make_rng(8)
    mu1, mu2, k = np.array([1.0, 0]), np.array([0, 1.0]), 3.0
    X = np.concatenate([sample_vmf(mu1, k, rng, 1500), sample_vmf(mu2, k, rng, 1500)])
    g = GroupedSample(PolySample(X, Dims((1,)), np.repeat([0, 1], 1500)))
    T = jsd_statistic(g, KernelSpec(), 0.25, pooled="normalized")
    from scipy.special import i0
    f = lambda th, m: math.exp(k * math.cos(th - m)) / (2 * math.pi * i0(k))
    f0 = lambda th: 0.5 * (f(th, 0) + f(th, math.pi / 2))
    H = lambda dens: -integrate.quad(lambda t: dens(t) * math.log(dens(t)), -math.pi, math.pi)[0]
    jsd = H(f0) - 0.5 * H(lambda t: f(t, 0)) - 0.5 * H(lambda t: f(t, math.pi / 2))
    assert 0 <= jsd <= math.log(2)
    assert T == pytest.approx(jsd, abs=0.05)
    # verbatim pooling carries a constant offset of about log 2 for two balanced classes
    Tv = jsd_statistic(g, KernelSpec(), 0.25)
    assert Tv - T == pytest.approx(math.log(2), abs=1e-3)


def test_null_estimator_bias_small():
    rng = make_rng(12)
    vals = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for _ in range(100):
            X = sample_vmf([0, 0, 1.0], 5.0, rng, 60)
            g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], 30)))
            vals.append(jsd_statistic(g, KernelSpec(), 0.4, pooled="normalized"))
    assert abs(np.mean(vals)) < 0.05


def test_negative_estimate_is_flagged():
    # two tight identical-law classes at a small bandwidth push the estimate well below zero
    rng = make_rng(3)
    X = sample_vmf([0, 0, 1.0], 5.0, rng, 20)
    g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], 10)))
    with pytest.warns(RuntimeWarning, match="below"):
        T = jsd_statistic(g, KernelSpec(), 0.1, pooled="normalized")
    assert T < -0.05


def test_constant_statistic_gives_zero():
    X = circle(np.linspace(0, 3, 8))
    g = GroupedSample(PolySample(X, Dims((1,)), np.repeat([0, 1], 4)))
    res = permutation_test(g, lambda lab: 1.0, 50, seed=1)
    assert res.p_value == 0.0
    assert permutation_test(g, lambda lab: 1.0, 50, seed=1, plus_one=True).p_value == pytest.approx(1 / 51)


def test_permutation_determinism_and_composition(rng):
    X = sample_vmf([0, 0, 1.0], 3.0, rng, 30)
    g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], 15)))
    a = k_sample_test(g, B=49, seed=5)
    b = k_sample_test(g, B=49, seed=5)
    assert a.p_value == b.p_value and np.array_equal(a.replicates, b.replicates)
    from polykde.bandwidth import rot_bandwidth
    from polykde.inference import _jsd_fn
    h = rot_bandwidth(PolySample(X, Dims((2,)))).h
    manual = permutation_test(g, _jsd_fn(g, KernelSpec(), h), 49, seed=5)
    assert manual.p_value == a.p_value
    assert a.statistic == pytest.approx(jsd_statistic(g, KernelSpec(), h), abs=1e-13)
    sweep = k_sample_test(g, c=[0.5, 1.0, 2.0], B=19, seed=3)
    assert len(sweep) == 3 and all(0 <= r.p_value <= 1 for r in sweep)
    assert not np.array_equal(sweep[0].replicates, sweep[1].replicates)


def test_separated_classes_reject(rng):
    X = np.concatenate([sample_vmf([1.0, 0, 0], 20, rng, 25), sample_vmf([-1.0, 0, 0], 20, rng, 25)])
    g = GroupedSample(PolySample(X, Dims((2,)), np.repeat([0, 1], 25)))
    assert k_sample_test(g, B=99, seed=0).p_value == 0.0


def test_loc_scatter_examples(rng):
    dims = Dims((1, 2))
    A = np.concatenate([circle(rng.uniform(-0.5, 0.5, 10)), sample_vmf([0, 0, 1.0], 2, rng, 10)], axis=1)
    g = GroupedSample.from_classes(A, A.copy(), dims=dims)
    assert loc_scatter_statistics(g, "loc") == pytest.approx(0.0, abs=1e-15)
    assert loc_scatter_statistics(g, "scatter") == pytest.approx(0.0, abs=1e-7)
    B = A.copy()
    B[:, :2] *= -1
    g2 = GroupedSample.from_classes(A, B, dims=dims)
    assert loc_scatter_statistics(g2, "loc") == pytest.approx(2.0, abs=1e-12)


def test_scatter_four_times():
    S1 = np.array([[0.7, 0.1], [0.1, 0.3]])
    assert spd_affine_distance(S1, 4 * S1) == pytest.approx(math.sqrt(2) * math.log(4), rel=1e-13)


def test_spd_distance_properties(rng):
    M = rng.standard_normal((3, 3))
    A = M @ M.T + np.eye(3)
    N = rng.standard_normal((3, 3))
    B = N @ N.T + 0.5 * np.eye(3)
    assert spd_affine_distance(A, A) == pytest.approx(0.0, abs=1e-12)
    assert spd_affine_distance(A, B) == pytest.approx(spd_affine_distance(B, A), rel=1e-12)
    assert spd_affine_distance(np.eye(2), np.diag([math.e**2, math.e**-2])) == pytest.approx(math.sqrt(8))
    P = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    assert spd_affine_distance(P @ A @ P.T, P @ B @ P.T) == pytest.approx(spd_affine_distance(A, B), rel=1e-9)
    with pytest.raises(NotSPD):
        spd_affine_distance(np.diag([1.0, -1.0]), np.eye(2))


def test_loc_scatter_rotation_invariance(rng):
    dims = Dims((2, 2))
    X = np.concatenate([sample_vmf([0, 0, 1.0], 3, rng, 30), sample_vmf([1.0, 0, 0], 5, rng, 30)], axis=1)
    lab = np.repeat([0, 1], 15)
    g = GroupedSample(PolySample(X, dims, lab))
    Qs = [np.linalg.qr(rng.standard_normal((3, 3)))[0] for _ in range(2)]
    Xr = np.concatenate([X[:, :3] @ Qs[0].T, X[:, 3:] @ Qs[1].T], axis=1)
    gr = GroupedSample(PolySample(Xr, dims, lab))
    for w in ("loc", "scatter"):
        assert loc_scatter_statistics(gr, w) == pytest.approx(loc_scatter_statistics(g, w), abs=1e-10)
        assert 0 <= loc_scatter_test(g, w, B=19, seed=2).p_value <= 1


def test_loc_scatter_errors():
    X = circle(np.linspace(0, 5, 6))
    g3 = GroupedSample(PolySample(X, Dims((1,)), np.array([0, 0, 1, 1, 2, 2])))
    with pytest.raises(KNotTwo):
        loc_scatter_statistics(g3, "loc")
    Y = np.array([[1.0, 0]] * 3 + [[0.0, 1.0], [0.6, 0.8], [-1.0, 0]])
    g = GroupedSample(PolySample(Y, Dims((1,)), np.repeat([0, 1], 3)))
    with pytest.raises(SingularScatter):
        loc_scatter_statistics(g, "scatter")


def test_fdr_examples():
    assert np.allclose(fdr_adjust(np.ones(4)), 1.0)
    assert fdr_adjust(np.array([0.2]))[0] == pytest.approx(0.2)
    assert np.allclose(fdr_adjust(np.array([0.01, 0.02, 0.03])), 0.055)
    assert np.allclose(fdr_adjust(np.array([0.03, 0.01, 0.02]), "bh"), [0.03, 0.03, 0.03])
    p = make_rng(0).random(50)
    adj = fdr_adjust(p)
    order = np.argsort(p)
    assert np.all(np.diff(adj[order]) >= 0) and np.all(adj >= p) and np.all(adj <= 1)
    with pytest.raises(ValueError):
        fdr_adjust(np.array([1.2]))
