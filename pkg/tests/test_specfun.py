import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from polykde.errors import RhoOutOfRange
from polykde.specfun import (bessel_ratio_A, inv_bessel_ratio, log_bessel_i, log_sphere_area,
                             polylog, polylog2_neg_exp, polylog_neg_exp, proj_unif_cdf, proj_unif_sf,
                             softplus)

mp.mp.dps = 40


@pytest.mark.parametrize("nu", [0.0, 0.5, 1.0, 4.5, 24.5])
@pytest.mark.parametrize("x", [1e-8, 0.3, 5.0, 80.0, 1e4, 5e11])
def test_log_bessel_against_mpmath(nu, x):
    ref = float(mp.log(mp.besseli(nu, x)))
    assert log_bessel_i(nu, x) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_log_bessel_zero():
    assert log_bessel_i(0.0, 0.0) == 0.0
    assert log_bessel_i(1.5, 0.0) == -math.inf


@pytest.mark.parametrize("d", [1, 2, 3, 10])
@pytest.mark.parametrize("x", [1e-5, 0.5, 7.0, 300.0, 5e11])
def test_bessel_ratio(d, x):
    ref = float(mp.besseli((d + 1) / 2, x) / mp.besseli((d - 1) / 2, x))
    assert bessel_ratio_A(d, x) == pytest.approx(ref, rel=1e-10)


def test_bessel_ratio_s2_closed_form():
    # A_2(k) = coth(k) - 1/k
    k = 50.0
    assert bessel_ratio_A(2, k) == pytest.approx(1 / math.tanh(k) - 1 / k, rel=1e-13)


@pytest.mark.parametrize("d", [1, 2, 5])
@pytest.mark.parametrize("kappa", [1e-3, 0.7, 5.0, 120.0])
def test_inverse_ratio_roundtrip(d, kappa):
    rho = float(bessel_ratio_A(d, kappa))
    assert inv_bessel_ratio(d, rho) == pytest.approx(kappa, rel=1e-8)


def test_inverse_ratio_domain():
    assert inv_bessel_ratio(2, 0.0) == 0.0
    with pytest.raises(RhoOutOfRange):
        inv_bessel_ratio(2, 1.0)
    with pytest.raises(RhoOutOfRange):
        inv_bessel_ratio(2, -0.1)


@pytest.mark.parametrize("s", [0.5, 1.0, 1.5, 2.0, 3.0, 6.0, 26.0, 52.0])
@pytest.mark.parametrize("w", [-5.0, -0.3, 0.0, 1.0, 10.0, 100.0])
def test_polylog_neg_exp(s, w):
    ref = float(mp.re(mp.polylog(s, -mp.exp(w))))
    assert polylog_neg_exp(s, w) == pytest.approx(ref, rel=1e-10)


def test_polylog_small_z():
    for s, z in [(2.0, 0.5), (3.5, -0.9), (1.0, 0.3)]:
        assert polylog(s, z) == pytest.approx(float(mp.re(mp.polylog(s, z))), rel=1e-12)


def test_polylog2_vectorized():
    w = np.array([-3.0, 0.0, 2.0, 40.0])
    ref = [float(mp.polylog(2, -mp.exp(v))) for v in w]
    assert np.allclose(polylog2_neg_exp(w), ref, rtol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3, 6])
def test_projected_uniform_cdf(d):
    wd = math.exp(log_sphere_area(d))
    w1 = math.exp(log_sphere_area(d - 1))
    for x in (-0.8, -0.1, 0.4, 0.95):
        ref = integrate.quad(lambda t: w1 / wd * (1 - t * t) ** (d / 2 - 1), -1, x)[0]
        assert proj_unif_cdf(d, x) == pytest.approx(ref, rel=1e-9)
        assert proj_unif_sf(d, x) == pytest.approx(1 - ref, rel=1e-9)


def test_sphere_area_and_softplus():
    assert math.exp(log_sphere_area(1)) == pytest.approx(2 * math.pi)
    assert math.exp(log_sphere_area(2)) == pytest.approx(4 * math.pi)
    assert softplus(800.0) == pytest.approx(800.0)
    assert softplus(0.0) == pytest.approx(math.log(2))
