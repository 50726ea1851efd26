import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.spatial.transform import Rotation

from qlbe import GasSpec, MaxwellBoltzmann, TabulatedIsotropic, UnsupportedVariant, boost, mu, rng_stream, sample
from qlbe.gas import mean_offset_speed, sample_size_biased, sqrt_mu


def maxwell_speed_cdf(r, pb):
    x = r / pb
    return special_erf(x) - 2 * x * np.exp(-(x**2)) / math.sqrt(math.pi)


def special_erf(x):
    from scipy.special import erf

    return erf(x)


def test_mu_examples():
    d = MaxwellBoltzmann(1.0, 2.0)
    assert d.p_beta == 1.0
    assert math.isclose(mu(d, [1.0, 0, 0]), math.pi**-1.5 * math.exp(-1), rel_tol=1e-15)
    assert math.isclose(mu(d, [1.0, 0, 0]), 0.0660664, rel_tol=1e-6)
    e = MaxwellBoltzmann(2.0, 0.5, (0.3, -0.1, 0.2))
    assert math.isclose(mu(e, e.center), math.pi**-1.5 / e.p_beta**3, rel_tol=1e-15)


def test_p_beta_identity():
    d = MaxwellBoltzmann(3.0, 0.7)
    assert d.p_beta**2 == pytest.approx(2 * 3.0 / 0.7, rel=1e-15)


def test_mb_normalization_by_quadrature():
    d = MaxwellBoltzmann(1.5, 0.8)
    val, _ = integrate.quad(lambda r: 4 * math.pi * r**2 * mu(d, [r, 0, 0]), 0, 10 * d.p_beta)
    assert abs(val - 1) < 1e-8


@pytest.mark.parametrize("dist", [MaxwellBoltzmann(1.0, 2.0, (0.2, 0, 0)), TabulatedIsotropic(np.linspace(0, 3, 31), np.exp(-np.linspace(0, 3, 31)))])
def test_normalization_monte_carlo(dist):
    rng = np.random.default_rng(0)
    L = 8.0
    n = 400_000
    pts = rng.uniform(-L / 2, L / 2, size=(n, 3))
    vals = mu(dist, pts) * L**3
    assert abs(vals.mean() - 1) < 3 * vals.std() / math.sqrt(n)


def test_tabulated_exact_normalization():
    p = np.array([0.0, 0.5, 1.0, 2.0])
    d = TabulatedIsotropic(p, np.array([1.0, 2.0, 0.5, 0.0]))
    val, _ = integrate.quad(lambda r: 4 * math.pi * r**2 * np.interp(r, d.p, d.density), 0, 2, points=[0.5, 1.0])
    assert abs(val - 1) < 1e-12
    assert mu(d, [0, 0, 2.5]) == 0.0


def test_tabulated_validation():
    with pytest.raises(ValueError):
        TabulatedIsotropic(np.array([0.0, 1.0]), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        TabulatedIsotropic(np.array([1.0, 0.5]), np.array([1.0, 1.0]))


def test_tabulated_from_csv(tmp_path):
    f = tmp_path / "mu.csv"
    f.write_text("p,weight\n0,1\n1,0.5\n2,0\n")
    d = TabulatedIsotropic.from_csv(f)
    np.testing.assert_array_equal(d.p, [0, 1, 2])
    assert d.density[0] > 0


def test_tabulated_scale_of_maxwellian_table():
    r = np.linspace(0, 8, 4001)
    d = TabulatedIsotropic(r, np.exp(-(r**2)))
    assert abs(d.scale - 1.0) < 1e-5


def test_gas_spec():
    GasSpec(MaxwellBoltzmann(1, 1), 0.0)
    with pytest.raises(ValueError):
        GasSpec(MaxwellBoltzmann(1, 1), -1.0)


def test_sample_moments():
    d = MaxwellBoltzmann(1.0, 2.0)
    s = sample(d, rng_stream(1, 0), 1_000_000)
    assert np.all(np.abs(s.mean(0)) < 4 * (d.p_beta / math.sqrt(2)) / 1e3)
    assert abs(np.mean(np.sum(s**2, 1)) / (1.5 * d.p_beta**2) - 1) < 0.01
    b = boost(d, (1.0, 0, 0))
    sb = sample(b, rng_stream(1, 1), 200_000)
    se = d.p_beta / math.sqrt(2) / math.sqrt(len(sb))
    np.testing.assert_array_less(np.abs(sb.mean(0) - [1, 0, 0]), 4 * se)


def test_speed_ks():
    d = MaxwellBoltzmann(1.0, 1.3)
    s = np.linalg.norm(sample(d, rng_stream(2, 0), 100_000), axis=1)
    assert stats.kstest(s, lambda r: maxwell_speed_cdf(r, d.p_beta)).pvalue > 0.01


def test_tabulated_sampling_ks():
    r = np.linspace(0, 3, 61)
    d = TabulatedIsotropic(r, 1 + np.cos(r))
    s = np.linalg.norm(sample(d, rng_stream(4, 0), 50_000), axis=1)
    grid = np.linspace(0, 3, 3001)
    pdf = 4 * math.pi * grid**2 * np.interp(grid, d.p, d.density)
    cdf = integrate.cumulative_trapezoid(pdf, grid, initial=0)
    assert stats.kstest(s, lambda x: np.interp(x, grid, cdf)).pvalue > 0.01


@pytest.mark.parametrize("dist", [MaxwellBoltzmann(1.0, 2.0, (0.4, 0, 0)), TabulatedIsotropic(np.linspace(0, 3, 31), np.exp(-np.linspace(0, 3, 31)))])
def test_size_biased_sampling(dist):
    s = sample_size_biased(dist, rng_stream(5, 0), 200_000)
    r = np.linalg.norm(s - dist.center, axis=1)
    # E[r] under the size-biased law is <r^2> / <r>
    rr = np.linalg.norm(sample(dist, rng_stream(5, 1), 400_000) - dist.center, axis=1)
    target = np.mean(rr**2) / mean_offset_speed(dist)
    assert abs(r.mean() / target - 1) < 0.01


def test_mean_offset_speed():
    d = MaxwellBoltzmann(1.0, 2.0)
    r = np.linalg.norm(sample(d, rng_stream(6, 0), 400_000), axis=1)
    assert abs(r.mean() / mean_offset_speed(d) - 1) < 0.005


def test_boost_group_properties():
    d = MaxwellBoltzmann(1.0, 2.0, (0.1, 0.2, 0.3))
    assert boost(d, (0, 0, 0)) is d
    back = boost(boost(d, (0.5, -1.0, 2.0)), (-0.5, 1.0, -2.0))
    np.testing.assert_allclose(back.drift, d.drift, atol=1e-15)
    with pytest.raises(UnsupportedVariant):
        boost(TabulatedIsotropic(np.array([0.0, 1.0]), np.array([1.0, 0.0])), (1, 0, 0))


def test_boost_definition(rng):
    d = MaxwellBoltzmann(2.0, 1.0)
    V = np.array([0.3, -0.2, 0.5])
    p = rng.normal(size=(100, 3))
    np.testing.assert_array_max_ulp(mu(boost(d, V), p), mu(d, p - d.m * V), maxulp=4)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_isotropy(x, y, z):
    d = MaxwellBoltzmann(1.0, 2.0)
    p = np.array([x, y, z])
    R = Rotation.random(5, random_state=0).as_matrix()
    np.testing.assert_allclose(mu(d, R @ p), mu(d, p), rtol=1e-13)


def test_sqrt_mu():
    d = MaxwellBoltzmann(1.0, 2.0, (0.1, 0, 0))
    p = np.array([[0.5, 1.0, -0.3], [3.0, 0, 0]])
    np.testing.assert_allclose(sqrt_mu(d, p) ** 2, mu(d, p), rtol=1e-14)


def test_streams_independent_of_consumption():
    a = rng_stream(9, 3).random(5)
    rng_stream(9, 2).random(1000)
    np.testing.assert_array_equal(rng_stream(9, 3).random(5), a)
    assert not np.array_equal(rng_stream(9, 4).random(5), a)
