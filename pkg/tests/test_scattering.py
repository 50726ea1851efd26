import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special
from scipy.spatial.transform import Rotation

from qlbe import (
    BornGaussian,
    ConstantSWave,
    CutoffTooSmall,
    HardSphere,
    MassPair,
    OffShell,
    amplitude,
    optical_theorem_residual,
    sigma_tot,
)
from qlbe.scattering import (
    differential_cross_section,
    forward_amplitude,
    hard_sphere_phase_shifts,
    sample_outgoing,
    sigma_tot_numeric,
    sigma_tot_of_modulus,
    spherical_jy,
    unitarity_constant_amplitude,
)

MS = MassPair(1.0, 3.0)


def on_shell_pair(rng, p):
    a, b = rng.normal(size=(2, 3))
    return p * a / np.linalg.norm(a), p * b / np.linalg.norm(b)


def test_spherical_bessel_against_scipy():
    x = np.array([1e-3, 0.1, 1.0, 7.5, 50.0, 300.0])
    j, y = spherical_jy(60, x)
    ell = np.arange(61)[:, None]
    jr = special.spherical_jn(ell, x)
    yr = special.spherical_yn(ell, x)
    big = np.abs(jr) > 1e-280
    np.testing.assert_allclose(j[big], jr[big], rtol=1e-11)
    finite = np.isfinite(yr) & (np.abs(yr) < 1e250)
    np.testing.assert_allclose(y[finite], yr[finite], rtol=1e-11)


def test_constant_amplitude(rng):
    m = ConstantSWave(0.3j)
    pf, pi = on_shell_pair(rng, 1.7)
    assert amplitude(m, pf, pi) == 0.3j
    assert math.isclose(sigma_tot(m, pi), 4 * math.pi * 0.09, rel_tol=1e-15)


def test_off_shell_rejected():
    with pytest.raises(OffShell):
        amplitude(HardSphere(1.0), [1.0, 0, 0], [0, 1.1, 0])
    with pytest.raises(OffShell):
        amplitude(ConstantSWave(1.0), [1.0, 0, 0], [0, 1.0 + 1e-5, 0])
    amplitude(HardSphere(1.0), [1.0, 0, 0], [0, 1.0 + 1e-7, 0])


def test_born_amplitude_against_fourier_integral(rng):
    V0, s = 0.7, 0.9
    model = BornGaussian(V0, s, MS)
    for _ in range(5):
        q = rng.normal(size=3)
        qn = np.linalg.norm(q)
        # -(m*/2pi) int d^3r V(r) exp(-i q.r), reduced to a radial integral
        radial, _ = integrate.quad(
            lambda r: 4 * math.pi * r**2 * V0 * math.exp(-(r**2) / (2 * s**2)) * np.sinc(qn * r / math.pi),
            0,
            20 * s,
            epsabs=1e-14,
        )
        ref = -MS.m_star / (2 * math.pi) * radial
        p_i = rng.normal(size=3)
        assert abs(amplitude(model, p_i + q, p_i) - ref) < 1e-10 * abs(ref)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_born_depends_on_transfer_only(kx, ky, kz):
    model = BornGaussian(0.4, 0.6, MS)
    pf, pi, k = np.array([0.3, -1.0, 2.0]), np.array([1.0, 0.5, -0.2]), np.array([kx, ky, kz])
    assert np.isclose(amplitude(model, pf + k, pi + k), amplitude(model, pf, pi), rtol=1e-14, atol=0)


def test_born_sigma_closed_form_vs_sphere():
    model = BornGaussian(0.8, 0.7, MS)
    for p in (0.05, 0.6, 2.5):
        pi = np.array([0.0, p, 0.0])
        assert math.isclose(sigma_tot(model, pi), sigma_tot_numeric(model, pi), rel_tol=1e-8)


def test_born_residual_is_unitarity_violation():
    model = BornGaussian(0.8, 0.7, MS)
    pi = np.array([0.0, 0.0, 1.3])
    assert math.isclose(optical_theorem_residual(model, pi), 1.3 * sigma_tot(model, pi), rel_tol=1e-14)


def test_hard_sphere_low_energy():
    a = 1.3
    model = HardSphere(a)
    p = 1e-3 / a
    f = amplitude(model, [p, 0, 0], [0, p, 0])
    assert abs(f + a) < 5e-3 * a
    assert abs(sigma_tot(model, [p, 0, 0]) / (4 * math.pi * a**2) - 1) < 5e-3


@pytest.mark.parametrize("x", np.geomspace(0.1, 50, 10))
def test_hard_sphere_optical_theorem(x):
    model = HardSphere(1.0)
    pi = np.array([0.0, 0.0, x])
    r = optical_theorem_residual(model, pi)
    assert abs(r) < 1e-10 * x * sigma_tot(model, pi)


def test_hard_sphere_partial_wave_sum_matches_sphere_quadrature():
    model = HardSphere(0.8)
    for p in (0.3, 2.0, 9.0):
        pi = np.array([p, 0.0, 0.0])
        assert math.isclose(sigma_tot(model, pi), sigma_tot_numeric(model, pi), rel_tol=1e-8)


def test_hard_sphere_phase_shift_closed_form():
    # l = 0: delta_0 = -k a exactly
    k = np.array([0.2, 1.0, 3.0])
    d = hard_sphere_phase_shifts(HardSphere(1.0), k)
    np.testing.assert_allclose(np.tan(d[0]), np.tan(-k), rtol=1e-12)


@pytest.mark.xfail(strict=True, reason="2 pi a^2 is only reached as (ka)^(-2/3); the exact value at ka = 50 is 7% higher")
def test_hard_sphere_geometric_limit_literal():
    assert abs(sigma_tot(HardSphere(1.0), [0, 0, 50.0]) / (2 * math.pi) - 1) < 0.05


def test_hard_sphere_geometric_limit_approach():
    # the excess over 2 pi a^2 falls off like (ka)^(-2/3)
    x = np.array([25.0, 50.0, 100.0, 200.0])
    excess = np.array([sigma_tot_of_modulus(HardSphere(1.0), xx) / (2 * math.pi) - 1 for xx in x])
    assert np.all(excess > 0) and np.all(np.diff(excess) < 0)
    slope = np.polyfit(np.log(x), np.log(excess), 1)[0]
    assert abs(slope + 2 / 3) < 0.05


def test_hard_sphere_cutoff_too_small():
    with pytest.raises(CutoffTooSmall):
        sigma_tot(HardSphere(1.0, l_max=3), [0, 0, 20.0])


def test_hard_sphere_rotation_invariance(rng):
    model = HardSphere(0.9)
    pf, pi = on_shell_pair(rng, 2.4)
    R = Rotation.random(20, random_state=1).as_matrix()
    f0 = amplitude(model, pf, pi)
    f = amplitude(model, pf @ R.transpose(0, 2, 1), pi @ R.transpose(0, 2, 1))
    assert np.max(np.abs(f - f0)) < 1e-12 * abs(f0)


@pytest.mark.parametrize("model", [ConstantSWave(0.2 - 0.5j), HardSphere(0.7), BornGaussian(0.5, 0.8, MS)])
def test_pt_symmetry(model, rng):
    pf, pi = on_shell_pair(rng, 1.9)
    assert np.isclose(differential_cross_section(model, pf, pi), differential_cross_section(model, pi, pf), rtol=1e-12)


def test_unitary_constant_amplitude():
    p = 1.7
    model = ConstantSWave(unitarity_constant_amplitude(p))
    pi = np.array([0.0, 0.0, p])
    assert abs(optical_theorem_residual(model, pi)) < 1e-12 * p * sigma_tot(model, pi)


def test_forward_amplitude_matches_amplitude():
    model = HardSphere(0.6)
    p = np.array([0.0, 1.5, 0.0])
    assert np.isclose(forward_amplitude(model, 1.5), amplitude(model, p, p), rtol=1e-14)


def test_sample_outgoing_angular_moments():
    model = HardSphere(1.0)
    p = 2.0
    rng = np.random.default_rng(3)
    out = sample_outgoing(model, np.tile([0.0, 0.0, p], (200_000, 1)), rng)
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), p, rtol=1e-12)
    c = out[:, 2] / p
    # oracle: moments of cos(theta) under |f|^2 by Gauss-Legendre
    x, w = np.polynomial.legendre.leggauss(200)
    dirs = np.stack([np.sqrt(1 - x**2), 0 * x, x], -1)
    sig = np.abs(amplitude(model, p * dirs, np.array([0.0, 0.0, p]))) ** 2
    m1 = np.sum(w * sig * x) / np.sum(w * sig)
    m2 = np.sum(w * sig * x**2) / np.sum(w * sig)
    se = np.std(c) / math.sqrt(len(c))
    assert abs(c.mean() - m1) < 5 * se
    assert abs((c**2).mean() - m2) < 5 * np.std(c**2) / math.sqrt(len(c))
