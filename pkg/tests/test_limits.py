import math

import numpy as np
import pytest

from conftest import make_system
from qlbe import (
    BornGaussian,
    ConstantSWave,
    HardSphere,
    MassPair,
    RoutesDisagree,
    SingularQ,
    TabulatedIsotropic,
    WrongModel,
    m_in_cl,
    m_in_quantum,
    m_out_cl,
)
from qlbe.gas import GasSpec
from qlbe.kinematics import orthonormal_frame
from qlbe.limits import (
    L_B,
    born_jump_rate,
    born_plane_integral,
    diffusive_coefficients,
    forward_average,
    refraction_index,
    structure_factor,
)
from qlbe.rates import CollisionSystem


def born_system(V0=0.3, width=0.8, m=1.0, M=2.0, beta=2.0, drift=(0.0, 0.0, 0.0)):
    return make_system(lambda ms: BornGaussian(V0, width, ms), m=m, M=M, beta=beta, drift=drift)


# --- structure factor --------------------------------------------------------------


def test_structure_factor_heavy_tracer(rng):
    ms = MassPair(1.0, 1e6)
    beta = 1.7
    for _ in range(10):
        Q, P = rng.normal(size=(2, 3))
        q = np.linalg.norm(Q)
        ref = math.sqrt(beta / (2 * math.pi)) / q * math.exp(-beta * q**2 / 8)
        assert structure_factor(ms, beta, Q, P) == pytest.approx(ref, rel=1e-5)


def test_structure_factor_gaussian_in_lambda():
    ms = MassPair(1.0, 3.0)
    Q = np.array([0.3, -0.5, 0.8])
    lam = np.linspace(0.5, 3.0, 8)
    y = np.log([structure_factor(ms, 1.2, l * Q, np.zeros(3)) * l for l in lam])
    coef = np.polyfit(lam**2, y, 1)
    assert np.max(np.abs(np.polyval(coef, lam**2) - y)) < 1e-12
    with pytest.raises(SingularQ):
        structure_factor(ms, 1.0, np.zeros(3), np.zeros(3))


def test_structure_factor_positive(rng):
    Q, P = rng.normal(size=(2, 50, 3))
    assert np.all(structure_factor(MassPair(1.0, 2.0), 1.0, Q, P) > 0)


# --- weak coupling ---------------------------------------------------------------


def test_born_rate_equals_gain_density(rng):
    sys = born_system()
    for _ in range(20):
        P, Q = rng.normal(size=(2, 3))
        b = born_jump_rate(sys, Q, P)
        c, err = m_in_cl(sys, P + Q, Q, with_error=True)
        assert abs(b - c) <= 1e-8 * c + 3 * err
        q = m_in_quantum(sys, P + Q, P + Q, Q)
        assert abs(b - q.value) <= 1e-8 * b + 3 * q.est_error


def test_born_rate_drifting_gas(rng):
    sys = born_system(drift=(0.3, -0.2, 0.1))
    P, Q = rng.normal(size=(2, 3))
    assert born_jump_rate(sys, Q, P) == pytest.approx(m_in_cl(sys, P + Q, Q), rel=1e-8)


def test_born_plane_identity(rng):
    sys = born_system()
    for _ in range(5):
        P, Q = rng.normal(size=(2, 3))
        val, _ = born_plane_integral(sys, Q, P)
        assert val == pytest.approx(born_jump_rate(sys, Q, P), rel=1e-8)


def test_L_B_depends_on_plane_only_through_gaussian(rng):
    sys = born_system()
    Q, P = rng.normal(size=(2, 3))
    e1, _ = orthonormal_frame(Q)
    a = L_B(sys, 0.0 * e1, P, Q)
    b = L_B(sys, 0.7 * e1, P, Q)
    assert b / a == pytest.approx(math.exp(-0.49 / (2 * sys.dist.p_beta**2)), rel=1e-14)


def test_born_rate_quadratic_in_V0(rng):
    Q, P = rng.normal(size=(2, 3))
    r1 = born_jump_rate(born_system(V0=1e-3), Q, P)
    r2 = born_jump_rate(born_system(V0=2e-3), Q, P)
    assert r2 / r1 == pytest.approx(4.0, rel=1e-12)


def test_born_total_rate():
    """Integrating the weak-coupling jump rate over Q gives the loss rate."""
    sys = born_system()
    P = np.array([0.4, 0.1, -0.3])
    n = 40
    x, wr = np.polynomial.legendre.leggauss(n)
    q_max = 10.0
    r = 0.5 * q_max * (x + 1)
    wr = 0.5 * q_max * wr
    ct, wt = np.polynomial.legendre.leggauss(n)
    ph = 2 * np.pi * np.arange(n) / n
    st = np.sqrt(1 - ct**2)
    dirs = np.stack([st[:, None] * np.cos(ph), st[:, None] * np.sin(ph), np.broadcast_to(ct[:, None], (n, n))], -1)
    dirs = dirs.reshape(-1, 3)
    wd = np.repeat(wt, n) * 2 * np.pi / n
    Q = (r[:, None, None] * dirs[None]).reshape(-1, 3)
    w = ((wr * r**2)[:, None] * wd[None]).ravel()
    total = np.sum(w * born_jump_rate(sys, Q, P))
    assert total == pytest.approx(m_out_cl(sys, P), rel=0.01)


def test_weak_coupling_needs_born_and_maxwell():
    with pytest.raises(WrongModel):
        born_jump_rate(make_system(ConstantSWave(0.2)), (1, 0, 0), (0, 0, 0))
    r = np.linspace(0, 6, 601)
    ms = MassPair(1.0, 2.0)
    tab = CollisionSystem(ms, GasSpec(TabulatedIsotropic(r, np.exp(-(r**2))), 1.0), BornGaussian(0.3, 0.8, ms))
    with pytest.raises(WrongModel):
        born_jump_rate(tab, (1, 0, 0), (0, 0, 0))


# --- refraction --------------------------------------------------------------------


def test_forward_average_constant():
    sys = make_system(ConstantSWave(0.4 - 0.3j))
    for P in [(0, 0, 0), (1e-9, 0, 0), (2.0, 1.0, 0)]:
        fa = forward_average(sys, P)
        assert fa.quadrature == pytest.approx(0.4 - 0.3j, rel=1e-12)
        assert fa.sinh_form == pytest.approx(0.4 - 0.3j, rel=1e-12)


@pytest.mark.parametrize("speed", [0.0, 0.5, 1.0, 2.0, 4.0])
def test_forward_average_routes_hard_sphere(speed):
    # p_beta a / hbar = 1
    sys = make_system(HardSphere(1.0), m=1.0, M=2.0, beta=2.0)
    vb = sys.dist.p_beta / sys.masses.m
    fa = forward_average(sys, (0, 0, speed * vb * sys.masses.M))
    assert fa.difference <= 1e-6 * abs(fa.quadrature)


def test_forward_average_large_speed_finite():
    sys = make_system(HardSphere(0.3), m=1.0, M=2.0, beta=2.0)
    fa = forward_average(sys, (0, 0, 40.0))
    assert np.isfinite(fa.sinh_form) and fa.difference <= 1e-6 * abs(fa.quadrature)


def test_routes_disagree_is_raised():
    sys = make_system(HardSphere(1.0))
    with pytest.raises(RoutesDisagree):
        forward_average(sys, (0, 0, 1.0), rtol=1e-30)


def test_refraction_index():
    sys = make_system(ConstantSWave(0.5j))
    res = refraction_index(sys, 2.0)
    assert res.n1 == 1.0
    assert res.n2 > 0
    sys2 = sys.replace(gas=GasSpec(sys.dist, 2 * sys.n_gas))
    res2 = refraction_index(sys2, 2.0)
    assert res2.n2 == pytest.approx(2 * res.n2, rel=1e-14)
    c = make_system(ConstantSWave(0.3 + 0.1j))
    a, b = refraction_index(c, 1.5), refraction_index(c.replace(gas=GasSpec(c.dist, 2 * c.n_gas)), 1.5)
    assert b.n1 - 1 == pytest.approx(2 * (a.n1 - 1), rel=1e-14)
    with pytest.raises(ValueError):
        refraction_index(sys, 0.0)


@pytest.mark.parametrize("K", [0.5, 2.0, 6.0])
def test_refraction_attenuation_route(K):
    sys = make_system(HardSphere(0.6), m=1.0, M=3.0, beta=2.0)
    res = refraction_index(sys, K, (1, 1, 0))
    assert abs(res.n2 - res.n2_attenuation) <= 1e-6 * res.n2


# --- diffusive limit ---------------------------------------------------------------


def test_diffusive_unit_parameters():
    # p_beta = sigma = n = M = 1: beta = 2 m / p_beta^2 = 2 with m = 1
    sys = make_system(ConstantSWave(1 / (2 * math.sqrt(math.pi))), m=1.0, M=1.0, beta=2.0, n_gas=1.0)
    c = diffusive_coefficients(sys)
    assert c.eta == pytest.approx(8 / (3 * math.sqrt(math.pi)), rel=1e-15)
    assert c.eta == pytest.approx(1.504507, abs=2e-6)
    assert c.Dpp * 2.0 / (c.eta * 1.0) == pytest.approx(1.0, rel=1e-15)
    assert c.Dxx * 16 / (c.eta * 2.0) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(WrongModel):
        diffusive_coefficients(make_system(HardSphere(0.3)))
