"""Closed-form limiting results: weak coupling, refraction and the diffusive limit."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RoutesDisagree, SingularQ, WrongModel
from .gas import MaxwellBoltzmann
from .kinematics import HBAR, MassPair, as_vectors, dot, norm, orthonormal_frame
from .quadrature import gauss_legendre, square_rule
from .rates import CollisionSystem, _converge, m_out_cl, offset_average
from .scattering import BornGaussian, ConstantSWave, amplitude, forward_amplitude

ROUTE_RTOL = 1e-6
SMALL_DRIFT = 1e-4


def _require_maxwell(sys: CollisionSystem) -> MaxwellBoltzmann:
    if not isinstance(sys.dist, MaxwellBoltzmann):
        raise WrongModel("this result requires a Maxwell-Boltzmann gas")
    return sys.dist


def structure_factor(masses: MassPair, beta: float, Q, P, eps_Q: float = 0.0):
    """Dynamic structure factor of a Maxwell gas at rest.

    ``sqrt(beta m / 2 pi) / |Q| exp(-beta ((1 + m/M) Q^2 + 2 (m/M) P.Q)^2 / (8 m Q^2))``.
    """
    Q, P = as_vectors(Q), as_vectors(P)
    Qn = norm(Q)
    if np.any(Qn <= eps_Q) or np.any(Qn == 0):
        raise SingularQ("structure factor needs |Q| > eps_Q")
    m, r = masses.m, masses.ratio
    num = (1 + r) * Qn**2 + 2 * r * dot(P, Q)
    return math.sqrt(beta * m / (2 * math.pi)) / Qn * np.exp(-beta * num**2 / (8 * m * Qn**2))


def _born(sys: CollisionSystem) -> BornGaussian:
    if not isinstance(sys.model, BornGaussian):
        raise WrongModel("weak-coupling results need the BornGaussian model")
    return sys.model


def born_jump_rate(sys: CollisionSystem, Q, P):
    """``(n / m*^2) S(Q, P) |f_B(Q)|^2`` for a tracer at momentum ``P``.

    A drifting gas is handled through the frame change ``P -> P - M V``.
    """
    model = _born(sys)
    dist = _require_maxwell(sys)
    Q, P = as_vectors(Q), as_vectors(P)
    Qn = norm(Q)
    if np.any(Qn <= sys.eps_Q):
        raise SingularQ(f"|Q| must exceed eps_Q = {sys.eps_Q:.3g}")
    ms = sys.masses
    P_rest = P - dist.center / ms.ratio
    S = structure_factor(ms, dist.beta, Q, P_rest)
    sigma_B = np.abs(amplitude(model, np.zeros(3), Q)) ** 2
    return sys.n_gas / ms.m_star**2 * S * sigma_B


def L_B(sys: CollisionSystem, p, P, Q):
    """Weak-coupling jump symbol for a gas at rest.

    ``(n / m*^2)^(1/2) f_B(-Q) S(Q, P)^(1/2) exp(-p^2 / (2 p_beta^2)) / (sqrt(pi) p_beta)``;
    the Gaussian factor is normalized so that its square integrates to one
    over the plane perpendicular to ``Q``.
    """
    model = _born(sys)
    dist = _require_maxwell(sys)
    p, P, Q = as_vectors(p), as_vectors(P), as_vectors(Q)
    ms = sys.masses
    S = structure_factor(ms, dist.beta, Q, P, sys.eps_Q)
    fB = amplitude(model, -Q, np.zeros(3))
    pb = dist.p_beta
    gauss = np.exp(-dot(p, p) / (2 * pb**2)) / (math.sqrt(math.pi) * pb)
    return math.sqrt(sys.n_gas) / ms.m_star * fB * np.sqrt(S) * gauss


def born_plane_integral(sys: CollisionSystem, Q, P, n: int = 48):
    """``int_{Q-perp} |L_B(p, P; Q)|^2 dp`` by tensor Gauss-Legendre; returns ``(value, est_error)``."""
    Q, P = np.asarray(as_vectors(Q), dtype=float), np.asarray(as_vectors(P), dtype=float)
    e1, e2 = orthonormal_frame(Q)
    half = sys.quad.plane_extent * sys.p_scale

    def level(k):
        nodes, w = square_rule(n * 2**k)
        p = half * (nodes[:, :1] * e1 + nodes[:, 1:] * e2)
        return np.sum(np.abs(L_B(sys, p, P, Q)) ** 2 * w) * half**2

    return _converge(level, 1e-10, "born_plane_integral")


# ---------------------------------------------------------------------------
# refraction


def _sinh_form(sys: CollisionSystem, P, n: int):
    """One-dimensional velocity integral for the thermal forward amplitude."""
    dist = _require_maxwell(sys)
    ms = sys.masses
    vb = dist.p_beta / ms.m
    V = float(np.linalg.norm(np.asarray(P, dtype=float) / ms.M - np.asarray(dist.drift)))
    lo, hi = max(0.0, V - 8 * vb), V + 8 * vb
    v, w = gauss_legendre(n, lo, hi)
    if V < SMALL_DRIFT * vb:
        weight = 4 / math.sqrt(math.pi) * v**2 / vb**3 * np.exp(-((v / vb) ** 2))
    else:
        weight = (
            v / (math.sqrt(math.pi) * V * vb)
            * np.exp(-(((v - V) / vb) ** 2))
            * -np.expm1(-4 * v * V / vb**2)
        )
    return np.sum(w * weight * forward_amplitude(sys.model, ms.m_star * v))


@dataclass(frozen=True)
class ForwardAverage:
    quadrature: complex
    sinh_form: complex
    difference: float

    @property
    def value(self) -> complex:
        return self.quadrature


def forward_average(sys: CollisionSystem, P, rtol: float = ROUTE_RTOL) -> ForwardAverage:
    """Thermally averaged forward amplitude by two independent routes.

    (a) a three-dimensional product-rule average of ``f(|rel|)`` over the gas;
    (b) the one-dimensional relative-speed integral with the angles done in
    closed form. Raises :class:`RoutesDisagree` if they differ by more than
    ``rtol`` relative.
    """
    _require_maxwell(sys)
    P = np.asarray(as_vectors(P), dtype=float)
    ms = sys.masses
    a = ms.m_star / ms.m
    model = sys.model
    fa, _ = offset_average(
        sys, ms.ratio * P, lambda r: forward_amplitude(model, a * r), method="product", what="forward_average"
    )
    fb, _ = _converge(lambda k: _sinh_form(sys, P, sys.quad.n_radial * 2**k), sys.quad.rel_tol, "sinh form")
    fa, fb = complex(fa), complex(fb)
    diff = abs(fa - fb)
    if diff > rtol * abs(fa):
        raise RoutesDisagree(f"forward-amplitude routes differ by {diff / abs(fa):.3g} relative")
    return ForwardAverage(fa, fb, diff)


@dataclass(frozen=True)
class RefractionResult:
    n1: float
    n2: float
    f_avg: complex
    K: float
    n2_attenuation: float


def refraction_index(sys: CollisionSystem, K: float, direction=(0.0, 0.0, 1.0)) -> RefractionResult:
    """Index of refraction ``n = 1 + 2 pi (n_gas / K^2)(M / m*) <f>`` for a tracer wave of wavenumber ``K``.

    ``n2_attenuation`` is the beam-attenuation estimate ``M_out(hbar K) M / (2 hbar K^2)``,
    which equals ``n2`` for amplitudes obeying the optical theorem.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    e = np.asarray(direction, dtype=float)
    P = HBAR * K * e / np.linalg.norm(e)
    ms = sys.masses
    fav = forward_average(sys, P).value
    c = 2 * math.pi * sys.n_gas / K**2 * ms.M / ms.m_star
    n2_att = m_out_cl(sys, P) * ms.M / (2 * HBAR * K**2)
    return RefractionResult(1.0 + c * fav.real, c * fav.imag, fav, float(K), n2_att)


# ---------------------------------------------------------------------------
# diffusive limit


@dataclass(frozen=True)
class DiffusiveCoefficients:
    eta: float
    Dpp: float
    Dxx: float


def diffusive_coefficients(sys: CollisionSystem) -> DiffusiveCoefficients:
    """Friction and diffusion constants of the heavy-tracer limit for constant ``sigma_tot``.

    ``eta = 8 n p_beta sigma / (3 sqrt(pi) M)``, ``Dpp = eta M / beta``,
    ``Dxx = eta hbar^2 beta / (16 M)``.
    """
    if not isinstance(sys.model, ConstantSWave):
        raise WrongModel("diffusive coefficients need a constant total cross section")
    dist = _require_maxwell(sys)
    M = sys.masses.M
    sigma = 4 * math.pi * abs(sys.model.f0) ** 2
    eta = 8 / (3 * math.sqrt(math.pi)) * sys.n_gas * dist.p_beta * sigma / M
    Dpp = eta * M / dist.beta
    Dxx = eta * HBAR**2 * dist.beta / (16 * M)
    assert eta == 0 or math.isclose(Dpp * dist.beta / (eta * M), 1.0, rel_tol=1e-15)
    return DiffusiveCoefficients(eta, Dpp, Dxx)
