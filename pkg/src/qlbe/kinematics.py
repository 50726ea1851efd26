"""Units, two-body kinematics and small vector helpers.

All quantities are dimensionless with hbar = k_B = 1. Vector functions take
array-likes of shape ``(..., 3)`` and broadcast over the leading axes, so the
same call serves a single momentum and a quadrature batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroAxis

HBAR = 1.0
KB = 1.0

EPS_AXIS = 1e-12


@dataclass(frozen=True)
class UnitsConvention:
    """hbar and k_B are fixed to one; the scale strings are informational only."""

    mass_unit: str = "gas particle mass"
    momentum_unit: str = "gas thermal momentum"

    @property
    def hbar(self) -> float:
        return HBAR

    @property
    def kB(self) -> float:
        return KB


@dataclass(frozen=True)
class MomentumVector:
    px: float
    py: float
    pz: float

    def __post_init__(self):
        for name in ("px", "py", "pz"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"momentum component {name} is not finite: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_array(cls, a) -> "MomentumVector":
        a = np.asarray(a, dtype=float)
        if a.shape != (3,):
            raise ValueError(f"expected shape (3,), got {a.shape}")
        return cls(*a)

    def __array__(self, dtype=None, copy=None):
        return np.array([self.px, self.py, self.pz], dtype=dtype)

    def __iter__(self):
        return iter((self.px, self.py, self.pz))

    def norm(self) -> float:
        return math.sqrt(self.px**2 + self.py**2 + self.pz**2)

    def __add__(self, other):
        return MomentumVector.from_array(np.asarray(self) + np.asarray(other))

    def __sub__(self, other):
        return MomentumVector.from_array(np.asarray(self) - np.asarray(other))

    def __mul__(self, s: float):
        return MomentumVector(self.px * s, self.py * s, self.pz * s)

    __rmul__ = __mul__

    def __neg__(self):
        return MomentumVector(-self.px, -self.py, -self.pz)


@dataclass(frozen=True)
class MassPair:
    """Gas mass ``m`` and tracer mass ``M`` with the cached reduced mass."""

    m: float
    M: float
    m_star: float = field(init=False)

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValueError(f"gas mass m must be positive and finite, got {self.m}")
        if not (self.M > 0 and math.isfinite(self.M)):
            raise ValueError(f"tracer mass M must be positive and finite, got {self.M}")
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "M", float(self.M))
        object.__setattr__(self, "m_star", self.m * self.M / (self.M + self.m))

    @property
    def ratio(self) -> float:
        """m / M."""
        return self.m / self.M


def as_vectors(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape[-1:] != (3,):
        raise ValueError(f"expected trailing dimension 3, got shape {a.shape}")
    return a


def dot(a, b) -> np.ndarray:
    return np.einsum("...i,...i->...", a, b)


def norm(a) -> np.ndarray:
    return np.sqrt(dot(a, a))


def rel(p, P, masses: MassPair) -> np.ndarray:
    """Relative momentum of a gas particle ``p`` and the tracer ``P``.

    ``(m*/m) p - (m*/M) P``; vanishes when both move with the same velocity.
    """
    p = as_vectors(p)
    P = as_vectors(P)
    return (masses.m_star / masses.m) * p - (masses.m_star / masses.M) * P


def decompose_parallel(v, axis, eps_axis: float = EPS_AXIS):
    """Split ``v`` into components parallel and perpendicular to ``axis``.

    Returns
    -------
    v_par, v_perp : ndarray
        ``v_par = (v.axis / |axis|^2) axis`` and ``v_perp = v - v_par``.
    """
    v = as_vectors(v)
    axis = as_vectors(axis)
    a2 = dot(axis, axis)
    if np.any(np.sqrt(a2) < eps_axis):
        raise ZeroAxis(f"axis norm below {eps_axis}")
    coeff = dot(v, axis) / a2
    v_par = coeff[..., None] * axis
    return v_par, v - v_par


def orthonormal_frame(axis, eps_axis: float = EPS_AXIS):
    """Deterministic pair ``(e1, e2)`` completing ``axis/|axis|`` to a right-handed basis.

    ``e1`` is Gram-Schmidt applied to the canonical basis vector least aligned
    with the axis (first one on ties); ``e2 = n x e1``.
    """
    axis = as_vectors(axis)
    length = norm(axis)
    if np.any(length < eps_axis):
        raise ZeroAxis(f"axis norm below {eps_axis}")
    n = axis / length[..., None]
    pick = np.argmin(np.abs(n), axis=-1)
    e = np.zeros(n.shape)
    np.put_along_axis(e, pick[..., None], 1.0, axis=-1)
    e1 = e - dot(e, n)[..., None] * n
    e1 /= norm(e1)[..., None]
    e2 = np.cross(n, e1)
    return e1, e2
