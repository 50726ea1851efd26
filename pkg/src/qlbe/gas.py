"""Gas momentum distributions and counter-based random streams.

Two distributions are available. ``MaxwellBoltzmann`` is the drifting thermal
distribution ``pi^-3/2 p_beta^-3 exp(-|p - mV|^2 / p_beta^2)``;
``TabulatedIsotropic`` is an arbitrary isotropic density given on a radial
grid and interpolated linearly in ``|p|``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnsupportedVariant
from .kinematics import as_vectors, norm


def rng_stream(seed: int, stream_id: int) -> np.random.Generator:
    """Independent counter-based generator for worker ``stream_id``.

    Streams are addressed by ``(seed, stream_id)`` only, so the draws of a
    stream never depend on how many workers consume the others.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class MaxwellBoltzmann:
    """Thermal gas of particles of mass ``m`` at inverse temperature ``beta``.

    ``drift`` is the mean gas *velocity*; the distribution is centred on
    ``m * drift``.
    """

    m: float
    beta: float
    drift: tuple = (0.0, 0.0, 0.0)
    p_beta: float = field(init=False)

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ValueError(f"gas mass must be positive, got {self.m}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        drift = tuple(float(v) for v in np.asarray(self.drift, dtype=float).reshape(3))
        if not all(math.isfinite(v) for v in drift):
            raise ValueError("drift must be finite")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "p_beta", math.sqrt(2 * self.m / self.beta))

    @property
    def center(self) -> np.ndarray:
        return self.m * np.asarray(self.drift)

    @property
    def scale(self) -> float:
        return self.p_beta

    @property
    def support_radius(self) -> float:
        """Radius about ``center`` outside which ``mu`` is negligible (< e^-64)."""
        return 8.0 * self.p_beta


@dataclass(frozen=True, eq=False)
class TabulatedIsotropic:
    """Isotropic density ``mu(|p|)``, linear between grid points and zero beyond.

    The density is rescaled so that the piecewise-linear interpolant integrates
    to one exactly over momentum space.
    """

    p: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).copy()
        d = np.asarray(self.density, dtype=float).copy()
        if p.ndim != 1 or p.shape != d.shape or p.size < 2:
            raise ValueError("tabulated grid needs matching 1D arrays with >= 2 points")
        if p[0] < 0 or np.any(np.diff(p) <= 0):
            raise ValueError("tabulated |p| grid must be nonnegative and strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("tabulated density must be finite and nonnegative")
        masses = self._segment_masses(p, d)
        total = masses.sum()
        if not total > 0:
            raise ValueError("tabulated density integrates to zero")
        d /= total
        p.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "density", d)
        cdf = np.concatenate([[0.0], np.cumsum(masses / total)])
        object.__setattr__(self, "_cdf", cdf)

    @staticmethod
    def _segment_masses(p, d):
        # exact integral of 4 pi r^2 (linear density) over each segment
        a, b = p[:-1], p[1:]
        da, db = d[:-1], d[1:]
        h = b - a
        slope = (db - da) / h
        c0 = da - slope * a
        return 4 * np.pi * (c0 * (b**3 - a**3) / 3 + slope * (b**4 - a**4) / 4)

    @classmethod
    def from_csv(cls, path) -> "TabulatedIsotropic":
        """Two-column CSV ``(|p|, weight)`` with a header line."""
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3:
            raise ValueError(f"{path}: need a header and at least two data rows")
        data = np.array([[float(x) for x in row[:2]] for row in rows[1:] if row], dtype=float)
        return cls(data[:, 0], data[:, 1])

    @property
    def center(self) -> np.ndarray:
        return np.zeros(3)

    @property
    def scale(self) -> float:
        """Thermal-equivalent width ``sqrt(2 <p^2> / 3)``; equals ``p_beta`` for a Maxwellian."""
        a, b = self.p[:-1], self.p[1:]
        da, db = self.density[:-1], self.density[1:]
        slope = (db - da) / (b - a)
        c0 = da - slope * a
        p2 = 4 * np.pi * np.sum(c0 * (b**5 - a**5) / 5 + slope * (b**6 - a**6) / 6)
        return math.sqrt(2 * p2 / 3)

    @property
    def support_radius(self) -> float:
        return float(self.p[-1])


GasDistribution = MaxwellBoltzmann | TabulatedIsotropic


@dataclass(frozen=True)
class GasSpec:
    distribution: GasDistribution
    n_gas: float

    def __post_init__(self):
        # zero density is allowed so that the collisionless limit is expressible
        if not (self.n_gas >= 0 and math.isfinite(self.n_gas)):
            raise ValueError(f"n_gas must be nonnegative, got {self.n_gas}")


def mu(dist: GasDistribution, p) -> np.ndarray:
    """Momentum density ``mu(p)`` at momenta of shape ``(..., 3)``."""
    p = as_vectors(p)
    if isinstance(dist, MaxwellBoltzmann):
        d = p - dist.center
        return np.exp(-np.einsum("...i,...i->...", d, d) / dist.p_beta**2) / (
            math.pi**1.5 * dist.p_beta**3
        )
    if isinstance(dist, TabulatedIsotropic):
        return np.interp(norm(p), dist.p, dist.density, left=0.0, right=0.0)
    raise TypeError(f"unknown gas distribution {dist!r}")


def sqrt_mu(dist: GasDistribution, p) -> np.ndarray:
    """``mu(p)^(1/2)``, evaluated without squaring round-off for the Maxwellian."""
    p = as_vectors(p)
    if isinstance(dist, MaxwellBoltzmann):
        d = p - dist.center
        return np.exp(-np.einsum("...i,...i->...", d, d) / (2 * dist.p_beta**2)) / (
            math.pi**0.75 * dist.p_beta**1.5
        )
    return np.sqrt(mu(dist, p))


def boost(dist: GasDistribution, V) -> GasDistribution:
    """Distribution seen from a frame moving with velocity ``-V``: ``mu_V(p) = mu(p - mV)``."""
    if not isinstance(dist, MaxwellBoltzmann):
        raise UnsupportedVariant("only Maxwell-Boltzmann distributions can be boosted")
    V = np.asarray(V, dtype=float).reshape(3)
    if not np.any(V):
        return dist
    drift = tuple(float(a + b) for a, b in zip(dist.drift, V))
    return MaxwellBoltzmann(dist.m, dist.beta, drift)


def _isotropic_directions(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_tabulated_radius(dist: TabulatedIsotropic, rng, n):
    seg = np.searchsorted(dist._cdf, rng.random(n) * dist._cdf[-1], side="right") - 1
    seg = np.clip(seg, 0, dist.p.size - 2)
    a, b = dist.p[seg], dist.p[seg + 1]
    da, db = dist.density[seg], dist.density[seg + 1]
    slope = (db - da) / (b - a)
    c0 = da - slope * a
    # envelope: max of r^2 (c0 + slope r) on [a, b], endpoints or interior critical point
    cand = [a**2 * da, b**2 * db]
    with np.errstate(divide="ignore", invalid="ignore"):
        rc = np.where(slope < 0, -2 * c0 / (3 * slope), a)
    rc = np.clip(rc, a, b)
    cand.append(rc**2 * (c0 + slope * rc))
    bound = np.maximum.reduce(cand)
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        r = a[todo] + (b[todo] - a[todo]) * rng.random(todo.size)
        acc = rng.random(todo.size) * bound[todo] <= r**2 * (c0[todo] + slope[todo] * r)
        out[todo[acc]] = r[acc]
        todo = todo[~acc]
    return out


def sample(dist: GasDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. momenta distributed as ``mu``; shape ``(n, 3)``."""
    if isinstance(dist, MaxwellBoltzmann):
        return dist.center + rng.standard_normal((n, 3)) * (dist.p_beta / math.sqrt(2))
    if isinstance(dist, TabulatedIsotropic):
        r = _sample_tabulated_radius(dist, rng, n)
        return r[:, None] * _isotropic_directions(rng, n)
    raise TypeError(f"unknown gas distribution {dist!r}")


def sample_size_biased(dist: GasDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draws from ``mu(p) |p - center| / <|p - center|>``.

    For the Maxwellian the offset modulus squared is Gamma(2, p_beta^2)
    distributed.
    """
    if isinstance(dist, MaxwellBoltzmann):
        r = np.sqrt(rng.gamma(2.0, dist.p_beta**2, n))
        return dist.center + r[:, None] * _isotropic_directions(rng, n)
    if isinstance(dist, TabulatedIsotropic):
        # radial density r^3 mu(r): rejection from r^2 mu(r) with acceptance r / r_max
        out = np.empty(n)
        todo = np.arange(n)
        r_max = dist.p[-1]
        while todo.size:
            r = _sample_tabulated_radius(dist, rng, todo.size)
            acc = rng.random(todo.size) * r_max <= r
            out[todo[acc]] = r[acc]
            todo = todo[~acc]
        return out[:, None] * _isotropic_directions(rng, n)
    raise TypeError(f"unknown gas distribution {dist!r}")


def mean_offset_speed(dist: GasDistribution) -> float:
    """``<|p - center|>`` under ``mu``."""
    if isinstance(dist, MaxwellBoltzmann):
        return 2 * dist.p_beta / math.sqrt(math.pi)
    a, b = dist.p[:-1], dist.p[1:]
    da, db = dist.density[:-1], dist.density[1:]
    slope = (db - da) / (b - a)
    c0 = da - slope * a
    return float(4 * np.pi * np.sum(c0 * (b**4 - a**4) / 4 + slope * (b**5 - a**5) / 5))
