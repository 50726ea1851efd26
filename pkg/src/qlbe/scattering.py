"""Elastic two-body scattering amplitudes and cross sections.

Three amplitude families are provided:

``ConstantSWave``
    Energy- and angle-independent amplitude ``f0``.
``HardSphere``
    Exact partial-wave amplitude of an impenetrable sphere of radius ``a``.
``BornGaussian``
    First Born approximation for the Gaussian potential
    ``V(x) = V0 exp(-x^2 / (2 s^2))``; depends on the momentum transfer only.

Amplitudes are functions of the outgoing and incoming relative momenta
``f(p_f, p_i)`` and are vectorized over leading axes. The on-shell-only models
check ``|p_f| = |p_i|`` to a relative tolerance and use ``|p_i|`` as energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CutoffTooSmall, OffShell, QuadratureNotConverged
from .kinematics import HBAR, MassPair, as_vectors, dot, norm, orthonormal_frame
from .quadrature import gauss_legendre

ON_SHELL_RTOL = 1e-6
TAIL_RTOL = 1e-10
SPHERE_RTOL = 1e-8
_CHUNK = 200_000


@dataclass(frozen=True)
class ConstantSWave:
    f0: complex

    def __post_init__(self):
        object.__setattr__(self, "f0", complex(self.f0))


@dataclass(frozen=True)
class HardSphere:
    """Impenetrable sphere. ``l_max=None`` picks the cutoff per evaluation."""

    radius: float
    l_max: int | None = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"hard-sphere radius must be positive, got {self.radius}")
        if self.l_max is not None and self.l_max < 0:
            raise ValueError(f"l_max must be >= 0, got {self.l_max}")


@dataclass(frozen=True)
class BornGaussian:
    V0: float
    width: float
    masses: MassPair

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"Gaussian width must be positive, got {self.width}")

    @property
    def forward_magnitude(self) -> float:
        """``|f_B(0)| = m* |V0| sqrt(2 pi) s^3 / hbar^2``."""
        return self.masses.m_star * abs(self.V0) * math.sqrt(2 * math.pi) * self.width**3 / HBAR**2


ScatteringModel = ConstantSWave | HardSphere | BornGaussian


# ---------------------------------------------------------------------------
# spherical Bessel functions and hard-sphere phase shifts


def spherical_jy(lmax: int, x):
    """Spherical Bessel functions ``j_l(x)`` and ``y_l(x)`` for ``l = 0..lmax``.

    ``y_l`` by upward recurrence (stable); ``j_l`` by Miller's downward
    recurrence, normalized through the Wronskian
    ``j_l y_{l-1} - j_{l-1} y_l = x^-2``. Requires ``x > 0``. Entries of ``y_l``
    that overflow are returned as ``-inf``.

    Returns
    -------
    j, y : ndarray, shape ``(lmax + 1,) + x.shape``
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape
    x = x.ravel()
    if np.any(x <= 0):
        raise ValueError("spherical_jy requires x > 0")
    L = max(int(lmax), 1)
    n = x.size
    y = np.empty((L + 1, n))
    with np.errstate(over="ignore", invalid="ignore"):
        y[0] = -np.cos(x) / x
        y[1] = -np.cos(x) / x**2 - np.sin(x) / x
        for l in range(1, L):
            y[l + 1] = (2 * l + 1) / x * y[l] - y[l - 1]
        y[~np.isfinite(y)] = -np.inf

    top = max(L, float(x.max()) if n else 0.0)
    start = int(top + 16 + 2 * math.sqrt(40 * top))
    j = np.zeros((L + 1, n))
    cur = np.full(n, 1e-30)
    nxt = np.zeros(n)
    for l in range(start, 0, -1):
        prev = (2 * l + 1) / x * cur - nxt
        nxt, cur = cur, prev
        if l - 1 <= L:
            j[l - 1] = cur
        big = np.abs(cur) > 1e200
        if big.any():
            cur[big] *= 1e-200
            nxt[big] *= 1e-200
            j[:, big] *= 1e-200
    with np.errstate(over="ignore", invalid="ignore"):
        wr = j[1] * y[0] - j[0] * y[1]
    j *= 1.0 / (x**2 * wr)
    j = j[: lmax + 1].reshape((lmax + 1,) + shape)
    y = y[: lmax + 1].reshape((lmax + 1,) + shape)
    return j, y


def _auto_lmax(x_max: float) -> int:
    return int(math.ceil(x_max + 4.0 * x_max ** (1.0 / 3.0) + 12))


def _tan_delta(model: HardSphere, k, lmax_eval: int):
    """``tan(delta_l)`` for ``l = 0..lmax_eval`` at wavenumbers ``k > 0``."""
    j, y = spherical_jy(lmax_eval, k * model.radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = j / y
    t[~np.isfinite(t)] = 0.0
    return t


def _cutoff(model: HardSphere, k) -> int:
    x_max = float(np.max(k)) * model.radius if np.size(k) else 0.0
    if model.l_max is None:
        return _auto_lmax(x_max)
    return int(model.l_max)


def hard_sphere_phase_shifts(model: HardSphere, p, lmax: int | None = None):
    """Phase shifts ``delta_l`` with ``tan(delta_l) = j_l(pa) / y_l(pa)``.

    Returns shape ``(lmax + 1,) + shape(p)``; ``delta_0 = -p a`` (mod pi).
    """
    k = np.asarray(p, dtype=float) / HBAR
    if lmax is None:
        lmax = _cutoff(model, k)
    return np.arctan(_tan_delta(model, k, lmax))


def _check_tail(t, L: int, weight_fn, what: str):
    body = np.arange(L + 1)[:, None]
    tail = np.arange(L + 1, t.shape[0])[:, None]
    s2 = t**2 / (1 + t**2)
    total = np.sum((2 * body + 1) * s2[: L + 1], axis=0)
    tail_sum = np.sum((2 * tail + 1) * weight_fn(s2[L + 1 :]), axis=0)
    bad = tail_sum > TAIL_RTOL * total
    if np.any(bad):
        raise CutoffTooSmall(
            f"partial-wave tail exceeds {TAIL_RTOL:g} of the {what} with l_max={L}"
        )


def _hs_sums(model: HardSphere, k, cos_theta=None, want="amplitude"):
    """Partial-wave sums at wavenumbers ``k > 0`` (flat arrays)."""
    L = _cutoff(model, k)
    t = _tan_delta(model, k, L + 4)
    if want == "sigma":
        _check_tail(t, L, lambda s2: s2, "cross section")
        s2 = t[: L + 1] ** 2 / (1 + t[: L + 1] ** 2)
        ell = np.arange(L + 1)[:, None]
        return 4 * np.pi / k**2 * np.sum((2 * ell + 1) * s2, axis=0)
    _check_tail(t, L, np.sqrt, "forward amplitude")
    t = t[: L + 1]
    coeff = t / (1 - 1j * t)
    if cos_theta is None:
        ell = np.arange(L + 1)[:, None]
        return np.sum((2 * ell + 1) * coeff, axis=0) / k
    c = cos_theta
    p_prev = np.ones_like(c)
    total = coeff[0] * p_prev
    if L >= 1:
        p_cur = c.copy()
        total = total + 3 * coeff[1] * p_cur
        for l in range(1, L):
            p_next = ((2 * l + 1) * c * p_cur - l * p_prev) / (l + 1)
            p_prev, p_cur = p_cur, p_next
            total = total + (2 * l + 3) * coeff[l + 1] * p_cur
    return total / k


def _chunked(fn, *arrays):
    n = arrays[0].size
    if n <= _CHUNK:
        return fn(*arrays)
    out = []
    for s in range(0, n, _CHUNK):
        out.append(fn(*(a[s : s + _CHUNK] for a in arrays)))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# public evaluators


def _check_on_shell(pf_norm, pi_norm):
    scale = np.maximum(pi_norm, np.finfo(float).tiny)
    bad = np.abs(pf_norm - pi_norm) > ON_SHELL_RTOL * scale
    bad &= ~((pf_norm == 0) & (pi_norm == 0))
    if np.any(bad):
        worst = float(np.max(np.abs(pf_norm - pi_norm)[bad] / scale[bad]))
        raise OffShell(f"|p_f| and |p_i| differ by relative {worst:.3g}")


def amplitude(model: ScatteringModel, p_f, p_i):
    """Scattering amplitude ``f(p_f, p_i)`` (complex, length units)."""
    p_f = as_vectors(p_f)
    p_i = as_vectors(p_i)
    shape = np.broadcast_shapes(p_f.shape, p_i.shape)[:-1]
    if isinstance(model, BornGaussian):
        d = p_f - p_i
        A = model.masses.m_star * model.V0 * math.sqrt(2 * math.pi) * model.width**3 / HBAR**2
        val = -A * np.exp(-dot(d, d) * model.width**2 / (2 * HBAR**2))
        return np.broadcast_to(val, shape).astype(complex)
    pf_n = norm(p_f)
    pi_n = norm(p_i)
    _check_on_shell(pf_n, pi_n)
    if isinstance(model, ConstantSWave):
        return np.full(shape, model.f0, dtype=complex)
    if isinstance(model, HardSphere):
        pf_n, pi_n = np.broadcast_arrays(pf_n, pi_n)
        pfv, piv = np.broadcast_arrays(p_f, p_i)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = dot(pfv, piv) / (pf_n * pi_n)
        c = np.clip(np.nan_to_num(c, nan=1.0), -1.0, 1.0).ravel()
        k = (pi_n / HBAR).ravel()
        out = np.full(k.shape, -model.radius + 0j)
        ok = k * model.radius > 1e-12
        if np.any(ok):
            out[ok] = _chunked(lambda kk, cc: _hs_sums(model, kk, cc), k[ok], c[ok])
        return out.reshape(shape)
    raise TypeError(f"unknown scattering model {model!r}")


def forward_amplitude(model: ScatteringModel, p):
    """``f(p, p)`` as a function of the relative-momentum modulus ``p``."""
    p = np.asarray(p, dtype=float)
    if isinstance(model, ConstantSWave):
        return np.full(p.shape, model.f0, dtype=complex)
    if isinstance(model, BornGaussian):
        A = model.masses.m_star * model.V0 * math.sqrt(2 * math.pi) * model.width**3 / HBAR**2
        return np.full(p.shape, -A + 0j)
    if isinstance(model, HardSphere):
        k = (p / HBAR).ravel()
        out = np.full(k.shape, -model.radius + 0j)
        ok = k * model.radius > 1e-12
        if np.any(ok):
            out[ok] = _chunked(lambda kk: _hs_sums(model, kk), k[ok])
        return out.reshape(p.shape)
    raise TypeError(f"unknown scattering model {model!r}")


def differential_cross_section(model: ScatteringModel, p_f, p_i):
    return np.abs(amplitude(model, p_f, p_i)) ** 2


def sigma_tot_of_modulus(model: ScatteringModel, p):
    """Closed-form total cross section as a function of ``|p_i|``."""
    p = np.asarray(p, dtype=float)
    if isinstance(model, ConstantSWave):
        return np.full(p.shape, 4 * np.pi * abs(model.f0) ** 2)
    if isinstance(model, BornGaussian):
        A = model.forward_magnitude
        u = 2 * (p * model.width / HBAR) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(u > 1e-12, -np.expm1(-2 * u) / np.where(u > 0, u, 1.0), 2.0 - 2.0 * u)
        return 2 * np.pi * A**2 * ratio
    if isinstance(model, HardSphere):
        k = (p / HBAR).ravel()
        out = np.full(k.shape, 4 * np.pi * model.radius**2)
        ok = k * model.radius > 1e-12
        if np.any(ok):
            out[ok] = _chunked(lambda kk: _hs_sums(model, kk, want="sigma"), k[ok])
        return out.reshape(p.shape)
    raise TypeError(f"unknown scattering model {model!r}")


def sigma_tot(model: ScatteringModel, p_i):
    """Total cross section ``int dn |f(|p_i| n, p_i)|^2``.

    Closed forms are used for all three models; :func:`sigma_tot_numeric`
    evaluates the sphere integral directly.
    """
    p_i = as_vectors(p_i)
    return sigma_tot_of_modulus(model, norm(p_i))


def sigma_tot_numeric(model: ScatteringModel, p_i, n: int = 32, max_doublings: int = 5):
    """Sphere quadrature of ``|f|^2`` with node doubling until two levels agree to 1e-8."""
    p_i = np.asarray(as_vectors(p_i), dtype=float)
    if p_i.shape != (3,):
        raise ValueError("sigma_tot_numeric takes a single momentum")
    p = float(np.linalg.norm(p_i))
    if p == 0:
        raise ValueError("|p_i| must be positive")
    e1, e2 = orthonormal_frame(p_i)
    axis = p_i / p

    def level(nn):
        c, wc = gauss_legendre(nn)
        n_phi = 2 * nn
        phi = (np.arange(n_phi) + 0.5) * (2 * np.pi / n_phi)
        s = np.sqrt(1 - c**2)
        dirs = (
            c[:, None, None] * axis
            + (s[:, None] * np.cos(phi))[..., None] * e1
            + (s[:, None] * np.sin(phi))[..., None] * e2
        )
        vals = np.abs(amplitude(model, p * dirs, p_i)) ** 2
        return float(np.sum(vals.sum(axis=1) * wc) * (2 * np.pi / n_phi))

    prev = level(n)
    for _ in range(max_doublings):
        n *= 2
        cur = level(n)
        if abs(cur - prev) <= SPHERE_RTOL * abs(cur):
            return cur
        prev = cur
    raise QuadratureNotConverged(f"sphere quadrature of |f|^2 not converged at p={p}")


def optical_theorem_residual(model: ScatteringModel, p_i) -> float:
    """``|p_i| sigma_tot(p_i) - 4 pi hbar Im f(p_i, p_i)`` (signed)."""
    p_i = as_vectors(p_i)
    p = norm(p_i)
    if np.any(p <= 0):
        raise ValueError("|p_i| must be positive")
    res = p * sigma_tot_of_modulus(model, p) - 4 * np.pi * HBAR * forward_amplitude(model, p).imag
    return float(res) if np.ndim(res) == 0 else res


def unitarity_constant_amplitude(p: float) -> complex:
    """The constant amplitude satisfying the optical theorem at momentum ``p``: ``i hbar / p``."""
    return 1j * HBAR / p


# ---------------------------------------------------------------------------
# outgoing-direction sampling


@lru_cache(maxsize=16)
def _hs_direction_table(radius: float, l_max, x_top: float, n_table: int):
    """Inverse CDF of the polar scattering angle on a grid of ``x = p a / hbar``.

    Rows are spaced 1/64 in ``x``; each row integrates ``2 pi sin(theta) |f|^2``
    on ``n_table`` uniform angles and is inverted at ``2 n_table`` equally
    spaced probability levels.
    """
    model = HardSphere(radius, l_max)
    grid_x = np.linspace(0.0, x_top, int(64 * x_top) + 1)
    theta = np.linspace(0.0, np.pi, n_table)
    levels = np.linspace(0.0, 1.0, 2 * n_table)
    table = np.empty((grid_x.size, levels.size))
    cos_t = np.cos(theta)
    for i, xx in enumerate(grid_x):
        if xx * 1.0 <= 1e-12:
            dens = np.sin(theta)
        else:
            k = np.full(n_table, xx / radius)
            dens = np.abs(_hs_sums(model, k, cos_t)) ** 2 * np.sin(theta)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))])
        cdf /= cdf[-1]
        table[i] = np.interp(levels, cdf, theta)
    table.setflags(write=False)
    return grid_x, levels, table


def _sample_cos_theta(model: ScatteringModel, p, rng, n_table: int = 512):
    p = np.asarray(p, dtype=float)
    u = rng.random(p.shape)
    if isinstance(model, ConstantSWave):
        return 2 * u - 1
    if isinstance(model, BornGaussian):
        lam = 2 * (p * model.width / HBAR) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            c = 1 + np.log1p((1 - u) * np.expm1(-2 * lam)) / lam
        return np.where(lam > 1e-12, c, 2 * u - 1)
    if isinstance(model, HardSphere):
        x = p.ravel() * model.radius / HBAR
        x_top = 2.0 ** max(0, math.ceil(math.log2(max(float(x.max(initial=0.0)), 1.0))))
        grid_x, levels, table = _hs_direction_table(model.radius, model.l_max, x_top, n_table)
        # bilinear interpolation of the inverse CDF theta(x, u)
        fx = x / (grid_x[1] - grid_x[0])
        i0 = np.clip(fx.astype(int), 0, grid_x.size - 2)
        tx = fx - i0
        fu = u.ravel() * (levels.size - 1)
        j0 = np.clip(fu.astype(int), 0, levels.size - 2)
        tu = fu - j0
        th = (
            (1 - tx) * ((1 - tu) * table[i0, j0] + tu * table[i0, j0 + 1])
            + tx * ((1 - tu) * table[i0 + 1, j0] + tu * table[i0 + 1, j0 + 1])
        )
        return np.cos(th).reshape(p.shape)
    raise TypeError(f"unknown scattering model {model!r}")


def sample_outgoing(model: ScatteringModel, p_i, rng):
    """Draw outgoing relative momenta ``|p_i| n`` with ``n ~ dsigma/dOmega``."""
    p_i = as_vectors(p_i)
    p = norm(p_i)
    c = _sample_cos_theta(model, p, rng)
    phi = 2 * np.pi * rng.random(p.shape)
    s = np.sqrt(np.clip(1 - c**2, 0.0, None))
    safe = np.where(p[..., None] > 0, p_i, np.array([0.0, 0.0, 1.0]))
    e1, e2 = orthonormal_frame(safe)
    axis = safe / norm(safe)[..., None]
    n = c[..., None] * axis + (s * np.cos(phi))[..., None] * e1 + (s * np.sin(phi))[..., None] * e2
    return p[..., None] * n
