"""Classical and quantum collision-rate densities.

Notation follows the kinematics module: ``a = m*/m``, ``b = m*/M`` so that
``rel(p, P) = a p - b P`` and ``a + b = 1``. The tracer gains ``Q`` in a
collision; the relative momentum goes from ``p_i`` to ``p_f = p_i - Q``.

Energy deltas are never smoothed. Each one fixes the gas-momentum component
along ``Q`` and leaves a two-dimensional integral over the plane
perpendicular to ``Q``, with Jacobian ``m / (m* |Q|)``.

Every public evaluator works at two quadrature levels and reports the finer
value together with ``|fine - coarse|`` as its error estimate; levels are
doubled (at most twice) until that difference meets ``rel_tol``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import OffPlane, QuadratureNotConverged, SingularQ
from .gas import GasSpec, MaxwellBoltzmann, TabulatedIsotropic, mu, sqrt_mu
from .kinematics import HBAR, MassPair, as_vectors, dot, norm, orthonormal_frame
from .quadrature import cap_rule, disk_rule, gauss_legendre, oriented_sphere, square_rule
from .scattering import (
    BornGaussian,
    ConstantSWave,
    ScatteringModel,
    amplitude,
    forward_amplitude,
    sigma_tot_of_modulus,
)

MAX_DOUBLINGS = 2
_CHUNK_POINTS = 250_000


@dataclass(frozen=True)
class QuadratureBudget:
    n_radial: int = 48
    n_angular: int = 24
    n_plane: int = 48
    plane_extent: float = 6.0
    mc_samples: int = 100_000
    rel_tol: float = 1e-6

    def __post_init__(self):
        for name in ("n_radial", "n_angular", "n_plane", "mc_samples"):
            if int(getattr(self, name)) < 4:
                raise ValueError(f"{name} must be >= 4")
        if not self.plane_extent >= 4:
            raise ValueError("plane_extent must be >= 4")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class CollisionSystem:
    """Tracer/gas masses, gas state, scattering model and quadrature budget."""

    masses: MassPair
    gas: GasSpec
    model: ScatteringModel
    quad: QuadratureBudget = QuadratureBudget()
    eps_Q_rel: float = 1e-6

    def __post_init__(self):
        dist = self.gas.distribution
        if isinstance(dist, MaxwellBoltzmann) and not math.isclose(
            dist.m, self.masses.m, rel_tol=1e-12
        ):
            raise ValueError(f"gas distribution mass {dist.m} != system gas mass {self.masses.m}")
        if isinstance(self.model, BornGaussian) and self.model.masses != self.masses:
            raise ValueError("BornGaussian model carries masses different from the system")

    @property
    def dist(self):
        return self.gas.distribution

    @property
    def n_gas(self) -> float:
        return self.gas.n_gas

    @property
    def p_scale(self) -> float:
        return self.dist.scale

    @property
    def eps_Q(self) -> float:
        return self.eps_Q_rel * self.p_scale

    def replace(self, **changes) -> "CollisionSystem":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ComplexRate:
    value: complex
    est_error: float

    def __complex__(self):
        return complex(self.value)


# ---------------------------------------------------------------------------
# helpers


def _converge(level, rel_tol: float, what: str, max_doublings: int = MAX_DOUBLINGS):
    """Evaluate ``level(k)`` for k = 0, 1, ... until two successive agree."""
    prev = level(0)
    for k in range(1, max_doublings + 1):
        cur = level(k)
        err = np.abs(cur - prev)
        if np.all(err <= rel_tol * np.abs(cur)):
            return cur, err
        prev = cur
    worst = float(np.max(err / np.maximum(np.abs(cur), np.finfo(float).tiny)))
    raise QuadratureNotConverged(f"{what}: relative level difference {worst:.3g} > {rel_tol:g}")


def _check_Q(sys: CollisionSystem, Q):
    Qn = norm(Q)
    if np.any(Qn <= sys.eps_Q):
        raise SingularQ(f"|Q| must exceed eps_Q = {sys.eps_Q:.3g}")
    return Qn


def _chunks(K: int, per_item: int):
    step = max(1, _CHUNK_POINTS // max(per_item, 1))
    for s in range(0, K, step):
        yield slice(s, min(K, s + step))


def _batch3(*vs):
    arrs = [as_vectors(v) for v in vs]
    shape = np.broadcast_shapes(*(a.shape for a in arrs))
    return shape[:-1], [np.broadcast_to(a, shape).reshape(-1, 3) for a in arrs]


def _plane_half_width(sys: CollisionSystem) -> float:
    if isinstance(sys.dist, MaxwellBoltzmann):
        return sys.quad.plane_extent * sys.dist.p_beta
    return sys.dist.support_radius


# ---------------------------------------------------------------------------
# averages of radial functions over the gas


def _maxwell_shell(r, d: float, p_beta: float):
    """Closed-form ``int dn mu(c + r n)`` for a Maxwellian whose centre is ``d`` from ``c``."""
    if d == 0.0:
        return 4.0 / (math.sqrt(math.pi) * p_beta**3) * np.exp(-((r / p_beta) ** 2))
    return (
        np.exp(-(((r - d) / p_beta) ** 2))
        * -np.expm1(-4 * r * d / p_beta**2)
        / (math.sqrt(math.pi) * p_beta * r * d)
    )


def _tabulated_shell(dist: TabulatedIsotropic, r, d: float):
    """Closed-form ``int dn mu(c + r n)`` for a tabulated gas centred ``d`` from ``c``.

    Uses ``int dn mu = 2 pi / (r d) int_{|r-d|}^{r+d} mu(s) s ds`` with the
    piecewise-cubic antiderivative of the linear interpolant.
    """
    r = np.asarray(r, dtype=float)
    if d == 0.0:
        return 4 * np.pi * np.interp(r, dist.p, dist.density, left=0.0, right=0.0)
    p, dens = dist.p, dist.density
    slope = np.diff(dens) / np.diff(p)
    c0 = dens[:-1] - slope * p[:-1]

    def prim(i, x):
        return c0[i] * x**2 / 2 + slope[i] * x**3 / 3

    # int_0^s mu(t) t dt at the nodes, then inside the segment holding s
    idx = np.arange(p.size - 1)
    cum = np.concatenate([[0.0], np.cumsum(prim(idx, p[1:]) - prim(idx, p[:-1]))])

    def G(s):
        s = np.clip(s, p[0], p[-1])
        i = np.clip(np.searchsorted(p, s) - 1, 0, p.size - 2)
        return cum[i] + prim(i, s) - prim(i, p[i])

    return 2 * np.pi * (G(r + d) - G(np.abs(r - d))) / (r * d)


def _radial_segments(dist, d: float):
    R = dist.support_radius
    lo, hi = max(0.0, d - R), d + R
    if isinstance(dist, TabulatedIsotropic) and dist.p.size <= 512:
        # the shell average has kinks wherever r +- d crosses a table node
        kinks = np.concatenate([d + dist.p, d - dist.p, dist.p - d])
        kinks = kinks[(kinks > lo) & (kinks < hi)]
        return np.unique(np.concatenate([[lo], kinks, [hi]]))
    return np.array([lo, hi])


def _radial_rule(edges, n_total: int):
    n_seg = edges.size - 1
    n_each = max(4, -(-n_total // n_seg))
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(n_each, lo, hi)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def offset_average(sys: CollisionSystem, c, g, *, method: str = "auto", what: str = "average"):
    """``int dp0 mu(p0) g(|p0 - c|)`` with its error estimate.

    ``method='analytic'`` integrates the angles in closed form (isotropic
    gases only); ``'product'`` uses the Gauss-Legendre x uniform sphere rule
    oriented along the offset between ``c`` and the gas centre, restricted on
    each shell to the cap that meets the support of ``mu``.
    """
    dist = sys.dist
    c = np.asarray(c, dtype=float)
    offset = dist.center - c
    d = float(np.linalg.norm(offset))
    if method == "auto":
        method = "analytic" if isinstance(dist, (MaxwellBoltzmann, TabulatedIsotropic)) else "product"
    edges = _radial_segments(dist, d)
    q = sys.quad

    def level(k):
        r, wr = _radial_rule(edges, q.n_radial * 2**k)
        if method == "analytic" and isinstance(dist, TabulatedIsotropic):
            shell = _tabulated_shell(dist, r, d)
        elif method == "analytic":
            shell = _maxwell_shell(r, d, dist.p_beta)
        elif d > 0:
            # only the cap of each shell within the support radius of the gas contributes
            R = dist.support_radius
            c_min = np.clip((r**2 + d**2 - R**2) / (2 * r * d), -1.0, 1.0)
            dirs, wd = cap_rule(offset, c_min, q.n_angular * 2**k)
            shell = np.sum(mu(dist, c + r[:, None, None] * dirs) * wd, axis=1)
        else:
            dirs, wd = oriented_sphere(offset, q.n_angular * 2**k)
            pts = c + r[:, None, None] * dirs[None]
            shell = mu(dist, pts) @ wd
        return np.sum(wr * r**2 * shell * g(r))

    return _converge(level, q.rel_tol, what)


def m_out_cl(sys: CollisionSystem, P, *, with_error: bool = False, method: str = "auto"):
    """Classical loss rate ``(n/m*) int dp0 mu(p0) |rel| sigma_tot(|rel|)``.

    ``|rel(p0, P)| = (m*/m) |p0 - (m/M) P|``, so the integral is a gas
    average of a radial function centred on ``(m/M) P``.
    """
    P = np.asarray(as_vectors(P), dtype=float)
    ms = sys.masses
    a = ms.m_star / ms.m
    model = sys.model
    val, err = offset_average(
        sys,
        ms.ratio * P,
        lambda r: a * r * sigma_tot_of_modulus(model, a * r),
        method=method,
        what="m_out_cl",
    )
    pref = sys.n_gas / ms.m_star
    val, err = pref * float(val), pref * float(err)
    return (val, err) if with_error else val


def energy_shift(sys: CollisionSystem, P, *, with_error: bool = False):
    """Gas-induced energy shift ``-2 pi hbar^2 (n/m*) int dp0 mu Re f(rel, rel)``."""
    P = np.asarray(as_vectors(P), dtype=float)
    ms = sys.masses
    a = ms.m_star / ms.m
    model = sys.model
    val, err = offset_average(
        sys,
        ms.ratio * P,
        lambda r: forward_amplitude(model, a * r).real,
        what="energy_shift",
    )
    pref = -2 * math.pi * HBAR**2 * sys.n_gas / ms.m_star
    val, err = pref * float(val), abs(pref) * float(err)
    return (val, err) if with_error else val


# ---------------------------------------------------------------------------
# classical gain density, delta resolved along Q


def _m_in_cl_level(sys: CollisionSystem, P_f, Q, n: int):
    ms = sys.masses
    r = ms.ratio
    a, b = ms.m_star / ms.m, ms.m_star / ms.M
    dist = sys.dist
    half = _plane_half_width(sys)
    nodes, w = square_rule(n)
    out = np.empty(len(Q))
    for sl in _chunks(len(Q), n * n):
        q = Q[sl]
        Pf = P_f[sl]
        Qn = norm(q)
        qh = q / Qn[:, None]
        e1, e2 = orthonormal_frame(q)
        p_par = r * dot(Pf, qh) + (1 - r) * Qn / 2
        g = dist.center
        u = np.stack([e1 @ g, e2 @ g], axis=-1)[:, None, :] + half * nodes[None]
        p_perp = u[..., :1] * e1[:, None, :] + u[..., 1:] * e2[:, None, :]
        p0 = p_perp + (p_par[:, None] * qh)[:, None, :]
        Pf_perp = Pf - dot(Pf, qh)[:, None] * qh
        p_i = a * p_perp - (b * Pf_perp)[:, None, :] + 0.5 * q[:, None, :]
        p_f = p_i - q[:, None, :]
        vals = mu(dist, p0) * np.abs(amplitude(sys.model, p_f, p_i)) ** 2
        out[sl] = (vals @ w) * half**2 * (sys.n_gas * ms.m / (ms.m_star**2 * Qn))
    return out


def m_in_cl_batch(sys: CollisionSystem, P_f, Q, n_plane: int | None = None, check: bool = True):
    """Vectorized classical gain density over broadcast ``(P_f, Q)`` arrays.

    Returns ``(values, est_errors)``. With ``check=False`` only the base level
    is evaluated and the errors are NaN.
    """
    shape, (P_f, Q) = _batch3(P_f, Q)
    _check_Q(sys, Q)
    n = n_plane or sys.quad.n_plane
    if not check:
        return _m_in_cl_level(sys, P_f, Q, n).reshape(shape), np.full(shape, np.nan)
    val, err = _converge(lambda k: _m_in_cl_level(sys, P_f, Q, n * 2**k), sys.quad.rel_tol, "m_in_cl")
    return val.reshape(shape), err.reshape(shape)


def m_in_cl(sys: CollisionSystem, P_f, Q, *, with_error: bool = False):
    """Classical rate density for ending at ``P_f`` after gaining ``Q``."""
    val, err = m_in_cl_batch(sys, P_f, Q)
    val, err = float(val), float(err)
    return (val, err) if with_error else val


# ---------------------------------------------------------------------------
# factorized quantum rate


def L_fn(sys: CollisionSystem, p, P, Q):
    """Jump-operator symbol ``L(p, P; Q)`` for ``p`` in the plane perpendicular to ``Q``.

    ``sqrt(n m / (|Q| m*^2)) mu(p + (1 + m/M) Q/2 + (m/M) P_par)^(1/2)
    f(rel(p, P_perp) - Q/2, rel(p, P_perp) + Q/2)``. Broadcasts over leading axes.
    """
    p, P, Q = as_vectors(p), as_vectors(P), as_vectors(Q)
    Qn = _check_Q(sys, Q)
    pn = norm(p)
    if np.any(np.abs(dot(p, Q)) > 1e-10 * pn * Qn):
        raise OffPlane("p must be perpendicular to Q")
    return _L_core(sys, p, P, Q)


def _L_core(sys: CollisionSystem, p, P, Q):
    ms = sys.masses
    r = ms.ratio
    a, b = ms.m_star / ms.m, ms.m_star / ms.M
    Qn = norm(Q)
    qh = Q / Qn[..., None]
    P_par = dot(P, qh)[..., None] * qh
    P_perp = P - P_par
    pref = np.sqrt(sys.n_gas * ms.m / (Qn * ms.m_star**2))
    root = sqrt_mu(sys.dist, p + (1 + r) * Q / 2 + r * P_par)
    rr = a * p - b * P_perp
    f = amplitude(sys.model, rr - Q / 2, rr + Q / 2)
    return pref * root * f


def L_lim(sys: CollisionSystem, p, Q):
    """Infinite-tracer-mass form of ``L``: ``sqrt(n/(|Q| m)) mu(p + Q/2)^(1/2) f(p - Q/2, p + Q/2)``."""
    p, Q = as_vectors(p), as_vectors(Q)
    Qn = _check_Q(sys, Q)
    if np.any(np.abs(dot(p, Q)) > 1e-10 * norm(p) * Qn):
        raise OffPlane("p must be perpendicular to Q")
    pref = np.sqrt(sys.n_gas / (Qn * sys.masses.m))
    return pref * sqrt_mu(sys.dist, p + Q / 2) * amplitude(sys.model, p - Q / 2, p + Q / 2)


def _quantum_half_width(sys: CollisionSystem) -> float:
    ms = sys.masses
    return _plane_half_width(sys) * ms.m / ms.m_star


def _m_in_q_level(sys: CollisionSystem, P, Pp, Q, n: int, limit: bool = False, tight: bool = False):
    dist = sys.dist
    half = _plane_half_width(sys) if tight else _quantum_half_width(sys)
    nodes, w = square_rule(n)
    out = np.empty(len(Q), dtype=complex)
    for sl in _chunks(len(Q), n * n):
        q = Q[sl]
        e1, e2 = orthonormal_frame(q)
        g = dist.center
        u = np.stack([e1 @ g, e2 @ g], axis=-1)[:, None, :] + half * nodes[None]
        p = u[..., :1] * e1[:, None, :] + u[..., 1:] * e2[:, None, :]
        qb = q[:, None, :]
        if limit:
            L1 = _L_lim_core(sys, p, qb)
            L2 = L1
        else:
            L1 = _L_core(sys, p, (P[sl] - q)[:, None, :], qb)
            L2 = _L_core(sys, p, (Pp[sl] - q)[:, None, :], qb)
        out[sl] = (L1 * np.conj(L2)) @ w * half**2
    return out


def _L_lim_core(sys, p, Q):
    Qn = norm(Q)
    pref = np.sqrt(sys.n_gas / (Qn * sys.masses.m))
    return pref * sqrt_mu(sys.dist, p + Q / 2) * amplitude(sys.model, p - Q / 2, p + Q / 2)


def m_in_quantum_batch(
    sys: CollisionSystem,
    P,
    P_prime,
    Q,
    n_plane: int | None = None,
    check: bool = True,
    limit: bool = False,
    tight: bool = False,
):
    """Vectorized ``int_{Q-perp} L(p, P-Q; Q) L*(p, P'-Q; Q) dp``.

    ``limit=True`` substitutes the infinite-tracer-mass symbol, which makes
    the result independent of ``P`` and ``P'``. ``tight=True`` shrinks the
    plane square to ``plane_extent * p_beta``: both root-density factors are
    centred on the drift with width ``p_beta`` whatever the masses, so the
    default ``m/m*`` widening only thins out the nodes. Fixed-order callers
    use it.
    """
    shape, (P, Pp, Q) = _batch3(P, P_prime, Q)
    _check_Q(sys, Q)
    n = n_plane or sys.quad.n_plane
    if not check:
        return _m_in_q_level(sys, P, Pp, Q, n, limit, tight).reshape(shape), np.full(shape, np.nan)
    val, err = _converge(
        lambda k: _m_in_q_level(sys, P, Pp, Q, n * 2**k, limit, tight), sys.quad.rel_tol, "m_in_quantum"
    )
    return val.reshape(shape), err.reshape(shape)


def m_in_quantum_gram(sys: CollisionSystem, P, P_prime, Q, n_plane: int | None = None):
    """``(M_in(P, P'), M_in(P, P), M_in(P', P'))`` at common ``Q`` from one pair of symbol evaluations.

    Fixed-order rule without a convergence check on the tight plane square
    (see :func:`m_in_quantum_batch`); the three values share the plane
    nodes, so the off-diagonal one obeys the Cauchy-Schwarz bound against
    the other two exactly.
    """
    shape, (P, Pp, Q) = _batch3(P, P_prime, Q)
    _check_Q(sys, Q)
    n = n_plane or sys.quad.n_plane
    half = _plane_half_width(sys)
    nodes, w = square_rule(n)
    dist = sys.dist
    off = np.empty(len(Q), dtype=complex)
    d1 = np.empty(len(Q))
    d2 = np.empty(len(Q))
    for sl in _chunks(len(Q), n * n):
        q = Q[sl]
        e1, e2 = orthonormal_frame(q)
        g = dist.center
        u = np.stack([e1 @ g, e2 @ g], axis=-1)[:, None, :] + half * nodes[None]
        p = u[..., :1] * e1[:, None, :] + u[..., 1:] * e2[:, None, :]
        qb = q[:, None, :]
        L1 = _L_core(sys, p, (P[sl] - q)[:, None, :], qb)
        L2 = _L_core(sys, p, (Pp[sl] - q)[:, None, :], qb)
        off[sl] = (L1 * np.conj(L2)) @ w * half**2
        d1[sl] = (np.abs(L1) ** 2) @ w * half**2
        d2[sl] = (np.abs(L2) ** 2) @ w * half**2
    return off.reshape(shape), d1.reshape(shape), d2.reshape(shape)


def m_in_quantum(sys: CollisionSystem, P, P_prime, Q) -> ComplexRate:
    """Complex gain density from the factorized plane integral."""
    val, err = m_in_quantum_batch(sys, P, P_prime, Q)
    return ComplexRate(complex(val), float(err))


# ---------------------------------------------------------------------------
# direct off-diagonal form, used as an independent oracle


def _m_in_direct_level(sys: CollisionSystem, P, Pp, Q, n: int):
    ms = sys.masses
    r = ms.ratio
    dist = sys.dist
    radius = (sys.quad.plane_extent + 2) * sys.p_scale
    if isinstance(dist, TabulatedIsotropic):
        radius = dist.support_radius
    nodes, w = disk_rule(n, n)
    model = sys.model

    def rel(p, PP):
        return (ms.m_star / ms.m) * p - (ms.m_star / ms.M) * PP

    out = np.empty(len(Q), dtype=complex)
    for sl in _chunks(len(Q), n * n):
        q = Q[sl]
        Qn = norm(q)
        qh = q / Qn[:, None]
        e1, e2 = orthonormal_frame(q)
        Pa, Pb = P[sl], Pp[sl]
        D = (0.5 * dot(Pa - Pb, qh))[:, None] * qh
        Pbar = 0.5 * (Pa + Pb)
        p_par = r * dot(Pbar, qh) + (1 - r) * Qn / 2
        g = dist.center
        u = np.stack([e1 @ g, e2 @ g], axis=-1)[:, None, :] + radius * nodes[None]
        p0 = (
            u[..., :1] * e1[:, None, :]
            + u[..., 1:] * e2[:, None, :]
            + (p_par[:, None] * qh)[:, None, :]
        )
        qb, Db = q[:, None, :], D[:, None, :]
        Pab, Pbb = Pa[:, None, :], Pb[:, None, :]
        weight = sqrt_mu(dist, p0 + r * Db) * sqrt_mu(dist, p0 - r * Db)
        f1 = amplitude(model, rel(p0 - qb, Pab - Db), rel(p0, Pab - Db - qb))
        f2 = amplitude(model, rel(p0 - qb, Pbb + Db), rel(p0, Pbb + Db - qb))
        integral = (weight * f1 * np.conj(f2)) @ w * radius**2
        out[sl] = integral * sys.n_gas * ms.m / (ms.m_star**2 * Qn)
    return out


def m_in_direct(sys: CollisionSystem, P, P_prime, Q, n: int = 64) -> ComplexRate:
    """Complex gain density evaluated from its unfactorized form.

    The delta fixes ``p0 . Q_hat`` through the mean momentum ``(P + P')/2``;
    the remaining plane integral uses a polar rule, independent of the
    tensor rule behind :func:`m_in_quantum`.
    """
    _, (P, Pp, Q) = _batch3(P, P_prime, Q)
    _check_Q(sys, Q)
    val, err = _converge(lambda k: _m_in_direct_level(sys, P, Pp, Q, n * 2**k), sys.quad.rel_tol, "m_in_direct")
    return ComplexRate(complex(val[0]), float(err[0]))


# ---------------------------------------------------------------------------
# Gaussian fast path


def gaussian_kernel_available(sys: CollisionSystem) -> bool:
    """True when the plane integral has a closed form (Maxwell gas, amplitude independent of ``p``)."""
    return isinstance(sys.dist, MaxwellBoltzmann) and isinstance(sys.model, (ConstantSWave, BornGaussian))


def m_in_gaussian(sys: CollisionSystem, P, P_prime, Q):
    """Closed-form complex gain density for a Maxwell gas and ``p``-independent amplitudes.

    With ``|f|^2`` depending on ``Q`` only, both root-density factors are
    Gaussians in the plane and the integral evaluates to
    ``n m |f|^2 / (|Q| m*^2 sqrt(pi) p_beta) exp(-[(w - g)^2 + (w' - g)^2] / (2 p_beta^2))``
    with ``w = (1 - m/M)|Q|/2 + (m/M) P.Q_hat`` and ``g`` the drift component along ``Q``.
    """
    if not gaussian_kernel_available(sys):
        raise TypeError("closed-form kernel requires a Maxwell gas and a constant or Born amplitude")
    P, Pp, Q = as_vectors(P), as_vectors(P_prime), as_vectors(Q)
    Qn = _check_Q(sys, Q)
    ms = sys.masses
    r = ms.ratio
    dist = sys.dist
    qh = Q / Qn[..., None]
    g = dot(np.broadcast_to(dist.center, Q.shape), qh)
    w1 = (1 - r) * Qn / 2 + r * dot(P, qh) - g
    w2 = (1 - r) * Qn / 2 + r * dot(Pp, qh) - g
    model = sys.model
    if isinstance(model, ConstantSWave):
        f2 = abs(model.f0) ** 2
    else:
        f2 = model.forward_magnitude**2 * np.exp(-((Qn * model.width / HBAR) ** 2))
    pb = dist.p_beta
    return (
        sys.n_gas * ms.m * f2 / (Qn * ms.m_star**2 * math.sqrt(math.pi) * pb)
        * np.exp(-(w1**2 + w2**2) / (2 * pb**2))
    )
