"""Deterministic evolution of momentum coherences on a uniform grid.

The gain term shifts both momentum arguments of ``<P|rho|P'>`` by the same
``Q``, so the offset ``dP = P - P'`` is conserved and each offset ("sector")
evolves on its own as a complex field ``g(P) = <P|rho|P - dP>``.

Discretization
--------------
Nodes are cell centres of a cube of ``N^3`` cells. The gain from node ``s`` to
node ``t`` is ``W[t, s] = h^3 M_in(P_t, P_t - dP; P_t - P_s)`` for ``t != s``.
The self cell ``Q = 0`` is left out of both gain and loss: it moves no
probability. Loss rates are the matching column sums,
``D(s) = sum_t h^3 M_in(P_t, P_t; P_t - P_s)`` and the same sum started from
``P_s - dP``; the sector loss is their mean. For ``dP = 0`` this conserves the
trace exactly, and since ``|M_in(P, P'; Q)|`` is bounded by the geometric mean
of the two diagonal values, the l1 norm of every sector is nonincreasing.

How far ``D`` is from the continuum loss rate is reported as the
kernel-normalization defect.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline

from .errors import GridTooSmall, StepTooLarge, StepUnstable
from .gas import MaxwellBoltzmann, TabulatedIsotropic, mu
from .kinematics import dot, norm
from .quadrature import gauss_legendre, oriented_sphere
from .rates import (
    CollisionSystem,
    _converge,
    energy_shift,
    gaussian_kernel_available,
    m_in_cl_batch,
    m_in_gaussian,
    m_in_quantum_batch,
    m_in_quantum_gram,
    m_out_cl,
)
from .scattering import amplitude, sigma_tot_of_modulus, spherical_jy

PRUNE_EXPONENT = 40.0
BOUNDARY_TOL = 1e-6
GROWTH_TOL = 0.1
DENSE_FRACTION = 0.35
NEAR_CELLS = 2
NEAR_SUB = 4
FAR_SUB = 2


@dataclass(frozen=True)
class MomentumGrid:
    """Cell-centred uniform grid, ``n`` nodes per axis, symmetric about ``center``."""

    n: int
    half_width: float
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.n < 8:
            raise ValueError("need at least 8 nodes per axis")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in np.asarray(self.center).reshape(3)))

    @property
    def spacing(self) -> float:
        return 2 * self.half_width / self.n

    @property
    def cellvol(self) -> float:
        return self.spacing**3

    @property
    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - (self.n - 1) / 2) * self.spacing

    @property
    def size(self) -> int:
        return self.n**3

    def nodes(self) -> np.ndarray:
        """Node momenta, shape ``(n^3, 3)`` in C order of ``(ix, iy, iz)``."""
        a = self.axis
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=-1) + np.asarray(self.center)

    def boundary_mask(self) -> np.ndarray:
        i = np.arange(self.n)
        edge = (i == 0) | (i == self.n - 1)
        E = edge[:, None, None] | edge[None, :, None] | edge[None, None, :]
        return E.ravel()

    def spec(self) -> dict:
        return {"n": self.n, "half_width": self.half_width, "center": list(self.center)}


@dataclass
class CoherenceSector:
    grid: MomentumGrid
    dP: np.ndarray
    g: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.dP = np.asarray(self.dP, dtype=float).reshape(3)
        self.g = np.asarray(self.g, dtype=complex).reshape(self.grid.size)

    @classmethod
    def from_function(cls, grid: MomentumGrid, dP, fn, time: float = 0.0) -> "CoherenceSector":
        """Sample ``fn(P)`` (vectorized over ``(K, 3)``) on the grid nodes."""
        return cls(grid, dP, fn(grid.nodes()), time)

    def trace(self) -> complex:
        return complex(np.sum(self.g) * self.grid.cellvol)

    def l1(self) -> float:
        return float(np.sum(np.abs(self.g)) * self.grid.cellvol)

    def mirrored(self) -> "CoherenceSector":
        """The sector ``-dP`` carrying the Hermitian-conjugate elements."""
        grid = MomentumGrid(self.grid.n, self.grid.half_width, tuple(np.asarray(self.grid.center) - self.dP))
        return CoherenceSector(grid, -self.dP, np.conj(self.g), self.time)

    def write(self, stem, defect: float | None = None) -> tuple[Path, Path]:
        """CSV of ``(Px, Py, Pz, Re g, Im g)`` plus a JSON sidecar."""
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        P = self.grid.nodes()
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Px", "Py", "Pz", "Re_g", "Im_g"])
            for p, v in zip(P, self.g):
                w.writerow([_fmt(p[0]), _fmt(p[1]), _fmt(p[2]), _fmt(v.real), _fmt(v.imag)])
        meta = {
            "time": self.time,
            "dP": list(map(float, self.dP)),
            "grid": self.grid.spec(),
            "normalization_defect": defect,
        }
        json_path = stem.with_suffix(".json")
        json_path.write_text(json.dumps(meta, indent=2))
        return csv_path, json_path


def _fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# cube symmetries


def _cube_ops():
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            R = np.zeros((3, 3))
            for i, (j, s) in enumerate(zip(perm, signs)):
                R[i, j] = s
            ops.append(R)
    return ops


def _stabilizer(vectors, tol=1e-12):
    keep = []
    for R in _cube_ops():
        if all(np.allclose(R @ v, v, atol=tol * (1 + np.abs(v).max())) for v in vectors):
            keep.append(R)
    return keep


def _index_permutations(grid: MomentumGrid, ops):
    n = grid.n
    k = np.stack(np.meshgrid(*([np.arange(n) - (n - 1) / 2] * 3), indexing="ij"), -1).reshape(-1, 3)
    perms = []
    for R in ops:
        kk = k @ R.T + (n - 1) / 2
        idx = np.rint(kk).astype(int)
        perms.append((idx[:, 0] * n + idx[:, 1]) * n + idx[:, 2])
    return perms


# ---------------------------------------------------------------------------
# kernel construction


@dataclass
class SectorKernel:
    """Gain matrix and loss vector of one sector on one grid."""

    W: object
    loss: np.ndarray
    D: np.ndarray
    D_shift: np.ndarray
    nnz: int
    columns_evaluated: int
    meta: dict = field(default_factory=dict)

    def gain(self, g: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(g) and not np.iscomplexobj(self.W.data if sparse.issparse(self.W) else self.W):
            # keep a real matrix real instead of promoting it on every product
            return self.W @ g.real + 1j * (self.W @ g.imag)
        return self.W @ g


def _mu_exponent(sys: CollisionSystem, Pa, Pb, Q):
    """Gaussian exponent of the root-density product in the plane integral (Maxwell gas)."""
    dist = sys.dist
    r = sys.masses.ratio
    Qn = norm(Q)
    qh = Q / Qn[..., None]
    g = qh @ dist.center
    w1 = (1 - r) * Qn / 2 + r * dot(Pa, qh) - g
    w2 = (1 - r) * Qn / 2 + r * dot(Pb, qh) - g
    return (w1**2 + w2**2) / (2 * dist.p_beta**2)


def _limit_gaussian(sys: CollisionSystem, Q):
    dist = sys.dist
    Qn = norm(Q)
    qh = Q / Qn[..., None]
    w = Qn / 2 - qh @ dist.center
    f2 = _gaussian_f2(sys, Qn)
    return sys.n_gas * f2 / (Qn * sys.masses.m * math.sqrt(math.pi) * dist.p_beta) * np.exp(
        -(w**2) / dist.p_beta**2
    )


def _gaussian_f2(sys, Qn):
    from .scattering import BornGaussian, ConstantSWave

    model = sys.model
    if isinstance(model, ConstantSWave):
        return abs(model.f0) ** 2
    if isinstance(model, BornGaussian):
        return model.forward_magnitude**2 * np.exp(-((Qn * model.width) ** 2))
    raise TypeError(model)


def _pair_values(sys, Pt, Ps, dP, kind, n_plane, closed_form):
    """Kernel values for row/column momentum pairs: (off-diagonal, diag at t, diag at t - dP)."""
    Q = Pt - Ps
    shifted = Pt - dP
    if kind == "limit":
        if closed_form:
            v = _limit_gaussian(sys, Q)
        else:
            v = m_in_quantum_batch(sys, Pt, Pt, Q, n_plane=n_plane, check=False, limit=True, tight=True)[0].real
        return v.astype(complex), v, v
    if closed_form:
        off = m_in_gaussian(sys, Pt, shifted, Q).astype(complex)
        d0 = m_in_gaussian(sys, Pt, Pt, Q)
        d1 = m_in_gaussian(sys, shifted, shifted, Q) if np.any(dP) else d0
        return off, d0, d1
    if np.any(dP):
        return m_in_quantum_gram(sys, Pt, shifted, Q, n_plane=n_plane)
    d0 = m_in_quantum_batch(sys, Pt, Pt, Q, n_plane=n_plane, check=False, tight=True)[0].real
    return d0.astype(complex), d0, d0


def _near_offsets(r: int) -> np.ndarray:
    k = np.arange(-r, r + 1)
    K = np.stack(np.meshgrid(k, k, k, indexing="ij"), -1).reshape(-1, 3)
    return K[np.any(K != 0, axis=1)]


def _cell_rule(n_sub: int):
    x, w = gauss_legendre(n_sub, -0.5, 0.5)
    X = np.stack(np.meshgrid(x, x, x, indexing="ij"), -1).reshape(-1, 3)
    W = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return X, W


def _cell_average(sys, Ps, Qc, h, dP, kind, n_plane, closed, n_sub):
    """Average of the three kernel values over the cell of side ``h`` centred on ``Qc``."""
    xi, wq = _cell_rule(n_sub)
    J = len(xi)
    Q = (Qc[:, None, :] + h * xi[None]).reshape(-1, 3)
    Pr = np.repeat(Ps, J, axis=0)
    off, d0, d1 = _pair_values(sys, Pr + Q, Pr, dP, kind, n_plane, closed)
    shape = (len(Ps), J)
    return off.reshape(shape) @ wq, d0.reshape(shape) @ wq, d1.reshape(shape) @ wq


def _near_block(sys, grid, P, idx, cols, dP, kind, n_plane, closed, n_sub):
    """Cell-averaged entries for targets within ``NEAR_CELLS`` cells of each source column.

    ``W[t, s] = int_{cell(t - s)} dQ M_in(P_s + Q, P_s + Q - dP; Q) / h^3``: near
    ``Q = 0`` the kernel varies on the cell scale and point values would bias
    the loss sums.
    """
    n = grid.n
    h = grid.spacing
    out_t, out_s, out = [], [], []
    for k in _near_offsets(NEAR_CELLS):
        It = idx[cols] + k
        ok = np.all((It >= 0) & (It < n), axis=1)
        s = cols[ok]
        if s.size == 0:
            continue
        t = (It[ok, 0] * n + It[ok, 1]) * n + It[ok, 2]
        Qc = np.broadcast_to(h * k.astype(float), (s.size, 3))
        out_t.append(t)
        out_s.append(s)
        out.append(_cell_average(sys, P[s], Qc, h, dP, kind, n_plane, closed, n_sub))
    if not out:
        e = np.zeros(0)
        return np.zeros(0, int), np.zeros(0, int), e.astype(complex), e, e
    return (
        np.concatenate(out_t),
        np.concatenate(out_s),
        np.concatenate([o[0] for o in out]),
        np.concatenate([o[1] for o in out]),
        np.concatenate([o[2] for o in out]),
    )


def build_kernel(
    sys: CollisionSystem,
    grid: MomentumGrid,
    dP,
    kind: str = "full",
    n_plane: int = 24,
    closed_form: bool | None = None,
    threads: int = 1,
) -> SectorKernel:
    """Assemble the gain matrix and conservative loss of sector ``dP``.

    ``kind='full'`` uses the factorized rate; ``kind='limit'`` its
    infinite-tracer-mass form. For a Maxwell gas with a constant or Born
    amplitude the plane integral is taken in closed form; otherwise each
    entry is a fixed ``n_plane``-node quadrature, evaluated only for one
    column per orbit of the cube symmetries that fix ``dP``, the drift and
    the grid centre. Entries are cell averages over the momentum transfer,
    with a finer rule within ``NEAR_CELLS`` cells of the diagonal.
    """
    if kind not in ("full", "limit"):
        raise ValueError("kind must be 'full' or 'limit'")
    dP = np.asarray(dP, dtype=float).reshape(3)
    P = grid.nodes()
    K = grid.size
    n = grid.n
    hv = grid.cellvol
    idx = np.stack(np.unravel_index(np.arange(K), (n, n, n)), -1)
    closed = gaussian_kernel_available(sys) if closed_form is None else closed_form
    if closed and not gaussian_kernel_available(sys):
        raise ValueError("closed-form kernel not available for this system")
    maxwell = isinstance(sys.dist, MaxwellBoltzmann)
    prune = maxwell and kind == "full"
    D = np.zeros(K)
    D1 = np.zeros(K)

    def far_pairs(tt, ss):
        keep = np.max(np.abs(idx[tt] - idx[ss]), axis=1) > NEAR_CELLS
        tt, ss = tt[keep], ss[keep]
        Pt, Ps = P[tt], P[ss]
        if prune:
            Q = Pt - Ps
            expo = np.minimum(_mu_exponent(sys, Pt, Pt, Q), _mu_exponent(sys, Pt - dP, Pt - dP, Q))
            sel = expo <= PRUNE_EXPONENT
            tt, ss, Pt, Ps = tt[sel], ss[sel], Pt[sel], Ps[sel]
        return tt, ss, Pt, Ps

    if closed:
        rows, cols, vals = [], [], []
        step = max(1, 250_000 // K)
        for start in range(0, K, step):
            t = np.arange(start, min(K, start + step))
            tt, ss, Pt, Ps = far_pairs(np.repeat(t, K), np.tile(np.arange(K), t.size))
            off, d0, d1 = _cell_average(sys, Ps, Pt - Ps, grid.spacing, dP, kind, n_plane, True, FAR_SUB)
            np.add.at(D, ss, hv * d0)
            np.add.at(D1, ss, hv * d1)
            rows.append(tt)
            cols.append(ss)
            vals.append(hv * off)
        tt, ss, off, d0, d1 = _near_block(sys, grid, P, idx, np.arange(K), dP, kind, n_plane, True, NEAR_SUB)
        np.add.at(D, ss, hv * d0)
        np.add.at(D1, ss, hv * d1)
        rows = np.concatenate(rows + [tt])
        cols = np.concatenate(cols + [ss])
        vals = np.concatenate(vals + [hv * off])
        evaluated = K
    else:
        ops = _stabilizer([np.asarray(grid.center), sys.dist.center, dP])
        perms = _index_permutations(grid, ops)
        rep_of = -np.ones(K, dtype=int)
        reps = []
        for s in range(K):
            if rep_of[s] >= 0:
                continue
            reps.append(s)
            for perm in perms:
                if rep_of[perm[s]] < 0:
                    rep_of[perm[s]] = s

        def column(s):
            tt, _, Pt, Ps = far_pairs(np.arange(K), np.full(K, s))
            off, d0, d1 = _cell_average(sys, Ps, Pt - Ps, grid.spacing, dP, kind, n_plane, False, FAR_SUB)
            tn, _, offn, d0n, d1n = _near_block(sys, grid, P, idx, np.array([s]), dP, kind, n_plane, False, NEAR_SUB)
            t = np.concatenate([tt, tn])
            return t, np.concatenate([off, offn]), np.sum(d0) + np.sum(d0n), np.sum(d1) + np.sum(d1n)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = dict(zip(reps, pool.map(column, reps)))
        else:
            results = {s: column(s) for s in reps}
        columns = {}
        for s, (t, off, sum0, sum1) in results.items():
            for perm in perms:
                s2 = perm[s]
                if rep_of[s2] == s and s2 not in columns:
                    columns[s2] = (perm[t], off)
                    D[s2] = hv * sum0
                    D1[s2] = hv * sum1
        evaluated = len(reps)
        rows = np.concatenate([columns[s][0] for s in range(K)])
        cols = np.concatenate([np.full(columns[s][0].size, s) for s in range(K)])
        vals = hv * np.concatenate([columns[s][1] for s in range(K)])
    nnz = rows.size
    if not np.any(dP):
        vals = vals.real
    W = sparse.csr_matrix((vals, (rows, cols)), shape=(K, K))
    if nnz > DENSE_FRACTION * K * K:
        W = W.toarray()
    loss = 0.5 * (D + D1)
    return SectorKernel(W, loss, D, D1, nnz, evaluated, {"closed_form": closed, "kind": kind})


class KernelCache:
    """Small LRU cache of sector kernels keyed by system, grid, offset and kernel kind."""

    def __init__(self, maxsize: int = 4):
        self.maxsize = maxsize
        self._store: OrderedDict = OrderedDict()

    def get(self, sys, grid, dP, kind="full", n_plane=24, threads=1) -> SectorKernel:
        key = (sys, grid, tuple(np.round(np.asarray(dP, dtype=float), 14)), kind, n_plane)
        if key in self._store:
            self._store.move_to_end(key)
            return self._store[key]
        K = build_kernel(sys, grid, dP, kind, n_plane, threads=threads)
        self._store[key] = K
        while len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return K

    def clear(self):
        self._store.clear()


KERNELS = KernelCache()


# ---------------------------------------------------------------------------
# generator and time stepping


def _check_boundary(sector: CoherenceSector):
    a = np.abs(sector.g)
    total = a.sum()
    if total > 0 and a[sector.grid.boundary_mask()].sum() > BOUNDARY_TOL * total:
        frac = a[sector.grid.boundary_mask()].sum() / total
        raise GridTooSmall(f"boundary cells hold {frac:.3g} of sum |g|")


def apply_generator(
    sys: CollisionSystem,
    sector: CoherenceSector,
    kind: str = "full",
    n_plane: int = 24,
    check_boundary: bool = True,
    kernel: SectorKernel | None = None,
) -> np.ndarray:
    """Incoherent part of ``dg/dt``: gain minus the conservative loss."""
    if check_boundary:
        _check_boundary(sector)
    k = kernel or KERNELS.get(sys, sector.grid, sector.dP, kind, n_plane)
    return k.gain(sector.g) - k.loss * sector.g


def _tabulated_shift(sys: CollisionSystem, P: np.ndarray) -> np.ndarray:
    """Energy shift at many momenta via a spline in ``|P - M V|``."""
    ms = sys.masses
    center = sys.dist.center / ms.ratio
    s = norm(P - center)
    s_nodes = np.linspace(0.0, float(s.max()) * 1.01 + 1e-12, 65)
    axis = np.array([0.0, 0.0, 1.0])
    vals = np.array([energy_shift(sys, center + si * axis) for si in s_nodes])
    return CubicSpline(s_nodes, vals, bc_type=((1, 0.0), "not-a-knot"))(s)


@dataclass
class EvolutionResult:
    times: np.ndarray
    l1: np.ndarray
    trace: np.ndarray
    snapshots: list
    final: CoherenceSector
    defect: float | None = None


def evolve(
    sys: CollisionSystem,
    sector: CoherenceSector,
    t_end: float,
    dt: float,
    kind: str = "full",
    n_plane: int = 24,
    snapshot_times=(),
    include_phases: bool = True,
    check_boundary: bool = True,
    threads: int = 1,
    kernel: SectorKernel | None = None,
) -> EvolutionResult:
    """Strang splitting: exact diagonal phases around an RK4 step of the collision term.

    The phase of node ``P`` advances with ``E(P) - E(P - dP) + E_n(P) - E_n(P - dP)``,
    ``E(P) = P^2 / 2M``; it is identically zero in the ``dP = 0`` sector.
    A precomputed ``kernel`` bypasses the cache.
    """
    grid = sector.grid
    kern = kernel or KERNELS.get(sys, grid, sector.dP, kind, n_plane, threads)
    max_loss = float(kern.loss.max()) if kern.loss.size else 0.0
    if max_loss > 0 and dt > 0.05 / max_loss * (1 + 1e-12):
        raise StepTooLarge(f"dt = {dt:.3g} exceeds 0.05 / max loss = {0.05 / max_loss:.3g}")
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    dt = t_end / n_steps
    omega = np.zeros(grid.size)
    if include_phases and np.any(sector.dP):
        P = grid.nodes()
        M = sys.masses.M
        Pp = P - sector.dP
        omega = (dot(P, P) - dot(Pp, Pp)) / (2 * M)
        if kind == "full":
            omega = omega + _tabulated_shift(sys, P) - _tabulated_shift(sys, Pp)
    half_phase = np.exp(-0.5j * omega * dt)
    g = sector.g.copy()
    t = sector.time
    snaps_wanted = sorted(snapshot_times)
    snaps = []
    times, l1s, traces = [t], [np.sum(np.abs(g)) * grid.cellvol], [np.sum(g) * grid.cellvol]

    def rhs(x):
        return kern.gain(x) - kern.loss * x

    for i in range(n_steps):
        if check_boundary:
            _check_boundary(CoherenceSector(grid, sector.dP, g, t))
        g_old_abs = np.abs(g)
        x = g * half_phase
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        g = x * half_phase
        growth = float(np.max(np.abs(g) - g_old_abs))
        if growth > GROWTH_TOL * float(g_old_abs.max()):
            raise StepUnstable(f"|g| grew by {growth:.3g} in one step")
        t = sector.time + (i + 1) * dt
        times.append(t)
        l1s.append(np.sum(np.abs(g)) * grid.cellvol)
        traces.append(np.sum(g) * grid.cellvol)
        while snaps_wanted and snaps_wanted[0] <= t + 1e-12 * max(1.0, abs(t)):
            snaps.append(CoherenceSector(grid, sector.dP, g.copy(), t))
            snaps_wanted.pop(0)
    final = CoherenceSector(grid, sector.dP, g, t)
    return EvolutionResult(np.array(times), np.array(l1s), np.array(traces), snaps, final)


# ---------------------------------------------------------------------------
# kernel-normalization defect


def self_cell_rate(sys: CollisionSystem, P, h: float, n: int = 12) -> float:
    """``int_{cell} dQ M_in^cl(P + Q; Q)`` over the cube of side ``h`` about ``Q = 0``.

    Spherical coordinates absorb the ``1/|Q|`` behaviour; the radial limit
    along each direction is where the ray leaves the cube.
    """
    P = np.asarray(P, dtype=float)
    dirs, wd = oriented_sphere(np.array([0.0, 0.0, 1.0]), n)
    rmax = 0.5 * h / np.max(np.abs(dirs), axis=1)
    x, wx = gauss_legendre(n, 0.0, 1.0)
    r = rmax[:, None] * x[None, :]
    Q = r[..., None] * dirs[:, None, :]
    Q = Q.reshape(-1, 3)
    if gaussian_kernel_available(sys):
        vals = m_in_gaussian(sys, P + Q, P + Q, Q)
    else:
        vals, _ = m_in_cl_batch(sys, P + Q, Q, n_plane=24, check=False)
    vals = vals.reshape(r.shape)
    return float(np.sum(wd[:, None] * wx[None, :] * rmax[:, None] * r**2 * vals))


def normalization_defect(
    sys: CollisionSystem,
    grid: MomentumGrid,
    kernel: SectorKernel,
    radius: float | None = None,
    max_nodes: int = 27,
) -> float:
    """Worst ``|D(s) + C_self(s) - M_out(P_s)| / M_out(P_s)`` over central nodes.

    ``C_self`` is the continuum rate carried by the excluded self cell.
    Central nodes are those within ``radius`` (default: a third of the
    half-width) of the grid centre, where truncation at the grid edge does not
    enter; at most ``max_nodes`` of them, nearest first, are checked.
    """
    P = grid.nodes()
    radius = grid.half_width / 3 if radius is None else radius
    dist = norm(P - np.asarray(grid.center))
    central = np.argsort(dist, kind="stable")[:max_nodes]
    central = central[dist[central] <= radius]
    worst = 0.0
    for s in central:
        mo = m_out_cl(sys, P[s])
        c = self_cell_rate(sys, P[s], grid.spacing)
        worst = max(worst, abs(kernel.D[s] + c - mo) / mo)
    return worst


# ---------------------------------------------------------------------------
# localization rate


def _legendre_coefficients(sys: CollisionSystem, p: np.ndarray):
    """Coefficients ``s_l(p)`` of ``|f(p n, p_i)|^2 = sum_l s_l P_l(n . p_i_hat)``."""
    from .scattering import BornGaussian, ConstantSWave, HardSphere, _cutoff

    model = sys.model
    if isinstance(model, ConstantSWave):
        return np.full((1, p.size), abs(model.f0) ** 2)
    if isinstance(model, HardSphere):
        L = 2 * _cutoff(model, p) + 2
    elif isinstance(model, BornGaussian):
        lam = 2 * float(np.max(p)) ** 2 * model.width**2
        L = int(math.ceil(2 * lam + 10 * math.sqrt(lam) + 20))
    else:
        raise TypeError(model)
    c, w = gauss_legendre(L + 2)
    p_i = np.stack([np.zeros_like(p), np.zeros_like(p), p], -1)
    s = np.sqrt(1 - c**2)
    p_f = p[:, None, None] * np.stack([s, np.zeros_like(c), c], -1)[None]
    sig = np.abs(amplitude(model, p_f, p_i[:, None, :])) ** 2
    P_l = np.polynomial.legendre.legvander(c, L)
    return ((2 * np.arange(L + 1) + 1) / 2)[:, None] * (P_l.T * w) @ sig.T


def localization_rate(sys: CollisionSystem, dx, n_per_period: int = 4) -> float:
    """Localization rate of position coherences at separation ``dx`` (infinite tracer mass).

    The direction integral uses the Legendre expansion of ``|f|^2`` together with
    ``int dn P_l(n . k_hat) exp(-i p dx . n) = 4 pi (-i)^l j_l(p|dx|) P_l(k_hat . dx_hat)``.
    For an isotropic gas the remaining angles are done the same way, leaving
    ``F = (n/m) int 4 pi p^3 mu(p) [sigma_tot(p) - 4 pi sum_l s_l(p) j_l(p|dx|)^2] dp``,
    integrated on panels no wider than a quarter of the ``j_l^2`` period
    with ``n_per_period`` nodes each, doubled until converged; the sine part
    vanishes identically there. A drifting gas uses a product rule over the
    gas momentum and keeps the cosine part only: its sine part is the mean
    momentum kick of the gas wind and does not belong to ``F``. The product
    rule resolves ``|dx| p_beta`` up to about ten; beyond that it reports
    :class:`QuadratureNotConverged`.
    """
    dx = np.asarray(dx, dtype=float).reshape(3)
    X = float(np.linalg.norm(dx))
    if X == 0.0:
        return 0.0
    dist = sys.dist
    m = sys.masses.m
    isotropic = isinstance(dist, TabulatedIsotropic) or not np.any(dist.drift)
    if isotropic:
        R = dist.support_radius
        period = math.pi / X

        def level(k):
            n_panels = max(8, int(math.ceil(R / (period / 4))))
            n_each = n_per_period * 2**k
            edges = np.linspace(0.0, R, n_panels + 1)
            x, w = gauss_legendre(n_each)
            half = 0.5 * np.diff(edges)
            mid = 0.5 * (edges[1:] + edges[:-1])
            p = (mid[:, None] + half[:, None] * x[None, :]).ravel()
            wp = (half[:, None] * w[None, :]).ravel()
            s = _legendre_coefficients(sys, p)
            j, _ = spherical_jy(s.shape[0] - 1, p * X)
            coherent = 4 * math.pi * np.sum(s * j**2, axis=0)
            radial = 4 * math.pi * p**3 * mu(dist, np.stack([p, 0 * p, 0 * p], -1))
            return (sys.n_gas / m) * np.sum(wp * radial * (sigma_tot_of_modulus(sys.model, p) - coherent))

        val, _ = _converge(level, sys.quad.rel_tol, "localization_rate", max_doublings=3)
        return float(val)
    # drifting Maxwell gas: product rule over p_i oriented along dx
    q = sys.quad
    center = dist.center
    dxh = dx / X

    def level_drift(k):
        dirs, wd = oriented_sphere(dx, q.n_angular * 2**k)
        r, wr = gauss_legendre(q.n_radial * 2**k, 0.0, float(np.linalg.norm(center)) + dist.support_radius)
        s = _legendre_coefficients(sys, r)
        j, _ = spherical_jy(s.shape[0] - 1, r * X)
        ell = np.arange(s.shape[0])
        cosa = dirs @ dxh
        Pl = np.polynomial.legendre.legvander(cosa, s.shape[0] - 1)
        coh = 4 * np.pi * ((s * j * ((-1j) ** ell)[:, None]).T @ Pl.T)
        phase = np.exp(1j * X * r[:, None] * cosa[None, :])
        pts = r[:, None, None] * dirs[None]
        integrand = mu(dist, pts) * (sigma_tot_of_modulus(sys.model, r)[:, None] - phase * coh)
        return (sys.n_gas / m) * np.sum((wr * r**3)[:, None] * integrand * wd[None, :])

    val, _ = _converge(lambda k: level_drift(k).real, q.rel_tol, "localization_rate", max_doublings=2)
    return float(val)


# ---------------------------------------------------------------------------
# comparison helpers


def cell_average_density(grid: MomentumGrid, density, n_sub: int = 4) -> np.ndarray:
    """Cell averages of a continuous density, so that ``g * cellvol`` are exact cell masses."""
    xi, wq = _cell_rule(n_sub)
    P = grid.nodes()
    pts = P[:, None, :] + grid.spacing * xi[None]
    return density(pts.reshape(-1, 3)).reshape(len(P), len(xi)) @ wq


def bin_to_cells(grid: MomentumGrid, momenta) -> np.ndarray:
    """Fraction of ``momenta`` in each grid cell; samples outside the grid are dropped."""
    momenta = np.asarray(momenta, dtype=float).reshape(-1, 3)
    k = np.floor((momenta - np.asarray(grid.center)) / grid.spacing + grid.n / 2).astype(int)
    ok = np.all((k >= 0) & (k < grid.n), axis=1)
    flat = (k[ok, 0] * grid.n + k[ok, 1]) * grid.n + k[ok, 2]
    return np.bincount(flat, minlength=grid.size) / len(momenta)


def radial_profile(grid: MomentumGrid, masses, edges, origin=None) -> np.ndarray:
    """Aggregate per-cell masses into shells of ``|P_cell - origin|``."""
    origin = np.asarray(grid.center if origin is None else origin, dtype=float)
    r = norm(grid.nodes() - origin)
    h, _ = np.histogram(r, bins=edges, weights=np.asarray(masses, dtype=float))
    return h
