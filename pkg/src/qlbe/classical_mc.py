"""Monte Carlo solution of the classical linear Boltzmann equation for the tracer.

Each trajectory collides within a step ``dt`` with probability
``1 - exp(-R(P) dt)``, where ``R`` is the classical loss rate. On a collision the
gas momentum is drawn with flux weighting ``mu |rel| sigma_tot`` by rejection,
the outgoing relative direction from the differential cross section, and the
tracer picks up ``Q = rel - |rel| n``.

Reproducibility: the ensemble is split into a fixed number of contiguous
blocks ("streams"). Block ``b`` at step ``k`` draws from a Philox generator
keyed by ``(seed, b, k)``, and block-level sums are combined with
``math.fsum`` in block order. The worker count only changes scheduling, so
results are bit-identical for any ``threads``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit

from .errors import EnvelopeExceeded, FitIllConditioned, StepTooLarge
from .gas import MaxwellBoltzmann, mean_offset_speed, sample, sample_size_biased
from .kinematics import norm
from .rates import CollisionSystem, m_out_cl
from .scattering import BornGaussian, ConstantSWave, HardSphere, sample_outgoing, sigma_tot_of_modulus

MAX_RATE_STEP = 0.1
ADAPTIVE_RATE_STEP = 0.05


def _block_rng(seed: int, stream: int, step: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(step)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class TrajectoryEnsemble:
    """Tracer momenta with the bookkeeping needed for reproducible stepping."""

    momenta: np.ndarray
    time: float = 0.0
    seed: int = 0
    streams: int = 8
    collision_count: np.ndarray | None = None
    step_index: int = 0

    def __post_init__(self):
        self.momenta = np.array(self.momenta, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.momenta)):
            raise ValueError("ensemble momenta must be finite")
        if self.collision_count is None:
            self.collision_count = np.zeros(len(self.momenta), dtype=np.int64)
        if self.streams < 1:
            raise ValueError("streams must be >= 1")

    @classmethod
    def at(cls, P0, n: int, seed: int = 0, streams: int = 8) -> "TrajectoryEnsemble":
        """``n`` trajectories starting from the same momentum."""
        return cls(np.tile(np.asarray(P0, dtype=float), (n, 1)), seed=seed, streams=streams)

    def __len__(self):
        return len(self.momenta)

    def blocks(self):
        edges = np.linspace(0, len(self), self.streams + 1).astype(int)
        return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]

    def copy(self) -> "TrajectoryEnsemble":
        return TrajectoryEnsemble(
            self.momenta.copy(), self.time, self.seed, self.streams, self.collision_count.copy(), self.step_index
        )


@dataclass
class CollisionEvent:
    """Arrays describing a batch of collisions (one row per event)."""

    p0: np.ndarray
    n: np.ndarray
    P_before: np.ndarray
    P_after: np.ndarray


# ---------------------------------------------------------------------------
# loss-rate table


class RateTable:
    """Cubic spline of ``R(P) = m_out_cl(P)`` in ``s = |P - M V|``.

    The loss rate depends on ``P`` only through the distance of ``(m/M) P``
    from the gas centre, so one radial table covers all momenta. The table
    grows when asked for larger ``s``.
    """

    def __init__(self, sys: CollisionSystem, n_nodes: int = 129):
        self.sys = sys
        self.n_nodes = n_nodes
        ms = sys.masses
        self.center = sys.dist.center / ms.ratio
        self.P_thermal = math.sqrt(ms.M / ms.m) * sys.p_scale
        self._build(6.0 * self.P_thermal)

    def _build(self, s_max: float):
        s = np.linspace(0.0, s_max, self.n_nodes)
        axis = np.array([0.0, 0.0, 1.0])
        vals = np.array([m_out_cl(self.sys, self.center + si * axis) for si in s])
        self.s_max = s_max
        self._spline = CubicSpline(s, vals, bc_type=((1, 0.0), "not-a-knot"))
        self.max_tabulated = float(vals.max())

    def __call__(self, P) -> np.ndarray:
        s = norm(np.asarray(P, dtype=float) - self.center)
        top = float(s.max(initial=0.0))
        if top > self.s_max:
            self._build(1.5 * top)
        return self._spline(s)


@lru_cache(maxsize=8)
def rate_table(sys: CollisionSystem) -> RateTable:
    return RateTable(sys)


# ---------------------------------------------------------------------------
# flux-weighted gas momentum


def sigma_max(sys: CollisionSystem) -> float:
    """Upper bound of ``sigma_tot`` over all relative momenta."""
    model = sys.model
    if isinstance(model, ConstantSWave):
        return 4 * math.pi * abs(model.f0) ** 2
    if isinstance(model, HardSphere):
        return 4 * math.pi * model.radius**2
    if isinstance(model, BornGaussian):
        return 4 * math.pi * model.forward_magnitude**2
    raise TypeError(f"unknown scattering model {model!r}")


def sample_flux_weighted(sys: CollisionSystem, P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Gas momenta ``p0`` with density proportional to ``mu(p0) |rel(p0, P)| sigma_tot``.

    Envelope: ``|rel| <= a |p0 - g| + a |g - c|`` with ``a = m*/m``, ``g`` the gas
    centre and ``c = (m/M) P``; proposals come from the matching mixture of
    ``mu`` and its size-biased version. An acceptance ratio above one means
    the bound is wrong and aborts.
    """
    ms = sys.masses
    a = ms.m_star / ms.m
    dist = sys.dist
    g = dist.center
    smax = sigma_max(sys)
    c = ms.ratio * P
    B = a * norm(g - c)
    A = a * mean_offset_speed(dist)
    p_size = A / (A + B)
    n = len(P)
    out = np.empty((n, 3))
    todo = np.arange(n)
    while todo.size:
        k = todo.size
        use_size = rng.random(k) < p_size[todo]
        prop = np.empty((k, 3))
        n_s = int(use_size.sum())
        prop[use_size] = sample_size_biased(dist, rng, n_s)
        prop[~use_size] = sample(dist, rng, k - n_s)
        rel_mod = a * norm(prop - c[todo])
        bound = smax * (a * norm(prop - g) + B[todo])
        ratio = rel_mod * sigma_tot_of_modulus(sys.model, rel_mod) / bound
        if np.any(ratio > 1 + 1e-12):
            raise EnvelopeExceeded(f"flux envelope violated (ratio {float(ratio.max()):.6g})")
        acc = rng.random(k) < ratio
        out[todo[acc]] = prop[acc]
        todo = todo[~acc]
    return out


def collide(sys: CollisionSystem, P: np.ndarray, rng: np.random.Generator) -> CollisionEvent:
    """Apply one collision to each row of ``P``."""
    P = np.asarray(P, dtype=float).reshape(-1, 3)
    ms = sys.masses
    p0 = sample_flux_weighted(sys, P, rng)
    p_i = (ms.m_star / ms.m) * p0 - (ms.m_star / ms.M) * P
    p_f = sample_outgoing(sys.model, p_i, rng)
    mod = norm(p_i)
    n = np.where(mod[:, None] > 0, p_f / np.where(mod > 0, mod, 1.0)[:, None], 0.0)
    return CollisionEvent(p0=p0, n=n, P_before=P, P_after=P + p_i - p_f)


# ---------------------------------------------------------------------------
# stepping


def _step_block(sys, P, rates, dt, rng):
    hit = rng.random(len(P)) < -np.expm1(-rates * dt)
    P = P.copy()
    if np.any(hit):
        ev = collide(sys, P[hit], rng)
        P[hit] = ev.P_after
    return P, hit


def step(sys: CollisionSystem, ens: TrajectoryEnsemble, dt: float, threads: int = 1) -> TrajectoryEnsemble:
    """Advance every trajectory by ``dt``; returns a new ensemble."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = ens.copy()
    out.time = ens.time + dt
    out.step_index = ens.step_index + 1
    if sys.n_gas == 0 or len(ens) == 0:
        return out
    rates = rate_table(sys)(ens.momenta)
    worst = float(rates.max()) * dt
    if worst > MAX_RATE_STEP:
        raise StepTooLarge(f"dt * R = {worst:.3g} exceeds {MAX_RATE_STEP}")
    blocks = ens.blocks()

    def run(b):
        sl = blocks[b]
        rng = _block_rng(ens.seed, b, ens.step_index)
        return _step_block(sys, ens.momenta[sl], rates[sl], dt, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(len(blocks))))
    else:
        results = [run(b) for b in range(len(blocks))]
    for sl, (P_new, hit) in zip(blocks, results):
        out.momenta[sl] = P_new
        out.collision_count[sl] += hit
    return out


# ---------------------------------------------------------------------------
# reductions and time series


def block_moments(ens: TrajectoryEnsemble, M: float):
    """Mean momentum, momentum covariance matrix and mean kinetic energy.

    Block partial sums are exact (``math.fsum``) and combined in block order,
    so the result does not depend on how blocks were scheduled.
    """
    n = len(ens)
    P = ens.momenta
    pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
    first = [[], [], []]
    second = [[] for _ in pairs]
    for sl in ens.blocks():
        Pb = P[sl]
        for i in range(3):
            first[i].append(math.fsum(Pb[:, i]))
        for k, (i, j) in enumerate(pairs):
            second[k].append(math.fsum(Pb[:, i] * Pb[:, j]))
    mean = np.array([math.fsum(x) for x in first]) / n
    S = np.empty((3, 3))
    for k, (i, j) in enumerate(pairs):
        S[i, j] = S[j, i] = math.fsum(second[k]) / n
    cov = S - np.outer(mean, mean)
    ekin = math.fsum(S[i, i] for i in range(3)) / (2 * M)
    return mean, cov, ekin


@dataclass
class ThermalizationSeries:
    time: np.ndarray
    mean_P: np.ndarray
    cov_P: np.ndarray
    kinetic_energy: np.ndarray
    n_collisions: np.ndarray
    hist_edges: np.ndarray
    histograms: np.ndarray
    final: TrajectoryEnsemble = field(repr=False)
    M: float = 1.0
    beta: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def write_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mean_Px", "mean_Py", "mean_Pz", "kinetic_energy", "n_collisions"])
            for t, m, e, c in zip(self.time, self.mean_P, self.kinetic_energy, self.n_collisions):
                w.writerow([_fmt(t), _fmt(m[0]), _fmt(m[1]), _fmt(m[2]), _fmt(e), int(c)])

    def write_histogram_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"bin_{i}" for i in range(len(self.hist_edges) - 1)])
            w.writerow(["edges"] + [_fmt(e) for e in self.hist_edges[:-1]] + [_fmt(self.hist_edges[-1])])
            for t, h in zip(self.time, self.histograms):
                w.writerow([_fmt(t)] + [_fmt(v) for v in h])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def thermalize(
    sys: CollisionSystem,
    ens0: TrajectoryEnsemble,
    t_end: float,
    n_out: int = 50,
    n_bins: int = 60,
    threads: int = 1,
    dt_factor: float = ADAPTIVE_RATE_STEP,
) -> ThermalizationSeries:
    """Step the ensemble to ``t_end`` with ``dt = dt_factor / max R`` and record moments.

    Histograms are of the speed ``|P - M V|`` relative to the tracer's
    equilibrium drift, on a fixed range of five thermal tracer momenta.
    """
    ms = sys.masses
    dist = sys.dist
    beta = dist.beta if isinstance(dist, MaxwellBoltzmann) else 2 * ms.m / dist.scale**2
    table = rate_table(sys)
    center = table.center
    edges = np.linspace(0.0, 5.0 * table.P_thermal, n_bins + 1)
    out_times = np.linspace(0.0, t_end, n_out + 1)
    ens = ens0
    rows_t, rows_m, rows_v, rows_e, rows_c, hists = [], [], [], [], [], []

    def record():
        m, v, e = block_moments(ens, ms.M)
        rows_t.append(ens.time)
        rows_m.append(m)
        rows_v.append(v)
        rows_e.append(e)
        rows_c.append(int(ens.collision_count.sum()))
        hists.append(np.histogram(norm(ens.momenta - center), bins=edges)[0])

    record()
    for t_target in out_times[1:]:
        while ens.time < t_target * (1 - 1e-12):
            dt = dt_factor / float(table(ens.momenta).max())
            dt = min(dt, t_target - ens.time)
            ens = step(sys, ens, dt, threads=threads)
        record()
    return ThermalizationSeries(
        time=np.array(rows_t),
        mean_P=np.array(rows_m),
        cov_P=np.array(rows_v),
        kinetic_energy=np.array(rows_e),
        n_collisions=np.array(rows_c),
        hist_edges=edges,
        histograms=np.array(hists),
        final=ens,
        M=ms.M,
        beta=beta,
        center=center,
    )


# ---------------------------------------------------------------------------
# drift / diffusion fit


@dataclass(frozen=True)
class DriftDiffusionFit:
    eta_hat: float
    Dpp_hat: float
    Dpp_stationary: float
    eta_stderr: float
    e_folds: float


def fit_drift_diffusion(series, direction=None, stationary_mean: float | None = None) -> DriftDiffusionFit:
    """Friction and momentum diffusion from an Ornstein-Uhlenbeck relaxation.

    ``eta_hat`` fits ``<P_par>(t) - stationary_mean = A exp(-eta t)`` along
    ``direction`` (default: the initial mean momentum). ``Dpp_hat`` fits the
    transverse variance ``Var(t) = (D/eta)(1 - exp(-2 eta t)) + Var0 exp(-2 eta t)``
    with ``eta`` fixed at ``eta_hat``, which is linear in ``D``;
    ``Dpp_stationary`` is ``eta_hat`` times the variance averaged over
    ``t > 3 / eta_hat``.

    Parameters
    ----------
    series : ThermalizationSeries or tuple
        Either a simulation series or ``(time, mean_par, var_perp)`` arrays.
    """
    if isinstance(series, ThermalizationSeries):
        t = series.time
        e = np.asarray(direction if direction is not None else series.mean_P[0], dtype=float)
        e = e / np.linalg.norm(e)
        y = series.mean_P @ e
        C = series.cov_P
        v = 0.5 * (np.trace(C, axis1=1, axis2=2) - np.einsum("i,tij,j->t", e, C, e))
        if stationary_mean is None:
            stationary_mean = float(np.asarray(series.center) @ e)
    else:
        t, y, v = (np.asarray(a, dtype=float) for a in series)
        stationary_mean = stationary_mean or 0.0
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float) - stationary_mean
    v = np.asarray(v, dtype=float)
    if t.size < 4:
        raise FitIllConditioned("need at least four samples")
    A0 = y[0] if y[0] != 0 else 1.0
    below = np.nonzero(y < A0 / math.e)[0]
    eta0 = 1.0 / t[below[0]] if below.size and t[below[0]] > 0 else 1.0 / max(t[-1], 1e-300)
    popt, pcov = curve_fit(lambda tt, A, eta: A * np.exp(-eta * tt), t, y, p0=(A0, eta0))
    eta = float(popt[1])
    e_folds = eta * float(t[-1] - t[0])
    if not np.isfinite(eta) or e_folds < 2:
        raise FitIllConditioned(f"decay covers {e_folds:.3g} e-folds (< 2)")
    var0 = float(v[0])
    decay = np.exp(-2 * eta * (t - t[0]))
    basis = (1 - decay) / eta
    D = float(np.dot(basis, v - var0 * decay) / np.dot(basis, basis))
    late = (t - t[0]) > 3.0 / eta
    D_stat = eta * float(np.mean(v[late])) if np.any(late) else float("nan")
    return DriftDiffusionFit(
        eta_hat=eta,
        Dpp_hat=D,
        Dpp_stationary=D_stat,
        eta_stderr=float(math.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else float("nan"),
        e_folds=e_folds,
    )
