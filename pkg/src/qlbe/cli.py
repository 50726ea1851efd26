"""Scenario runner.

``qlbe run CONFIG`` executes one scenario described by a JSON file and writes
CSV/JSON outputs plus ``manifest.json`` into the output directory.
``qlbe validate CONFIG`` checks the file and echoes the effective parameters.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from . import __version__
from .errors import ConfigError, NumericalError, UnsupportedVariant, WrongModel
from .gas import GasSpec, MaxwellBoltzmann, TabulatedIsotropic
from .kinematics import MassPair
from .rates import CollisionSystem, QuadratureBudget

log = logging.getLogger("qlbe")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

PosFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
NonNegFloat = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Vec3 = Annotated[list[float], Field(min_length=3, max_length=3)]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# --- system block ---------------------------------------------------------


class MassesCfg(_Strict):
    m: PosFloat
    M: PosFloat


class MaxwellCfg(_Strict):
    kind: Literal["maxwell"]
    beta: PosFloat
    drift: Vec3 = [0.0, 0.0, 0.0]


class TabulatedCfg(_Strict):
    kind: Literal["tabulated"]
    csv: str


class GasCfg(_Strict):
    distribution: Annotated[Union[MaxwellCfg, TabulatedCfg], Field(discriminator="kind")]
    n_gas: NonNegFloat


class ConstantCfg(_Strict):
    kind: Literal["constant"]
    f0: Annotated[list[float], Field(min_length=2, max_length=2)]


class HardSphereCfg(_Strict):
    kind: Literal["hard_sphere"]
    radius: PosFloat
    l_max: Optional[Annotated[int, Field(ge=0)]] = None


class BornCfg(_Strict):
    kind: Literal["born"]
    V0: Annotated[float, Field(allow_inf_nan=False)]
    width: PosFloat


class QuadratureCfg(_Strict):
    n_radial: Annotated[int, Field(ge=4)] = 48
    n_angular: Annotated[int, Field(ge=4)] = 24
    n_plane: Annotated[int, Field(ge=4)] = 48
    plane_extent: Annotated[float, Field(ge=4)] = 6.0
    mc_samples: Annotated[int, Field(ge=4)] = 100_000
    rel_tol: PosFloat = 1e-6


class SystemCfg(_Strict):
    masses: MassesCfg
    gas: GasCfg
    model: Annotated[Union[ConstantCfg, HardSphereCfg, BornCfg], Field(discriminator="kind")]
    quadrature: QuadratureCfg = QuadratureCfg()


# --- scenario blocks ------------------------------------------------------


class PairCfg(_Strict):
    P: Vec3
    P_prime: Optional[Vec3] = None
    Q: Vec3


class RatesTableParams(_Strict):
    momenta: list[Vec3] = [[0.0, 0.0, 0.0]]
    pairs: list[PairCfg] = []


class ClassicalSimParams(_Strict):
    P0: Vec3
    n_trajectories: Annotated[int, Field(ge=1)] = 10_000
    t_end: PosFloat
    n_out: Annotated[int, Field(ge=1)] = 50
    n_bins: Annotated[int, Field(ge=1)] = 60
    streams: Annotated[int, Field(ge=1)] = 8
    dt_factor: Annotated[float, Field(gt=0, le=0.1)] = 0.05
    fit: bool = False


class GridCfg(_Strict):
    n: Annotated[int, Field(ge=8)] = 16
    half_width: PosFloat
    center: Vec3 = [0.0, 0.0, 0.0]


class GaussianInitCfg(_Strict):
    center: Vec3
    width: PosFloat
    phase_gradient: Vec3 = [0.0, 0.0, 0.0]


class QlbeEvolveParams(_Strict):
    grid: GridCfg
    dP: Vec3 = [0.0, 0.0, 0.0]
    initial: GaussianInitCfg
    t_end: PosFloat
    dt: Optional[PosFloat] = None
    kernel: Literal["full", "limit"] = "full"
    n_plane: Annotated[int, Field(ge=4)] = 24
    snapshot_times: list[NonNegFloat] = []


class DecoherenceParams(_Strict):
    separations: list[NonNegFloat]
    direction: Vec3 = [0.0, 0.0, 1.0]


class RefractionParams(_Strict):
    K: list[PosFloat]
    direction: Vec3 = [0.0, 0.0, 1.0]


class BornCheckParams(_Strict):
    n_points: Annotated[int, Field(ge=1)] = 20
    momentum_scale: PosFloat = 1.0


class DiffusiveParams(_Strict):
    pass


class _ScenarioBase(_Strict):
    system: SystemCfg
    seed: Optional[Annotated[int, Field(ge=0)]] = None
    output_dir: Optional[str] = None


class RatesTableCfg(_ScenarioBase):
    scenario: Literal["rates-table"]
    params: RatesTableParams = RatesTableParams()


class ClassicalSimCfg(_ScenarioBase):
    scenario: Literal["classical-sim"]
    params: ClassicalSimParams


class QlbeEvolveCfg(_ScenarioBase):
    scenario: Literal["qlbe-evolve"]
    params: QlbeEvolveParams


class DecoherenceCfg(_ScenarioBase):
    scenario: Literal["decoherence"]
    params: DecoherenceParams


class RefractionCfg(_ScenarioBase):
    scenario: Literal["refraction"]
    params: RefractionParams


class BornCheckCfg(_ScenarioBase):
    scenario: Literal["born-check"]
    params: BornCheckParams = BornCheckParams()


class DiffusiveCfg(_ScenarioBase):
    scenario: Literal["diffusive"]
    params: DiffusiveParams = DiffusiveParams()


ScenarioConfig = Annotated[
    Union[
        RatesTableCfg,
        ClassicalSimCfg,
        QlbeEvolveCfg,
        DecoherenceCfg,
        RefractionCfg,
        BornCheckCfg,
        DiffusiveCfg,
    ],
    Field(discriminator="scenario"),
]
_ADAPTER = TypeAdapter(ScenarioConfig)


def _loc(err) -> str:
    loc = list(err["loc"])
    if loc and loc[0] in RUNNERS:
        loc = loc[1:]  # drop the union tag pydantic prepends
    return ".".join(str(p) for p in loc) or "<root>"


def load_config(path) -> tuple[object, list[str]]:
    """Parse and validate a config file; returns ``(config, warnings)``.

    Raises :class:`ConfigError` naming the offending key.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", str(path)) from exc
    try:
        cfg = _ADAPTER.validate_python(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], _loc(first)) from exc
    warnings = []
    if cfg.seed is None:
        warnings.append("warning: no seed given, using 0")
    system = build_system(cfg.system, base=path.parent)
    warnings.extend(_physics_warnings(system))
    return cfg, warnings


def build_system(cfg: SystemCfg, base: Path = Path(".")) -> CollisionSystem:
    from .scattering import BornGaussian, ConstantSWave, HardSphere

    try:
        masses = MassPair(cfg.masses.m, cfg.masses.M)
    except ValueError as exc:
        raise ConfigError(str(exc), "system.masses") from exc
    d = cfg.gas.distribution
    try:
        if isinstance(d, MaxwellCfg):
            dist = MaxwellBoltzmann(masses.m, d.beta, tuple(d.drift))
        else:
            p = Path(d.csv)
            dist = TabulatedIsotropic.from_csv(p if p.is_absolute() else base / p)
    except (ValueError, OSError) as exc:
        raise ConfigError(str(exc), "system.gas.distribution") from exc
    mcfg = cfg.model
    try:
        if isinstance(mcfg, ConstantCfg):
            model = ConstantSWave(complex(*mcfg.f0))
        elif isinstance(mcfg, HardSphereCfg):
            model = HardSphere(mcfg.radius, mcfg.l_max)
        else:
            model = BornGaussian(mcfg.V0, mcfg.width, masses)
    except ValueError as exc:
        raise ConfigError(str(exc), "system.model") from exc
    quad = QuadratureBudget(**cfg.quadrature.model_dump())
    return CollisionSystem(masses, GasSpec(dist, cfg.gas.n_gas), model, quad)


def _physics_warnings(system: CollisionSystem) -> list[str]:
    from .scattering import BornGaussian

    out = []
    model = system.model
    if isinstance(model, BornGaussian) and model.forward_magnitude >= model.width:
        out.append(
            f"warning: |f_B(0)| = {model.forward_magnitude:.3g} is not small against the "
            f"interaction range {model.width:.3g}; the weak-coupling form is unreliable"
        )
    return out


# --- output helpers -------------------------------------------------------


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in r])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- scenarios ------------------------------------------------------------


def _run_rates_table(cfg, system, out: Path, seed, threads):
    from .rates import energy_shift, m_in_cl, m_in_quantum, m_out_cl

    rows = []
    for P in cfg.params.momenta:
        mo, err = m_out_cl(system, P, with_error=True)
        rows.append([*P, mo, err, energy_shift(system, P)])
    files = [_write_csv(out / "rates.csv", ["Px", "Py", "Pz", "M_out", "M_out_err", "E_n"], rows)]
    if cfg.params.pairs:
        krows = []
        for pair in cfg.params.pairs:
            Pp = pair.P_prime if pair.P_prime is not None else pair.P
            r = m_in_quantum(system, pair.P, Pp, pair.Q)
            cl = m_in_cl(system, pair.P, pair.Q) if Pp == pair.P else float("nan")
            krows.append([*pair.P, *Pp, *pair.Q, r.value.real, r.value.imag, r.est_error, cl])
        header = ["Px", "Py", "Pz", "Ppx", "Ppy", "Ppz", "Qx", "Qy", "Qz", "Re_M_in", "Im_M_in", "M_in_err", "M_in_cl"]
        files.append(_write_csv(out / "kernel.csv", header, krows))
    return files, {}


def _run_classical_sim(cfg, system, out: Path, seed, threads):
    from .classical_mc import TrajectoryEnsemble, fit_drift_diffusion, thermalize

    p = cfg.params
    ens = TrajectoryEnsemble.at(p.P0, p.n_trajectories, seed=seed, streams=p.streams)
    series = thermalize(system, ens, p.t_end, n_out=p.n_out, n_bins=p.n_bins, threads=threads, dt_factor=p.dt_factor)
    files = [out / "moments.csv", out / "histogram.csv"]
    series.write_csv(files[0])
    series.write_histogram_csv(files[1])
    metrics = {"final_kinetic_energy": float(series.kinetic_energy[-1]), "collisions": int(series.n_collisions[-1])}
    if p.fit:
        fit = fit_drift_diffusion(series)
        files.append(_write_json(out / "fit.json", fit.__dict__))
        metrics["eta_hat"] = fit.eta_hat
    return files, metrics


def _run_qlbe_evolve(cfg, system, out: Path, seed, threads):
    from .grid import KERNELS, CoherenceSector, MomentumGrid, evolve, normalization_defect

    p = cfg.params
    grid = MomentumGrid(p.grid.n, p.grid.half_width, tuple(p.grid.center))
    c0 = np.asarray(p.initial.center)
    k = np.asarray(p.initial.phase_gradient)
    w = p.initial.width
    dP = np.asarray(p.dP)

    def psi(P):
        return np.exp(-np.sum((P - c0) ** 2, -1) / (4 * w**2) + 1j * (P @ k)) / (2 * math.pi * w**2) ** 0.75

    # coherence of a Gaussian wave packet: psi(P) psi*(P - dP)
    sector = CoherenceSector.from_function(grid, dP, lambda P: psi(P) * np.conj(psi(P - dP)))
    kern = KERNELS.get(system, grid, dP, p.kernel, p.n_plane, threads)
    dt = p.dt if p.dt is not None else 0.05 / float(kern.loss.max())
    res = evolve(system, sector, p.t_end, dt, kind=p.kernel, n_plane=p.n_plane, snapshot_times=p.snapshot_times, threads=threads)
    defect = None
    if not np.any(dP):
        defect = normalization_defect(system, grid, kern)
    rows = [[t, a, s.real, s.imag] for t, a, s in zip(res.times, res.l1, res.trace)]
    files = [_write_csv(out / "series.csv", ["time", "sum_abs_g", "Re_sum_g", "Im_sum_g"], rows)]
    snaps = list(res.snapshots) + [res.final]
    for i, snap in enumerate(snaps):
        name = "final" if snap is res.final else f"snapshot_{i:03d}"
        files.extend(snap.write(out / name, defect))
    metrics = {"normalization_defect": defect, "trace_drift": float(abs(res.trace[-1] / res.trace[0] - 1)), "dt": dt}
    return files, metrics


def _run_decoherence(cfg, system, out: Path, seed, threads):
    from .grid import localization_rate
    from .rates import m_out_cl

    e = np.asarray(cfg.params.direction, dtype=float)
    if not np.linalg.norm(e) > 0:
        raise ConfigError("direction must be nonzero", "params.direction")
    e = e / np.linalg.norm(e)
    heavy = system.replace(masses=MassPair(system.masses.m, system.masses.M * 1e12))
    total = m_out_cl(heavy, system.dist.center / heavy.masses.ratio)
    rows = [[x, localization_rate(system, x * e), total] for x in cfg.params.separations]
    return [_write_csv(out / "localization.csv", ["dx", "F", "total_rate"], rows)], {"total_rate": total}


def _run_refraction(cfg, system, out: Path, seed, threads):
    from .limits import refraction_index

    rows = []
    for K in cfg.params.K:
        r = refraction_index(system, K, cfg.params.direction)
        rows.append([K, r.n1, r.n2, r.n2_attenuation, r.f_avg.real, r.f_avg.imag])
    header = ["K", "n1", "n2", "n2_attenuation", "Re_f_avg", "Im_f_avg"]
    return [_write_csv(out / "refraction.csv", header, rows)], {}


def _run_born_check(cfg, system, out: Path, seed, threads):
    from .gas import rng_stream
    from .limits import born_jump_rate, born_plane_integral
    from .rates import m_in_cl

    rng = rng_stream(seed, 0)
    s = cfg.params.momentum_scale
    rows = []
    worst = 0.0
    for _ in range(cfg.params.n_points):
        P = rng.normal(scale=s, size=3)
        Q = rng.normal(scale=s, size=3)
        # P is the momentum before the collision, P + Q after it
        b = float(born_jump_rate(system, Q, P))
        k = m_in_cl(system, P + Q, Q)
        plane, _ = born_plane_integral(system, Q, P)
        rel = abs(b / k - 1) if k else float("nan")
        worst = max(worst, rel)
        rows.append([*P, *Q, b, k, float(plane), rel])
    header = ["Px", "Py", "Pz", "Qx", "Qy", "Qz", "born_rate", "M_in_cl", "plane_integral", "rel_diff"]
    return [_write_csv(out / "born.csv", header, rows)], {"max_rel_diff": worst}


def _run_diffusive(cfg, system, out: Path, seed, threads):
    from .limits import diffusive_coefficients

    c = diffusive_coefficients(system)
    return [_write_json(out / "coefficients.json", {"eta": c.eta, "Dpp": c.Dpp, "Dxx": c.Dxx})], {}


RUNNERS = {
    "rates-table": _run_rates_table,
    "classical-sim": _run_classical_sim,
    "qlbe-evolve": _run_qlbe_evolve,
    "decoherence": _run_decoherence,
    "refraction": _run_refraction,
    "born-check": _run_born_check,
    "diffusive": _run_diffusive,
}


def run(config_path, threads: int | None = None, seed: int | None = None, out: str | None = None) -> Path:
    """Run one scenario and return the output directory."""
    t0 = time.perf_counter()
    cfg, warnings = load_config(config_path)
    for w in warnings:
        if seed is None or not w.startswith("warning: no seed"):
            print(w, file=sys.stderr)
    seed = seed if seed is not None else (cfg.seed if cfg.seed is not None else 0)
    threads = threads or os.cpu_count() or 1
    out_dir = Path(out or cfg.output_dir or f"{cfg.scenario}-out")
    out_dir.mkdir(parents=True, exist_ok=True)
    system = build_system(cfg.system, base=Path(config_path).parent)
    try:
        files, metrics = RUNNERS[cfg.scenario](cfg, system, out_dir, seed, threads)
    except (ConfigError, NumericalError):
        raise
    except WrongModel as exc:
        raise ConfigError(str(exc), "system.model") from exc
    except UnsupportedVariant as exc:
        raise ConfigError(str(exc), "system.gas.distribution") from exc
    except ValueError as exc:
        raise ConfigError(str(exc), "params") from exc
    echo = cfg.model_dump(mode="json")
    echo["seed"] = seed
    canonical = json.dumps(echo, sort_keys=True, separators=(",", ":"))
    manifest = {
        "config": echo,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "code_version": __version__,
        "seed": seed,
        "threads": threads,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": {f.name: _sha256(f) for f in files},
        "metrics": metrics,
    }
    _write_json(out_dir / "manifest.json", manifest)
    return out_dir


def validate(config_path) -> tuple[bool, list[str]]:
    """Return ``(ok, report lines)``; never raises."""
    try:
        cfg, warnings = load_config(config_path)
    except ConfigError as exc:
        return False, [f"error: {exc}"]
    lines = list(warnings) + ["ok", json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True)]
    return True, lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qlbe", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="worker threads (default: logical cores)")
    parser.add_argument("--seed", type=int, default=None, help="master seed, overrides the config")
    parser.add_argument("--out", default=None, help="output directory, overrides the config")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("config")
    p_val = sub.add_parser("validate", help="check a config and echo effective parameters")
    p_val.add_argument("config")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(message)s")

    if args.command == "validate":
        ok, lines = validate(args.config)
        print("\n".join(lines))
        return EXIT_OK if ok else EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("error: --threads: must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out_dir = run(args.config, threads=args.threads, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
