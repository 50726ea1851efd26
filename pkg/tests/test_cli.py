import csv
import hashlib
import json
import math
import subprocess
from pathlib import Path

import pytest

from qlbe.cli import load_config, main, validate

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(path, cfg):
    path.write_text(json.dumps(cfg))
    return path


def base_system(model=None):
    return {
        "masses": {"m": 1.0, "M": 2.0},
        "gas": {"distribution": {"kind": "maxwell", "beta": 2.0}, "n_gas": 1.0},
        "model": model or {"kind": "constant", "f0": [0.3, 0.0]},
    }


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_validate(name, capsys):
    assert main(["validate", str(CONFIGS / name)]) == 0
    assert "ok" in capsys.readouterr().out.splitlines()


def test_validate_reports(tmp_path):
    cfg = {"scenario": "diffusive", "seed": 1, "system": base_system()}
    ok, lines = validate(write_config(tmp_path / "a.json", cfg))
    assert ok and lines[0] == "ok"
    echo = json.loads("\n".join(lines[1:]))
    assert echo["system"]["quadrature"]["rel_tol"] == 1e-6

    bad = json.loads(json.dumps(cfg))
    bad["system"]["masses"]["m"] = -1.0
    ok, lines = validate(write_config(tmp_path / "b.json", bad))
    assert not ok and "system.masses.m" in lines[0]

    extra = json.loads(json.dumps(cfg))
    extra["system"]["gas"]["temperature"] = 3
    ok, lines = validate(write_config(tmp_path / "c.json", extra))
    assert not ok and "system.gas.temperature" in lines[0]

    ok, lines = validate(tmp_path / "missing.json")
    assert not ok and lines[0].startswith("error:")


def test_missing_seed_warning(tmp_path):
    cfg = {"scenario": "diffusive", "system": base_system()}
    _, warnings = load_config(write_config(tmp_path / "a.json", cfg))
    assert warnings == ["warning: no seed given, using 0"]


def test_born_validity_hint(tmp_path):
    strong = {"scenario": "rates-table", "seed": 0, "system": base_system({"kind": "born", "V0": 50.0, "width": 0.8})}
    ok, lines = validate(write_config(tmp_path / "s.json", strong))
    assert ok and any("weak-coupling" in ln for ln in lines)
    weak = {"scenario": "rates-table", "seed": 0, "system": base_system({"kind": "born", "V0": 0.01, "width": 0.8})}
    ok, lines = validate(write_config(tmp_path / "w.json", weak))
    assert ok and not any("weak-coupling" in ln for ln in lines)


def test_diffusive_unit_parameters(tmp_path):
    assert main(["--out", str(tmp_path / "out"), "run", str(CONFIGS / "diffusive.json")]) == 0
    c = json.loads((tmp_path / "out" / "coefficients.json").read_text())
    assert f"{c['eta']:.6g}" == "1.50451"
    assert c["eta"] == pytest.approx(8 / (3 * math.sqrt(math.pi)), rel=1e-15)


def test_refraction_pure_imaginary_amplitude(tmp_path):
    cfg = {
        "scenario": "refraction",
        "seed": 0,
        "system": base_system({"kind": "constant", "f0": [0.0, 0.4]}),
        "params": {"K": [0.5, 2.0]},
    }
    assert main(["--out", str(tmp_path / "o"), "run", str(write_config(tmp_path / "r.json", cfg))]) == 0
    rows = read_rows(tmp_path / "o" / "refraction.csv")
    assert [float(r["n1"]) for r in rows] == [1.0, 1.0]
    assert all(float(r["n2"]) > 0 for r in rows)


def test_csv_format(tmp_path):
    main(["--out", str(tmp_path / "o"), "run", str(CONFIGS / "rates_table.json")])
    text = (tmp_path / "o" / "rates.csv").read_bytes()
    assert b"\r\n" in text  # RFC 4180 line endings
    row = read_rows(tmp_path / "o" / "rates.csv")[1]
    assert len(row["M_out"].replace(".", "").replace("-", "").split("e")[0].lstrip("0")) <= 17
    assert float(row["M_out"]) > 0


@pytest.mark.parametrize("name", ["rates_table.json", "born_check.json", "decoherence.json", "qlbe_evolve.json"])
def test_rerun_byte_identical(name, tmp_path):
    for d in ("a", "b"):
        assert main(["--threads", "2", "--out", str(tmp_path / d), "run", str(CONFIGS / name)]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["outputs"] == mb["outputs"] and ma["outputs"]
    for f, digest in ma["outputs"].items():
        assert sha(tmp_path / "a" / f) == digest
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert ma["config_hash"] == mb["config_hash"]


def test_classical_sim_thread_independent(tmp_path):
    cfg = json.loads((CONFIGS / "classical_sim.json").read_text())
    cfg["params"].update({"n_trajectories": 800, "t_end": 5.0, "n_out": 4})
    path = write_config(tmp_path / "c.json", cfg)
    assert main(["--threads", "1", "--out", str(tmp_path / "t1"), "run", str(path)]) == 0
    assert main(["--threads", "3", "--out", str(tmp_path / "t3"), "run", str(path)]) == 0
    for f in ("moments.csv", "histogram.csv"):
        assert (tmp_path / "t1" / f).read_bytes() == (tmp_path / "t3" / f).read_bytes()
    assert main(["--seed", "99", "--out", str(tmp_path / "s"), "run", str(path)]) == 0
    assert (tmp_path / "s" / "moments.csv").read_bytes() != (tmp_path / "t1" / "moments.csv").read_bytes()
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["seed"] == 99


def test_manifest_round_trip(tmp_path):
    assert main(["--out", str(tmp_path / "a"), "run", str(CONFIGS / "born_check.json")]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert set(man) >= {"config", "config_hash", "code_version", "seed", "wall_time_s", "outputs", "metrics"}
    assert man["seed"] == 0
    assert man["metrics"]["max_rel_diff"] < 1e-8
    echo = write_config(tmp_path / "echo.json", man["config"])
    ok, _ = validate(echo)
    assert ok
    assert main(["--out", str(tmp_path / "b"), "run", str(echo)]) == 0
    again = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert again["outputs"] == man["outputs"]
    assert again["config_hash"] == man["config_hash"]


def test_writes_only_into_output_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = {"scenario": "diffusive", "seed": 0, "system": base_system()}
    path = write_config(tmp_path / "d.json", cfg)
    before = set(tmp_path.iterdir())
    assert main(["run", str(path)]) == 0
    created = set(tmp_path.iterdir()) - before
    assert created == {tmp_path / "diffusive-out"}
    assert {p.name for p in (tmp_path / "diffusive-out").iterdir()} == {"coefficients.json", "manifest.json"}


def test_exit_codes(tmp_path, capsys):
    small = {
        "scenario": "qlbe-evolve",
        "seed": 0,
        "system": base_system(),
        "params": {"grid": {"n": 8, "half_width": 1.0}, "initial": {"center": [0, 0, 0], "width": 0.4}, "t_end": 0.1},
    }
    assert main(["--out", str(tmp_path / "o"), "run", str(write_config(tmp_path / "g.json", small))]) == 3
    assert "GridTooSmall" in capsys.readouterr().err
    wrong = {"scenario": "diffusive", "seed": 0, "system": base_system({"kind": "hard_sphere", "radius": 0.3})}
    assert main(["--out", str(tmp_path / "o"), "run", str(write_config(tmp_path / "w.json", wrong))]) == 2
    assert "system.model" in capsys.readouterr().err
    assert main(["--threads", "0", "run", str(CONFIGS / "diffusive.json")]) == 2
    assert main(["run", str(tmp_path / "nope.json")]) == 2


def test_tabulated_gas_from_csv(tmp_path):
    rows = "\n".join(f"{0.05 * i},{math.exp(-(0.05 * i) ** 2)}" for i in range(161))
    (tmp_path / "mu.csv").write_text("p,weight\n" + rows + "\n")
    cfg = {
        "scenario": "rates-table",
        "seed": 0,
        "system": {
            "masses": {"m": 1.0, "M": 2.0},
            "gas": {"distribution": {"kind": "tabulated", "csv": "mu.csv"}, "n_gas": 1.0},
            "model": {"kind": "hard_sphere", "radius": 0.4},
        },
        "params": {"momenta": [[0.3, 0.0, 0.0]]},
    }
    assert main(["--out", str(tmp_path / "o"), "run", str(write_config(tmp_path / "t.json", cfg))]) == 0
    assert float(read_rows(tmp_path / "o" / "rates.csv")[0]["M_out"]) > 0


def test_console_script():
    out = subprocess.run(["qlbe", "validate", str(CONFIGS / "diffusive.json")], capture_output=True, text=True)
    assert out.returncode == 0 and "ok" in out.stdout
