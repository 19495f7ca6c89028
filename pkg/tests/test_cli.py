"""Command line: exit codes, artifact bundles and summary consistency."""

import csv
import io
import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from robustcbf import cli
from robustcbf.config import CONFIG_SCHEMA, PINNED, ConfigError, load_config, parse_config, pinned_config

ROOT = Path(__file__).resolve().parents[1]

SMALL_SWEEP = {
    "name": "small",
    "mode": "sweep",
    "benchmark": "double_integrator",
    "x0": [0.4, 0.6],
    "dt": 0.01,
    "horizon": 0.3,
    "corruption": {"type": "adversarial", "resolution": 5},
    "sweep": {"kind": "box", "magnitudes": [0.02, 0.05]},
    "filters": [{"kind": "duality", "directions": 8}, {"kind": "standard"}, {"kind": "r_cbf", "label": "rcbf"}],
    "seed": 3,
}

SIMULATE = {
    "name": "sim",
    "mode": "simulate",
    "benchmark": "double_integrator",
    "x0": [0.4, 0.6],
    "dt": 0.01,
    "horizon": 0.2,
    "corruption": {"type": "random"},
    "uncertainty": {"type": "box", "half_widths": [0.05, 0.05]},
    "filters": [{"kind": "duality"}],
    "seed": 5,
}

# the estimate is pushed past x1 = 2 on the first step
DOMAIN_EXIT = {
    "name": "exit",
    "mode": "simulate",
    "benchmark": "double_integrator",
    "x0": [1.9, 0.0],
    "dt": 0.01,
    "horizon": 0.5,
    "corruption": {"type": "fixed", "offset": [-0.2, 0.0]},
    "uncertainty": {"type": "box", "half_widths": [0.3, 0.3]},
    "filters": [{"kind": "standard"}],
}


def write_cfg(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def read_csv(path):
    return list(csv.DictReader(io.StringIO(Path(path).read_text())))


# ---------------------------------------------------------------------------
# validation and exit codes


@pytest.mark.parametrize("name", PINNED)
def test_pinned_configs_validate(name, tmp_path, capsys):
    path = write_cfg(tmp_path, pinned_config(name))
    assert cli.main(["validate", str(path)]) == cli.EXIT_OK
    assert "ok" in capsys.readouterr().out


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(bogus=1), "bogus"),
        (lambda d: d.update(x0=[0.4]), "x0"),
        (lambda d: d.update(x0=[5.0, 0.0]), "domain"),
        (lambda d: d.update(mode="orbit"), "mode"),
        (lambda d: d["filters"].append({"kind": "standard"}), "unique"),
        (lambda d: d["sweep"].update(magnitudes=[0.05, 0.02]), "ascending"),
        (lambda d: d["sweep"].update(magnitudes=[-0.1]), "minimum"),
        (lambda d: d.update(input_bounds=[[1.0, -1.0]]), "input_bounds"),
        (lambda d: d.update(desired={"type": "constant", "value": [1.0, 2.0]}), "desired"),
        (lambda d: d.update(benchmark_params={"body_mass": 2.0}), "parameters"),
        (lambda d: d.update(benchmark_params={"mass": 2.0}), "mass"),
        (lambda d: d["filters"][0].update(directions=2), "directions"),
        (lambda d: d.pop("sweep"), "sweep"),
    ],
)
def test_bad_config_exit_2_and_no_output(mutate, fragment, tmp_path, capsys):
    doc = json.loads(json.dumps(SMALL_SWEEP))
    mutate(doc)
    path = write_cfg(tmp_path, doc)
    out = tmp_path / "out"
    assert cli.main(["run", str(path), "--out-dir", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()
    assert fragment in capsys.readouterr().err


def test_malformed_json_and_missing_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG
    assert "invalid JSON" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_unknown_example_and_bad_flags(tmp_path):
    assert cli.main(["reproduce", "example9", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    path = write_cfg(tmp_path, SMALL_SWEEP)
    assert cli.main(["run", str(path), "--seed", "-1", "--out-dir", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(path), "--threads", "0", "--out-dir", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_fixed_offset_outside_error_set_rejected():
    doc = dict(DOMAIN_EXIT, corruption={"type": "fixed", "offset": [0.5, 0.0]})
    with pytest.raises(ConfigError, match="offset"):
        parse_config(doc)


def test_lqr_weights_must_match_dimensions():
    doc = pinned_config("example3")
    doc["desired"]["Q"] = [1.0, 1.0]
    with pytest.raises(ConfigError, match="LQR"):
        parse_config(doc)


def test_static_error_set_must_stay_in_domain():
    doc = pinned_config("example1")
    doc["x_hat"] = [1.98]
    with pytest.raises(ConfigError, match="domain"):
        parse_config(doc)


def test_schema_document_is_current(capsys):
    assert cli.main(["schema"]) == cli.EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(json.dumps(CONFIG_SCHEMA))
    assert json.loads((ROOT / "docs" / "config.schema.json").read_text()) == printed


# ---------------------------------------------------------------------------
# runs


def test_domain_exit_is_fault_with_outputs(tmp_path, capsys):
    path = write_cfg(tmp_path, DOMAIN_EXIT)
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path)]) == cli.EXIT_FAULT
    bundle = tmp_path / "exit"
    summary = json.loads((bundle / "summary.json").read_text())
    assert summary["faults"] and summary["filters"]["standard"]["domain_exit"]
    rows = read_csv(bundle / "traj_standard.csv")
    assert rows[-1]["status"] == "DomainExit"
    assert "left the model domain" in capsys.readouterr().err


def test_example1_static_bundle(tmp_path):
    assert cli.main(["reproduce", "example1", "--out-dir", str(tmp_path)]) == cli.EXIT_OK
    bundle = tmp_path / "example1"
    summary = json.loads((bundle / "summary.json").read_text())
    f = summary["filters"]
    assert f["mr_cbf"]["status"] == "Infeasible"
    assert f["decoupled"]["status"] == "Infeasible"
    assert f["duality"]["status"] == "Feasible" and f["duality"]["u_feasible"]
    # the margin is recomputable from the image dump
    image = read_csv(bundle / "image.csv")
    a = np.array([float(r["a1"]) for r in image])
    b = np.array([float(r["b"]) for r in image])
    u = f["duality"]["u"][0]
    assert f["duality"]["min_margin"] == pytest.approx(float(np.min(a * u + b)), abs=1e-12)
    assert len(image) == summary["verification_states"]
    rows = {r["label"]: r for r in read_csv(bundle / "feasibility.csv")}
    assert rows["duality"]["u_feasible"] == "true"
    assert {p.name for p in bundle.iterdir()} >= {"polytope_decoupled.csv", "polytope_duality.csv"}


def test_sweep_outputs_match_summary(tmp_path):
    doc = dict(SMALL_SWEEP, record_timing=True)
    path = write_cfg(tmp_path, doc)
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path)]) == cli.EXIT_OK
    bundle = tmp_path / "small"
    summary = json.loads((bundle / "summary.json").read_text())
    labels = ["duality", "standard", "rcbf"]
    sweep = read_csv(bundle / "sweep.csv")
    assert list(sweep[0]) == ["delta"] + [f"min_h_{l}" for l in labels] + [f"infeasible_{l}" for l in labels]
    assert [float(r["delta"]) for r in sweep] == summary["magnitudes"] == [0.02, 0.05]
    for label in labels:
        entry = summary["filters"][label]
        all_ms, hs = [], []
        for row, cell in zip(sweep, entry["cells"]):
            traj = read_csv(bundle / cell["trajectory"])
            h = [float(r["h"]) for r in traj]
            ms = [float(r["solve_ms"]) for r in traj[:-1]]
            assert float(row[f"min_h_{label}"]) == min(h) == cell["min_h"]
            assert cell["solve_ms"]["steps"] == len(ms)
            assert cell["solve_ms"]["max_ms"] == max(ms)
            assert cell["solve_ms"]["mean_ms"] == pytest.approx(np.mean(ms), rel=1e-12)
            all_ms += ms
            hs += h
        assert entry["min_h"] == min(hs)
        assert entry["solve_ms"]["mean_ms"] == pytest.approx(np.mean(all_ms), rel=1e-12)
        assert entry["solve_ms"]["max_ms"] == max(all_ms)
        assert all(v > 0 for v in all_ms)


def test_threads_do_not_change_results(tmp_path):
    path = write_cfg(tmp_path, dict(SMALL_SWEEP, record_timing=False))
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(["run", str(path), "--out-dir", str(tmp_path / "b"), "--threads", "3"]) == cli.EXIT_OK
    a, b = tmp_path / "a" / "small", tmp_path / "b" / "small"
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_seed_override(tmp_path):
    path = write_cfg(tmp_path, dict(SIMULATE, record_timing=False))
    runs = {}
    for tag, extra in (("doc", []), ("same", ["--seed", "5"]), ("other", ["--seed", "6"])):
        assert cli.main(["run", str(path), "--out-dir", str(tmp_path / tag), *extra]) == cli.EXIT_OK
        runs[tag] = (tmp_path / tag / "sim" / "traj_duality.csv").read_bytes()
        seed = json.loads((tmp_path / tag / "sim" / "summary.json").read_text())["seed"]
        assert seed == (6 if tag == "other" else 5)
    assert runs["doc"] == runs["same"]
    assert runs["doc"] != runs["other"]
    assert load_config(path, 9).seed == 9


def test_rerun_overwrites_bundle(tmp_path):
    path = write_cfg(tmp_path, dict(SIMULATE, record_timing=False))
    for _ in range(2):
        assert cli.main(["run", str(path), "--out-dir", str(tmp_path)]) == cli.EXIT_OK
    assert sorted(p.name for p in tmp_path.iterdir() if p.name.startswith(".")) == []


def _subprocess(args, env_extra=None, cwd=None):
    env = dict(os.environ, PYTHONPATH=str(ROOT / "src"), **(env_extra or {}))
    return subprocess.run([sys.executable, "-m", "robustcbf.cli", *args], capture_output=True, text=True, env=env, cwd=cwd)


def test_log_level_from_environment(tmp_path):
    path = write_cfg(tmp_path, dict(SIMULATE, horizon=0.05))
    quiet = _subprocess(["run", str(path), "--out-dir", str(tmp_path / "q")])
    loud = _subprocess(["run", str(path), "--out-dir", str(tmp_path / "l")], {"ROBUSTCBF_LOG": "info"})
    assert quiet.returncode == loud.returncode == 0
    assert "INFO" not in quiet.stderr
    assert "INFO robustcbf: running sim" in loud.stderr


def test_process_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    assert _subprocess(["validate", str(bad)]).returncode == 2
    assert _subprocess(["run", str(write_cfg(tmp_path, DOMAIN_EXIT)), "--out-dir", str(tmp_path)]).returncode == 1
    assert _subprocess(["validate", str(write_cfg(tmp_path, SIMULATE, "ok.json"))]).returncode == 0


def test_demo_configs_validate(capsys):
    for path in sorted((ROOT / "demos" / "configs").glob("*.json")):
        assert cli.main(["validate", str(path)]) == cli.EXIT_OK, path
