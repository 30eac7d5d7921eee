import json
from pathlib import Path

import numpy as np
import pytest
import yaml
from click.testing import CliRunner

from scle.cli import ConfigError, main, rows_to_csv, validate_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TWO_STATE = {
    "seed": 42,
    "space": {"kind": "finite", "labels": ["a", "b"]},
    "model": {"family": "ctmc", "rates": [[-1.0, 1.0], [1.0, -1.0]]},
    "suites": {"martingale": {"f": {"name": "vector", "values": [1.0, 0.0]}, "x0": "a", "n_paths": 100000,
                              "times": [1.0]}},
}


def _write(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def _run(*args):
    return CliRunner().invoke(main, list(args))


def test_positive_control_passes(tmp_path):
    out = tmp_path / "out"
    r = _run("run", "--config", _write(tmp_path, TWO_STATE), "--out", str(out))
    assert r.exit_code == 0, r.output
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["exit_status"] == 0
    assert rep["config"]["suites"]["martingale"]["alpha"] == 0.01  # defaults materialized
    assert rep["provenance"]["seed"] == 42


def test_corruption_knob_fails_with_report(tmp_path):
    cfg = dict(TWO_STATE, corruption={"scale": 2.0})
    out = tmp_path / "out"
    r = _run("run", "--config", _write(tmp_path, cfg), "--out", str(out))
    assert r.exit_code == 1
    rep = json.loads((out / "report.json").read_text())
    mean = rep["suites"][0]["checks"][0]
    assert mean["check"] == "martingale_mean" and not mean["passed"]
    assert mean["verdicts"][0]["mean"] == pytest.approx((1 - np.exp(-2)) / 2, abs=0.02)


def test_missing_seed_names_the_key(tmp_path):
    cfg = {k: v for k, v in TWO_STATE.items() if k != "seed"}
    r = _run("run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 2
    assert "seed" in r.output
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert info.value.keys == ["seed"]


def test_validation_collects_every_offending_key():
    cfg = dict(TWO_STATE, colour="red", suites={"martingale": {"n_pathz": 3}, "bogus": {}})
    with pytest.raises(ConfigError) as info:
        validate_config(cfg)
    assert set(info.value.keys) == {"colour", "suites.martingale.n_pathz", "suites.bogus"}


def test_invalid_space_kind(tmp_path):
    cfg = dict(TWO_STATE, space={"kind": "torus"})
    r = _run("describe", "--config", _write(tmp_path, cfg))
    assert r.exit_code == 2 and "space.kind" in r.output


def test_describe_heat_plan():
    r = _run("describe", "--config", str(CONFIGS / "heat_counterexample.yaml"))
    assert r.exit_code == 0
    assert "sup-norm residual curve" in r.output and "beta residual curve" in r.output


def test_describe_empty_suites_warns(tmp_path):
    cfg = dict(TWO_STATE, suites={})
    r = _run("describe", "--config", _write(tmp_path, cfg))
    assert r.exit_code == 0 and "0 checks" in r.output and "WARNING" in r.output


def test_identical_config_gives_identical_bytes(tmp_path):
    cfg = dict(TWO_STATE, suites={"martingale": {"n_paths": 20000}, "scle": {}})
    path = _write(tmp_path, cfg)
    outs = []
    for i, jobs in enumerate(("1", "3")):
        out = tmp_path / f"o{i}"
        assert _run("run", "--config", path, "--out", str(out), "--jobs", jobs).exit_code == 0
        outs.append(out)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert csvs
    for name in csvs:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    a, b = (json.loads((o / "report.json").read_text()) for o in outs)
    a["config"].pop("jobs"), b["config"].pop("jobs")
    assert a == b


def test_seed_override_changes_statistics(tmp_path):
    path = _write(tmp_path, dict(TWO_STATE, suites={"martingale": {"n_paths": 5000, "times": [1.0]}}))
    means = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        _run("run", "--config", path, "--out", str(out), "--seed", seed)
        rep = json.loads((out / "report.json").read_text())
        assert rep["config"]["seed"] == int(seed)
        means.append(rep["suites"][0]["checks"][0]["verdicts"][0]["mean"])
    assert means[0] != means[1]


def test_module_errors_become_failed_checks(tmp_path):
    cfg = {
        "seed": 1,
        "space": {"kind": "truncated-countable", "n_max": 30},
        "model": {"family": "birth-death", "birth": 1.0, "death": 1.0},
        "suites": {"extension": {"restrict": {"f": "constant"}}},
    }
    out = tmp_path / "o"
    r = _run("run", "--config", _write(tmp_path, cfg), "--out", str(out))
    assert r.exit_code == 1
    rep = json.loads((out / "report.json").read_text())
    check = rep["suites"][0]["checks"][0]
    assert check["error"] == "PreconditionError" and "vanish" in check["reason"]


def test_rates_csv_model(tmp_path):
    (tmp_path / "q.csv").write_text("-1,1\n2,-2\n")
    cfg = {"seed": 3, "space": {"kind": "finite", "n": 2}, "model": {"family": "ctmc", "rates_csv": "q.csv"},
           "suites": {"scle": {}}}
    r = _run("run", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 0, r.output


def test_export_writes_paths(tmp_path):
    out = tmp_path / "e"
    r = _run("export", "--config", str(CONFIGS / "birth_death.yaml"), "--out", str(out))
    assert r.exit_code == 0
    text = (out / "paths.csv").read_text().splitlines()
    assert text[0] == "path_id,time,state"
    resolved = yaml.safe_load((out / "config.resolved.yaml").read_text())
    assert resolved["suites"]["containment"]["eps"] == 0.05


@pytest.mark.parametrize("name", ["two_state_martingale", "heat_counterexample", "birth_death", "topology"])
def test_shipped_configs_pass(tmp_path, name):
    r = _run("run", "--config", str(CONFIGS / f"{name}.yaml"), "--out", str(tmp_path / name))
    assert r.exit_code == 0, r.output


def test_rows_to_csv_union_of_fields():
    text = rows_to_csv([{"a": 1.5}, {"a": 2.0, "b": True}])
    assert text.splitlines() == ["a,b", "1.5,", "2.0,True"]
