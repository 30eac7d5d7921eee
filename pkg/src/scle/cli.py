"""Config-driven verification campaigns.

    scle describe --config campaign.yaml
    scle run --config campaign.yaml --out results/ [--seed 7] [--jobs 4]
    scle export --config campaign.yaml --out results/

``run`` writes ``report.json`` plus one CSV per residual curve and exits with
status 1 if any selected check fails (the report is written either way).
Invalid configs exit with status 2 and name the offending keys.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np
import scipy
import yaml

import scle
from scle.errors import ValidationError
from scle.generator import (
    build_birth_death,
    build_ctmc,
    build_diffusion_1d,
    load_qmatrix_csv,
    load_rates_csv,
)
from scle.path_sim import simulate_ensemble
from scle.state_space import COUNTABLE, FINITE, GRID, StateSpace
from scle.suites import HEAT, SUITE_DEFAULTS, SUITES, Model, with_defaults

CONFIG_VERSION = 1
REPORT_VERSION = 1
TOP_KEYS = {"version", "seed", "space", "model", "suites", "corruption", "jobs", "export"}
REQUIRED = ("seed", "space", "model")
SPACE_KEYS = {FINITE: {"kind", "labels", "n"}, COUNTABLE: {"kind", "n_max", "step"},
              GRID: {"kind", "half_width", "spacing", "step"}}
MODEL_KEYS = {"ctmc": {"family", "rates", "rates_csv"}, "birth-death": {"family", "birth", "death", "rates_csv"},
              "diffusion": {"family", "drift", "diffusion"}, HEAT: {"family"}}
EXPORT_DEFAULTS = {"n_paths": 100, "horizon": 1.0, "dt": 0.01}


class ConfigError(ValidationError):
    """Invalid campaign config; ``keys`` lists the offending dotted keys."""

    def __init__(self, problems):
        self.problems = list(problems)
        self.keys = [k for k, _ in self.problems]
        super().__init__("invalid config: " + "; ".join(f"{k}: {msg}" for k, msg in self.problems))


# -- config -------------------------------------------------------------------------


def load_config(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"not valid YAML: {exc}")]) from None
    if not isinstance(data, dict):
        raise ConfigError([("<file>", "top level must be a mapping")])
    return data


def _unknown(section: str, given: dict, allowed) -> list:
    return [(f"{section}.{k}", "unknown key") for k in given if k not in allowed]


def validate_config(cfg: dict) -> dict:
    """Check a raw config and return it with every default filled in."""
    problems = [(k, "missing required key") for k in REQUIRED if k not in cfg]
    problems += [(k, "unknown key") for k in cfg if k not in TOP_KEYS]
    if cfg.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        problems.append(("version", f"only version {CONFIG_VERSION} is understood"))
    if "seed" in cfg and (not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0):
        problems.append(("seed", "must be a non-negative integer"))
    jobs = cfg.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        problems.append(("jobs", "must be a positive integer"))

    space = cfg.get("space")
    if "space" in cfg:
        if not isinstance(space, dict) or space.get("kind") not in SPACE_KEYS:
            problems.append(("space.kind", f"must be one of {sorted(SPACE_KEYS)}"))
        else:
            problems += _unknown("space", space, SPACE_KEYS[space["kind"]])
    model = cfg.get("model")
    if "model" in cfg:
        if not isinstance(model, dict) or model.get("family") not in MODEL_KEYS:
            problems.append(("model.family", f"must be one of {sorted(MODEL_KEYS)}"))
        else:
            problems += _unknown("model", model, MODEL_KEYS[model["family"]])
            if isinstance(space, dict):
                need = {"birth-death": COUNTABLE, "diffusion": GRID, HEAT: GRID}.get(model["family"])
                if need and space.get("kind") != need:
                    problems.append(("space.kind", f"model family {model['family']!r} needs a {need} space"))
    corruption = cfg.get("corruption", {"scale": 1.0})
    if not isinstance(corruption, dict) or set(corruption) - {"scale"} or \
            not isinstance(corruption.get("scale", 1.0), (int, float)):
        problems.append(("corruption", "expected a mapping {scale: number}"))
        corruption = {"scale": 1.0}

    suites = cfg.get("suites") or {}
    if not isinstance(suites, dict):
        problems.append(("suites", "expected a mapping of suite name to parameters"))
        suites = {}
    filled = {}
    for name, params in suites.items():
        if name not in SUITES:
            problems.append((f"suites.{name}", f"unknown suite; known: {sorted(SUITES)}"))
            continue
        params = params if params is not None else {}
        if params is True:
            params = {}
        if not isinstance(params, dict):
            problems.append((f"suites.{name}", "expected a mapping of parameters"))
            continue
        problems += _unknown(f"suites.{name}", params, SUITE_DEFAULTS[name])
        filled[name] = with_defaults(name, params)
    export = dict(EXPORT_DEFAULTS)
    export.update(cfg.get("export") or {})
    problems += _unknown("export", export, EXPORT_DEFAULTS)
    if problems:
        raise ConfigError(problems)
    out = copy.deepcopy(cfg)
    out.update({"version": CONFIG_VERSION, "jobs": jobs, "corruption": {"scale": float(corruption.get("scale", 1.0))},
                "suites": filled, "export": export})
    return out


def build_space(spec: dict) -> StateSpace:
    kind = spec["kind"]
    try:
        if kind == FINITE:
            if "labels" in spec:
                return StateSpace.finite([str(x) for x in spec["labels"]])
            return StateSpace.finite(int(spec["n"]))
        if kind == COUNTABLE:
            return StateSpace.countable(int(spec["n_max"]), step=int(spec.get("step", 1)))
        return StateSpace.grid(float(spec["half_width"]), float(spec["spacing"]), step=float(spec.get("step", 1.0)))
    except KeyError as exc:
        raise ConfigError([(f"space.{exc.args[0]}", "missing required key")]) from None
    except ValueError as exc:
        raise ConfigError([("space", str(exc))]) from None


def _drift(spec):
    if isinstance(spec, dict):
        a, b = float(spec.get("slope", 0.0)), float(spec.get("intercept", 0.0))
        return lambda x: a * np.asarray(x) + b
    return float(spec)


def build_model(cfg: dict, base: Path | None = None) -> Model:
    space = build_space(cfg["space"])
    m = cfg["model"]
    fam = m["family"]
    base = base or Path(".")
    try:
        if fam == "ctmc":
            if "rates_csv" in m:
                A = build_ctmc(load_qmatrix_csv(base / m["rates_csv"]), space)
            else:
                A = build_ctmc(np.asarray(m["rates"], dtype=float), space)
        elif fam == "birth-death":
            if "rates_csv" in m:
                birth, death = load_rates_csv(base / m["rates_csv"])
            else:
                birth, death = m.get("birth", 1.0), m.get("death", 1.0)
            A = build_birth_death(birth, death, space.size - 1)
            space = A.space
        elif fam == "diffusion":
            A = build_diffusion_1d(_drift(m.get("drift", 0.0)), float(m.get("diffusion", 1.0)), space)
        else:
            A = None
    except KeyError as exc:
        raise ConfigError([(f"model.{exc.args[0]}", "missing required key")]) from None
    except (ValueError, OSError) as exc:
        raise ConfigError([("model", str(exc))]) from None
    return Model(space, fam, A, int(cfg["seed"]), int(cfg.get("jobs", 1)), float(cfg["corruption"]["scale"]))


def prepare(config_path, seed=None, jobs=None):
    raw = load_config(config_path)
    if seed is not None:
        raw["seed"] = seed
    if jobs is not None:
        raw["jobs"] = jobs
    cfg = validate_config(raw)
    return cfg, build_model(cfg, Path(config_path).parent)


# -- output -------------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in _plain(r).items()})
    return buf.getvalue()


def provenance(cfg) -> dict:
    return {"scle": scle.__version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])), "seed": cfg["seed"]}


def run_campaign(cfg: dict, model: Model, out_dir) -> dict:
    """Run every selected suite, write ``report.json`` and the CSV curves, return the report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suites = []
    files = []
    for name in sorted(cfg["suites"]):
        res = SUITES[name](model, cfg["suites"][name])
        suites.append(res.as_dict())
        for curve, rows in sorted(res.curves.items()):
            fname = f"{name}_{curve}.csv"
            (out / fname).write_text(rows_to_csv(rows))
            files.append(fname)
    passed = all(s["passed"] for s in suites)
    report = {
        "report_version": REPORT_VERSION,
        "passed": passed,
        "exit_status": 0 if passed else 1,
        "config": cfg,
        "model": {"family": model.family, "space": model.space.describe(),
                  "notes": list(model.generator.notes) if model.generator is not None else []},
        "suites": suites,
        "curves": files,
        "provenance": provenance(cfg),
    }
    report = _plain(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def plan(cfg: dict, model: Model) -> list:
    """Human-readable lines describing what ``run`` would do."""
    lines = [f"model: {model.family} on {model.space.kind} ({model.space.size} points), seed {cfg['seed']}"]
    if cfg["corruption"]["scale"] != 1.0:
        lines.append(f"corruption: checks are handed {cfg['corruption']['scale']:g} x the true generator")
    if not cfg["suites"]:
        lines.append("WARNING: no suites selected; 0 checks would run")
        return lines
    rate = 0.0
    if model.generator is not None and model.generator.realization is not None:
        R = model.generator.realization
        diag = R.diagonal() if hasattr(R, "diagonal") else np.diag(R)
        rate = float(np.max(np.abs(diag)))
    for name in sorted(cfg["suites"]):
        p = cfg["suites"][name]
        if name == "martingale":
            T = max(p["times"])
            lines.append(f"martingale: mean test at t={p['times']} and increment test, N={p['n_paths']}, "
                         f"alpha={p['alpha']}; about {p['n_paths'] * (1 + rate * T):.3g} simulated events")
        elif name == "scle":
            if model.family == HEAT:
                c = p["counterexample"]
                n = int(round(2 * c["half_width"] / c["spacing"])) + 1
                lines.append(f"scle: sup-norm residual curve on [-{c['half_width']:g}, {c['half_width']:g}] "
                             f"({n} points) and beta residual curve on [-{c['compact']:g}, {c['compact']:g}] "
                             f"at t={c['times']}")
                lines.append("scle: semigroup law on the grid window; beta strong continuity at t0")
            else:
                lines.append(f"scle: semigroup law (s={p['law']['s']}, t={p['law']['t']}), beta strong continuity "
                             f"and generator limit along {p['k_max']} values of 2^-k; {2 * p['k_max'] + 3} "
                             f"matrix exponentials of size {model.space.size}")
        elif name == "containment":
            lines.append(f"containment: K=K_{p['K']}, eps={p['eps']}, T={p['T']}, N={p['n_paths']}; "
                         f"about {p['n_paths'] * (1 + rate * p['T']):.3g} simulated events")
        elif name == "extension":
            n = len(p["cutoffs"]) * len(p["functions"])
            lines.append(f"extension: restriction check, mass conservation, {n * len(p['times'])} round trips "
                         f"and {n} core checks")
        elif name == "topology":
            lines.append(f"topology: 10 labelled beta-convergence cases, {p['hahn_jordan_samples']} Hahn-Jordan "
                         f"reconstructions, Dirac escape (vague vs weak)")
    return lines


# -- commands -------------------------------------------------------------------------------


def _config_option(f):
    return click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False),
                        help="campaign config (YAML)")(f)


def _fail_config(exc: ConfigError):
    click.echo(f"error: {exc}", err=True)
    for key in exc.keys:
        click.echo(f"  offending key: {key}", err=True)
    sys.exit(2)


@click.group()
@click.version_option(scle.__version__, prog_name="scle")
def main():
    """Numerical checks of martingale problems and strict-topology semigroups."""


@main.command()
@_config_option
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="output directory")
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--jobs", type=int, default=None, help="worker threads for path simulation")
def run(config_path, out_dir, seed, jobs):
    """Execute the selected suites and write report.json plus CSV curves."""
    try:
        cfg, model = prepare(config_path, seed, jobs)
    except ConfigError as exc:
        _fail_config(exc)
    report = run_campaign(cfg, model, out_dir)
    for s in report["suites"]:
        n_ok = sum(c["passed"] for c in s["checks"])
        click.echo(f"{s['suite']:12s} {'PASS' if s['passed'] else 'FAIL'}  {n_ok}/{len(s['checks'])} checks")
    click.echo(f"report: {Path(out_dir) / 'report.json'}")
    sys.exit(report["exit_status"])


@main.command()
@_config_option
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--jobs", type=int, default=None)
def describe(config_path, seed, jobs):
    """Print the plan for a config without running anything."""
    try:
        cfg, model = prepare(config_path, seed, jobs)
    except ConfigError as exc:
        _fail_config(exc)
    for line in plan(cfg, model):
        click.echo(line)


@main.command()
@_config_option
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=None)
def export(config_path, out_dir, seed, jobs):
    """Write the resolved config and a small simulated path ensemble as CSV."""
    try:
        cfg, model = prepare(config_path, seed, jobs)
    except ConfigError as exc:
        _fail_config(exc)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.yaml").write_text(yaml.safe_dump(_plain(cfg), sort_keys=True))
    written = ["config.resolved.yaml"]
    if model.generator is not None:
        e = cfg["export"]
        x0 = model.space.labels[0] if model.space.kind == FINITE else model.space.coords[model.space.size // 2]
        if model.space.kind == COUNTABLE:
            x0 = 0
        dt = e["dt"] if model.generator.kind == "diffusion" else None
        E = simulate_ensemble(model.generator, float(e["horizon"]), int(e["n_paths"]), model.seed, x0=x0, dt=dt,
                              jobs=model.jobs)
        (out / "paths.csv").write_text(E.to_csv())
        written.append("paths.csv")
    for w in written:
        click.echo(str(out / w))


if __name__ == "__main__":  # pragma: no cover
    main()
