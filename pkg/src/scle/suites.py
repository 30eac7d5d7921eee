"""Verification suites: bundles of checks with JSON-ready results and CSV curves.

Each suite takes a :class:`Model` and a parameter dict whose defaults are
filled by :data:`SUITE_DEFAULTS`; it returns a :class:`SuiteResult`. Module
errors raised inside a check are recorded as a failed check with a reason.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from scle import catalog
from scle.errors import DomainError, HorizonFailure, PreconditionError, UnsupportedBackendError, ValidationError
from scle.extension import (
    CutoffFamily,
    core_check,
    mass_conservation_check,
    restrict_check,
    round_trip_check,
)
from scle.function_space import beta_converges, dini_check
from scle.generator import DIFFUSION, GeneratorGraph, apply
from scle.measure import (
    SignedMeasure,
    hahn_jordan,
    vague_convergence_test,
    weak_convergence_test,
)
from scle.path_sim import simulate_ensemble
from scle.semigroup import (
    HeatSemigroup,
    MatrixExpSemigroup,
    generator_limit_check,
    heat_sin_square,
    semigroup_law_check,
    strong_continuity_check,
)
from scle.state_space import FINITE, StateSpace, exhaustion_member
from scle.verify import containment_search, martingale_increment_test, martingale_mean_test

HEAT = "heat"
CHECK_ERRORS = (DomainError, ValidationError, PreconditionError, HorizonFailure, UnsupportedBackendError)


@dataclass
class Model:
    """A state space plus either a generator graph or the heat semigroup.

    ``corruption`` scales the generator handed to the checks (the simulated
    paths always follow the true model).
    """

    space: StateSpace
    family: str
    generator: GeneratorGraph | None
    seed: int
    jobs: int = 1
    corruption: float = 1.0

    @property
    def claimed(self) -> GeneratorGraph | None:
        if self.generator is None or self.corruption == 1.0:
            return self.generator
        return self.generator.scaled(self.corruption)

    def semigroup(self):
        if self.family == HEAT:
            return HeatSemigroup(self.space)
        return MatrixExpSemigroup(self.generator)


@dataclass
class SuiteResult:
    name: str
    checks: list = field(default_factory=list)
    curves: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def add(self, name: str, passed: bool, details: dict | None = None):
        self.checks.append({"check": name, **(details or {}), "passed": bool(passed)})

    def run(self, name: str, fn):
        """Run ``fn() -> (passed, details)``; module errors become failures."""
        try:
            passed, details = fn()
        except CHECK_ERRORS as exc:
            self.add(name, False, {"error": type(exc).__name__, "reason": str(exc)})
            return
        self.add(name, passed, details)

    def as_dict(self):
        return {"suite": self.name, "passed": self.passed, "checks": self.checks, "notes": self.notes}


SUITE_DEFAULTS = {
    "martingale": {
        "f": None,
        "x0": None,
        "n_paths": 100_000,
        "times": [0.5, 1.0],
        "alpha": 0.01,
        "dt": 0.01,
        "increment": {"s": 0.5, "t": 1.0},
    },
    "scle": {
        "f": None,
        "t0": 0.0,
        "tol": 1e-3,
        "k_max": 20,
        "m_max": None,
        "law": {"s": 0.3, "t": 0.3, "tol": 1e-10},
        "limit": True,
        "counterexample": {"times": [0.1, 0.01, 0.001], "half_width": 120.0, "spacing": 0.005, "compact": 3.0,
                           "sup_floor": 0.9, "compact_tol": 0.05},
    },
    "containment": {"K": 5, "eps": 0.05, "T": 1.0, "n_paths": 100_000},
    "extension": {
        "functions": ["constant", "cos_inverse"],
        "times": [0.1, 0.5, 1.0],
        "tol": 1e-6,
        "cutoffs": [{"profile": "linear", "width": 1}, {"profile": "smooth", "width": 3}],
        "restrict": {"f": {"name": "exp_decay", "rate": 2.0}, "schedule": [0.1, 0.05, 0.01], "tol": 0.0203},
        "mass_times": [0.0, 0.5, 1.0],
        "core_tol": 1e-9,
    },
    "topology": {"tol": 0.05, "hahn_jordan_samples": 1000, "dirac_n_max": 190},
}


def with_defaults(name: str, params: dict | None) -> dict:
    out = copy.deepcopy(SUITE_DEFAULTS[name])
    for k, v in (params or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(v)
        else:
            out[k] = v
    return out


def default_function(space: StateSpace):
    if space.kind == FINITE:
        vals = np.zeros(space.size)
        vals[0] = 1.0
        return catalog.vector(space, vals)
    if space.kind == "real-grid":
        return catalog.gaussian(space, 0.5)
    return catalog.exp_decay(space, 0.5)


def _function(space, spec):
    return default_function(space) if spec is None else catalog.build(space, spec)


def _first_point(space):
    return space.labels[0] if space.kind == FINITE else (0.0 if space.kind == "real-grid" else 0)


# -- martingale ---------------------------------------------------------------------------


def martingale_suite(model: Model, params: dict) -> SuiteResult:
    res = SuiteResult("martingale")
    if model.generator is None:
        res.notes.append("martingale tests need a generator graph; the heat model is covered by the diffusion family")
        return res
    p = params
    f = _function(model.space, p["f"])
    x0 = _first_point(model.space) if p["x0"] is None else p["x0"]
    times = [float(t) for t in p["times"]]
    inc = p.get("increment")
    horizon = max(times + ([float(inc["t"])] if inc else []))
    dt = p["dt"] if model.generator.kind == DIFFUSION else None
    E = simulate_ensemble(model.generator, horizon, int(p["n_paths"]), model.seed, x0=x0, dt=dt, jobs=model.jobs)
    A = model.claimed

    def mean():
        rep = martingale_mean_test(E, f, A, times, p["alpha"])
        res.curves["martingale_means"] = [v.as_dict() for v in rep.verdicts]
        return rep.passed, {"f": f.name, "n_paths": len(E), **rep.as_dict()}

    res.run("martingale_mean", mean)
    if inc:
        def increment():
            rep = martingale_increment_test(E, f, A, float(inc["s"]), float(inc["t"]), None, p["alpha"])
            return rep.passed, {"s": inc["s"], "t": inc["t"], "failures": [str(x) for x in rep.failures],
                                **rep.as_dict()}

        res.run("martingale_increment", increment)
    return res


# -- SCLE ---------------------------------------------------------------------------------


def heat_counterexample(times=(0.1, 0.01, 0.001), half_width=120.0, spacing=0.005, compact=3.0):
    """Sup-norm and compact residuals of ``S(t) sin(x^2) - sin(x^2)`` for the heat semigroup."""
    n = int(round(2 * half_width / spacing)) + 1
    x = np.linspace(-half_width, half_width, n)
    f = np.sin(x * x)
    inner = np.abs(x) <= compact + 1e-12
    rows = []
    for t in times:
        d = np.abs(heat_sin_square(t, x) - f)
        rows.append({"t": float(t), "sup_residual": float(d.max()), "compact_residual": float(d[inner].max())})
    return rows


def scle_suite(model: Model, params: dict) -> SuiteResult:
    res = SuiteResult("scle")
    p = params
    S = model.semigroup()
    space = model.space
    if model.family == HEAT:
        f = catalog.sin_square(space) if p["f"] is None else catalog.build(space, p["f"])
    else:
        f = _function(space, p["f"])
    law = p.get("law")
    if law:
        def law_check():
            rep = semigroup_law_check(S, float(law["s"]), float(law["t"]), f, float(law["tol"]))
            return rep.passed, rep.as_dict()

        res.run("semigroup_law", law_check)

    schedule = [2.0**-k for k in range(1, int(p["k_max"]) + 1)]

    def continuity():
        rep = strong_continuity_check(S, f, float(p["t0"]), float(p["tol"]), schedule, p["m_max"])
        res.curves["continuity"] = rep.curve_rows()
        return rep.passed, rep.as_dict()

    if model.family == HEAT:
        c = p["counterexample"]

        def dichotomy():
            rows = heat_counterexample(c["times"], c["half_width"], c["spacing"], c["compact"])
            res.curves["heat_counterexample"] = rows
            sup_fails = all(r["sup_residual"] >= c["sup_floor"] for r in rows)
            compact_ok = rows[-1]["compact_residual"] <= c["compact_tol"]
            return sup_fails and compact_ok, {"rows": rows, "sup_norm_continuity_fails": sup_fails,
                                              "compact_residual_small": compact_ok}

        res.run("heat_counterexample", dichotomy)
        # the grid window cannot follow the far field; keep the beta check on the declared compact
        m = int(np.ceil(c["compact"] / space.exhaustion_step))
        cont_schedule = [float(t) for t in c["times"]]

        def heat_continuity():
            rep = strong_continuity_check(S, f, float(p["t0"]), c["compact_tol"], cont_schedule, m)
            res.curves["continuity"] = rep.curve_rows()
            return rep.passed, rep.as_dict()

        res.run("strong_continuity", heat_continuity)
        res.notes.append("generator limit skipped: the heat model has no stored generator graph")
        return res

    res.run("strong_continuity", continuity)
    if p["limit"]:
        def limit():
            g = apply(model.claimed, f)
            rep = generator_limit_check(S, f, g, float(p["tol"]), schedule, p["m_max"])
            res.curves["generator_limit"] = rep.curve_rows()
            return rep.passed, rep.as_dict()

        res.run("generator_limit", limit)
    return res


# -- containment -----------------------------------------------------------------------------


def containment_suite(model: Model, params: dict) -> SuiteResult:
    res = SuiteResult("containment")
    if model.generator is None:
        res.notes.append("containment needs a simulable generator")
        return res
    p = params
    space = model.space
    k = min(int(p["K"]), space.saturation_index)
    K = exhaustion_member(space, k)
    pts = np.flatnonzero(K.mask)
    nu = SignedMeasure(space, pts, np.full(pts.size, 1.0 / pts.size))
    dt = 0.01 if model.generator.kind == DIFFUSION else None

    def search():
        E = simulate_ensemble(model.generator, float(p["T"]), int(p["n_paths"]), model.seed, initial_law=nu,
                              dt=dt, jobs=model.jobs)
        cert = containment_search(E, K, float(p["eps"]), float(p["T"]))
        res.curves["containment"] = cert.curve_rows()
        return cert.monotone, cert.as_dict()

    res.run("containment_search", search)
    return res


# -- extension --------------------------------------------------------------------------------


def extension_suite(model: Model, params: dict) -> SuiteResult:
    res = SuiteResult("extension")
    p = params
    if model.family == HEAT or model.generator is None:
        res.notes.append("extension checks need a matrix generator")
        return res
    S = MatrixExpSemigroup(model.generator)
    space = model.space
    if space.kind == FINITE:
        res.notes.append("finite state space is compact: C_0 = C_b and the construction is the identity")
    r = p["restrict"]
    if space.kind != FINITE and r:
        def restriction():
            rep = restrict_check(S, catalog.build(space, r["f"]), r["schedule"], float(r["tol"]))
            res.curves["restrict"] = rep.curve_rows()
            return rep.passed, rep.as_dict()

        res.run("restrict", restriction)

    def mass():
        x0 = _first_point(space)
        mus = [SignedMeasure.dirac(space, x0)]
        if space.kind != FINITE:
            K = exhaustion_member(space, min(5, space.saturation_index))
            pts = np.flatnonzero(K.mask)
            mus.append(SignedMeasure(space, pts, np.full(pts.size, 1.0 / pts.size)))
        rep = mass_conservation_check(S, mus, p["mass_times"])
        return rep.passed, rep.as_dict()

    res.run("mass_conservation", mass)
    if space.kind == FINITE:
        return res

    families = [CutoffFamily(space, c["profile"], int(c["width"])) for c in p["cutoffs"]]
    rows = []
    for fam in families:
        for spec in p["functions"]:
            f = catalog.build(space, spec)
            for t in p["times"]:
                def trip(fam=fam, f=f, t=t):
                    rep = round_trip_check(S, float(t), f, fam, float(p["tol"]))
                    rows.append({"profile": fam.profile, "f": f.name, **rep.as_dict()})
                    return rep.passed, {"profile": fam.profile, "f": f.name, **rep.as_dict()}

                res.run("round_trip", trip)

            def core(fam=fam, f=f):
                rep = core_check(model.claimed, f, fam, float(p["core_tol"]))
                return rep.passed, {"f": f.name, **rep.as_dict()}

            res.run("core", core)
    res.curves["round_trip"] = rows
    return res


# -- topology ------------------------------------------------------------------------------------


def topology_cases(grid: StateSpace):
    """Ten labelled sequences ``(name, fs, limit, expected, dini)`` on a real grid."""
    zero = catalog.constant(grid, 0.0)
    one = catalog.constant(grid, 1.0)
    lor = catalog.lorentz_even(grid)
    geo = np.unique(np.round(np.geomspace(1, 1e5, 120)))
    cases = [
        ("ramp_to_zero", [catalog.abs_ramp(grid, n) for n in range(1, 401)], zero, True, False),
        ("peaked_gaussian", [catalog.peaked_gaussian(grid, n) for n in range(1, 101)], zero, False, False),
        ("dini_increasing", [lor * (1 - 1 / n) for n in range(1, 201)], lor, True, True),
        ("escaping_bump", [catalog.gaussian(grid, 1.0, 1.0, c) for c in np.arange(0, 30.5, 0.5)], zero, True, False),
        ("constant_sequence", [catalog.sin_square(grid)] * 20, catalog.sin_square(grid), True, False),
        ("ramp_to_one", [catalog.abs_ramp(grid, n) for n in range(1, 401)], one, False, False),
        ("shrinking_constants", [catalog.constant(grid, 1 / n) for n in range(1, 201)], zero, True, False),
        ("alternating_constants", [catalog.constant(grid, (-1.0) ** n) for n in range(1, 201)], zero, False, False),
        ("flattening_bump", [catalog.gaussian(grid, 1 / n) for n in geo], one, True, False),
        ("sharpening_decay", [catalog.exp_decay(grid, n) for n in range(1, 201)], zero, False, False),
    ]
    return cases


def _random_measures(space: StateSpace, count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        k = int(rng.integers(0, 12))
        idx = rng.integers(0, space.size, k)
        w = rng.normal(size=k) * rng.choice([1e-6, 1.0, 1e6], size=k)
        yield SignedMeasure(space, idx, w)


def topology_suite(model: Model, params: dict) -> SuiteResult:
    """Runs on built-in spaces: the grid ``[-10, 10]`` (h = 0.01) and ``{0, ..., 200}``."""
    res = SuiteResult("topology")
    p = params
    tol = float(p["tol"])
    grid = StateSpace.grid(10.0, 0.01)
    rows = []
    for name, fs, limit, expected, dini in topology_cases(grid):
        def classify(fs=fs, limit=limit, expected=expected, dini=dini, name=name):
            v = dini_check(fs, limit, tol) if dini else beta_converges(fs, limit, tol)
            rows.append({"case": name, "expected": expected, "verdict": v.converges, "bounded": v.bounded,
                         "kappa": v.kappa_converges})
            return v.converges == expected, {"case": name, "expected": expected, "verdict": v.converges}

        res.run("beta_classifier", classify)
    res.curves["topology_cases"] = rows

    countable = StateSpace.countable(200)

    def jordan():
        bad = 0
        n = int(p["hahn_jordan_samples"])
        for mu in _random_measures(countable, n, model.seed):
            hj = hahn_jordan(mu)
            bad += not hj.reconstruct().equals(mu)
            bad += not np.array_equal(np.sort(np.abs(mu.weights)), np.sort(np.concatenate(
                [hj.positive.weights, hj.negative.weights])))
        return bad == 0, {"samples": n, "mismatches": bad}

    res.run("hahn_jordan_exact", jordan)

    def diracs():
        mus = [SignedMeasure.dirac(countable, n) for n in range(1, int(p["dirac_n_max"]) + 1)]
        zero = SignedMeasure.zero(countable)
        van = [catalog.exp_decay(countable, 1.0), catalog.lorentz_even(countable), catalog.gaussian(countable, 0.1)]
        vague = vague_convergence_test(mus, zero, van, tol)
        weak = weak_convergence_test(mus, zero, van + [catalog.constant(countable)], tol)
        return vague.converges and not weak.converges, {"vague": vague.converges, "weak": weak.converges,
                                                          "vague_residuals": vague.final,
                                                          "weak_residuals": weak.final}

    res.run("dirac_escape", diracs)
    return res


SUITES = {
    "martingale": martingale_suite,
    "scle": scle_suite,
    "containment": containment_suite,
    "extension": extension_suite,
    "topology": topology_suite,
}
