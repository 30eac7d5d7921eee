"""Restriction to functions vanishing at infinity and extension back to C_b.

The density of C_0 in C_b under the strict topology is realized by explicit
cutoffs ``chi_m`` that equal 1 on ``K_m`` and vanish outside
``K_{m + width}``. Finite spaces are compact, so every operation here
degenerates to the identity construction there; the reports say so.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply
from scipy.stats import norm

from scle.errors import DomainError, HorizonFailure, PreconditionError, ValidationError
from scle.function_space import (
    BetaVerdict,
    TestFunction,
    beta_converges,
    compact_open_seminorm,
    superlevel_violation,
    sup_norm,
)
from scle.generator import PAIR_TOL, GeneratorGraph, apply
from scle.semigroup import HeatSemigroup, MatrixExpSemigroup, Semigroup, dual_apply
from scle.state_space import FINITE, StateSpace, exhaustion_member

LINEAR = "linear"
SMOOTH = "smooth"
FINITE_NOTICE = "finite state space is compact: C_0 = C_b and the construction is the identity"


def _profile(u: np.ndarray, kind: str) -> np.ndarray:
    u = np.clip(u, 0.0, 1.0)
    if kind == LINEAR:
        return u
    if kind == SMOOTH:
        return u * u * (3 - 2 * u)
    raise ValidationError(f"unknown cutoff profile {kind!r}")


@dataclass(frozen=True, eq=False)
class CutoffFamily:
    """``chi_m`` for ``m_min <= m <= m_max``: 1 on ``K_m``, 0 outside ``K_{m + width}``.

    ``functions`` overrides the construction (used for negative controls);
    such a family is checked but not assumed admissible.
    """

    space: StateSpace
    profile: str = LINEAR
    width: int = 1
    m_min: int = 1
    m_max: int | None = None
    functions: tuple | None = None

    def __post_init__(self):
        if self.functions is None:
            if self.width < 1:
                raise ValidationError("cutoff width must be at least one exhaustion step")
            top = self.space.saturation_index - self.width - 1
            if self.space.kind != FINITE and top < self.m_min:
                raise ValidationError("space too small for this cutoff width")
            m_max = top if self.m_max is None else self.m_max
            if self.space.kind != FINITE and m_max > top:
                raise ValidationError(f"chi_{m_max} would reach the window edge; largest admissible m is {top}")
            object.__setattr__(self, "m_max", max(m_max, self.m_min))
        else:
            object.__setattr__(self, "m_max", self.m_min + len(self.functions) - 1)

    @classmethod
    def custom(cls, space: StateSpace, functions, m_min: int = 1) -> "CutoffFamily":
        return cls(space, profile="custom", width=0, m_min=m_min, functions=tuple(functions))

    @property
    def indices(self) -> range:
        return range(self.m_min, self.m_max + 1)

    def __len__(self):
        return len(self.indices)

    def chi(self, m: int) -> TestFunction:
        if self.functions is not None:
            return self.functions[m - self.m_min]
        if m not in self.indices:
            raise DomainError(f"cutoff index {m} outside {self.m_min}..{self.m_max}")
        space = self.space
        if space.kind == FINITE:
            return TestFunction.from_values(space, np.ones(space.size), bound=1.0, vanishing=True, name=f"chi({m})")
        r = np.abs(space.coords) / space.exhaustion_step
        vals = _profile((m + self.width - r) / self.width, self.profile)
        return TestFunction.from_values(space, vals, bound=1.0, vanishing=True, name=f"chi_{self.profile}({m})")

    def __iter__(self):
        return (self.chi(m) for m in self.indices)

    def problems(self) -> list:
        """Admissibility violations; an empty list means the family is admissible."""
        out = []
        prev = None
        for m in self.indices:
            c = self.chi(m)
            v = c.values
            if np.any(v < 0) or np.any(v > 1):
                out.append(f"chi_{m} leaves [0, 1]")
            if not np.all(v[exhaustion_member(self.space, m).mask] == 1.0):
                out.append(f"chi_{m} is not 1 on K_{m}")
            if self.space.kind != FINITE and superlevel_violation(self.space, v) is not None:
                out.append(f"chi_{m} does not vanish at infinity")
            if prev is not None and np.any(v < prev):
                out.append(f"chi_{m} < chi_{m - 1} somewhere")
            prev = v
        if prev is not None and self.space.kind != FINITE:
            # the last member must cover everything below its own index
            last = self.m_max
            if not np.all(prev[self.space.levels <= last] == 1.0):
                out.append("family does not increase to 1")
        return out

    @property
    def admissible(self) -> bool:
        return not self.problems()


# -- restriction ----------------------------------------------------------------------


class RestrictedSemigroup(Semigroup):
    """``S(t)`` acting on functions certified to vanish at infinity only."""

    def __init__(self, inner: Semigroup):
        self.inner = inner
        self.space = inner.space
        self.exact = inner.exact
        self.backend = f"{inner.backend}|C0"

    def apply(self, t: float, f: TestFunction) -> TestFunction:
        if not f.vanishing and self.space.kind != FINITE:
            raise PreconditionError(f"{f.name} is not certified to vanish at infinity")
        return self.inner.apply(t, f)

    def evaluate(self, t, f, mask):
        if not f.vanishing and self.space.kind != FINITE:
            raise PreconditionError(f"{f.name} is not certified to vanish at infinity")
        return self.inner.evaluate(t, f, mask)


def restrict(S: Semigroup) -> RestrictedSemigroup:
    return S if isinstance(S, RestrictedSemigroup) else RestrictedSemigroup(S)


@dataclass
class RestrictReport:
    passed: bool
    schedule: list
    vanishing: list
    sup_residuals: list
    tol: float
    notes: list = field(default_factory=list)

    def curve_rows(self):
        return [{"t": t, "sup_residual": r, "vanishing": v}
                for t, r, v in zip(self.schedule, self.sup_residuals, self.vanishing)]

    def as_dict(self):
        return {"passed": self.passed, "tol": self.tol, "all_vanishing": all(self.vanishing),
                "final_sup_residual": self.sup_residuals[-1], "notes": self.notes}


def restrict_check(S: Semigroup, f: TestFunction, schedule, tol: float) -> RestrictReport:
    """``S(t)f`` stays in C_0 and ``||S(t)f - f|| -> 0`` along a decreasing schedule."""
    if not f.vanishing:
        raise PreconditionError(f"{f.name} is not certified to vanish at infinity")
    schedule = sorted(schedule, reverse=True)
    R = restrict(S)
    notes = [FINITE_NOTICE] if S.space.kind == FINITE else []
    van, res = [], []
    for t in schedule:
        g = R.apply(t, f)
        van.append(S.space.kind == FINITE or superlevel_violation(S.space, g.values) is None)
        res.append(sup_norm(g - f))
    passed = all(van) and res[-1] <= tol
    return RestrictReport(bool(passed), list(schedule), van, res, tol, notes)


@dataclass
class MassReport:
    passed: bool
    masses: list  # (measure index, t, total mass, most negative weight)
    tol: float
    worst_mass_error: float

    def as_dict(self):
        return {"passed": self.passed, "tol": self.tol, "worst_mass_error": self.worst_mass_error,
                "masses": [{"measure": i, "t": t, "mass": m, "min_weight": w} for i, t, m, w in self.masses]}


def mass_conservation_check(S: Semigroup, mus, schedule, tol: float = 1e-12) -> MassReport:
    """The dual semigroup maps probability measures to probability measures."""
    inner = S.inner if isinstance(S, RestrictedSemigroup) else S
    rows = []
    ok = True
    worst = 0.0
    for i, mu in enumerate(mus):
        if not mu.is_probability(1e-12):
            raise ValidationError(f"measure {i} is not a probability measure")
        for t in schedule:
            out = dual_apply(inner, t, mu)
            mass = out.total_mass
            low = float(out.weights.min()) if out.weights.size else 0.0
            err = abs(mass - 1.0)
            worst = max(worst, err)
            ok &= err <= tol and low >= -tol
            rows.append((i, float(t), mass, low))
    return MassReport(bool(ok), rows, tol, worst)


# -- truncation leak ------------------------------------------------------------------


def truncation_leak(S: Semigroup, t: float, m: int, j: int) -> float:
    """``max_{x in K_j} P_x[eta leaves K_m before t]``.

    Matrix backends make every state outside ``K_m`` absorbing and read the
    absorbed mass off ``exp(tQ)``; the heat backend uses the reflection
    principle on both sides.
    """
    inner = S.inner if isinstance(S, RestrictedSemigroup) else S
    space = inner.space
    if space.kind == FINITE:
        return 0.0
    if j < 1:
        raise DomainError(f"exhaustion index must be >= 1, got {j}")
    start = space.levels <= j
    outside = space.levels > m
    if t == 0 or not outside.any():
        return 0.0
    if isinstance(inner, MatrixExpSemigroup):
        R = inner.generator.realization
        keep = sp.diags((~outside).astype(float))
        if sp.issparse(R):
            Qa = (keep @ R).tocsr()
            hit = expm_multiply(t * Qa, outside.astype(float))
        else:
            Qa = np.asarray(R) * (~outside)[:, None]
            hit = expm(t * Qa) @ outside.astype(float)
        return float(np.clip(hit[start], 0.0, 1.0).max())
    if isinstance(inner, HeatSemigroup):
        r = m * space.exhaustion_step
        x = np.abs(space.coords[start])
        s = np.sqrt(t)
        return float(np.minimum(2 * norm.sf((r - x) / s) + 2 * norm.sf((r + x) / s), 1.0).max())
    raise ValidationError(f"no truncation leak for the {inner.backend} backend; pass one explicitly")


# -- extension --------------------------------------------------------------------------


@dataclass
class ExtensionResult:
    value: TestFunction
    m: int
    converged: bool
    trace: list  # (m, [p_{K_j}(g_m - g_{m-1}) for j = 1..horizon])
    horizon: int
    tol: float
    leak: float
    notes: list = field(default_factory=list)

    def curve_rows(self):
        rows = []
        for m, res in self.trace:
            row = {"m": m}
            row.update({f"K{j + 1}": r for j, r in enumerate(res)})
            rows.append(row)
        return rows

    def as_dict(self):
        return {"m": self.m, "converged": self.converged, "horizon": self.horizon, "tol": self.tol,
                "leak": self.leak, "trace_length": len(self.trace), "notes": self.notes}


def extend_apply(S: Semigroup, t: float, f: TestFunction, cutoffs: CutoffFamily, tol: float,
                 horizon: int | None = None) -> ExtensionResult:
    """``lim_m S(t)(f chi_m)``, stopping once successive iterates agree on ``K_1..K_horizon``.

    ``leak`` bounds the distance on ``K_horizon`` between the returned
    iterate and the full ``S(t)f``: ``||f||`` times the chance of leaving
    ``K_m`` before ``t``.
    """
    R = restrict(S)
    space = R.space
    if cutoffs.space is not space:
        raise DomainError("cutoffs live on a different space")
    if space.kind == FINITE:
        g = R.inner.apply(t, f)
        return ExtensionResult(g, cutoffs.m_min, True, [], 1, tol, 0.0, [FINITE_NOTICE])
    horizon = min(horizon or 10, space.saturation_index)
    Ks = [exhaustion_member(space, j) for j in range(1, horizon + 1)]
    trace = []
    prev = None
    for m in cutoffs.indices:
        fm = f * cutoffs.chi(m)
        g = R.apply(t, fm)
        if prev is not None:
            res = [compact_open_seminorm(g - prev, K) for K in Ks]
            trace.append((m, res))
            if max(res) <= tol:
                leak = sup_norm(f) * truncation_leak(R, t, m, horizon)
                return ExtensionResult(g, m, True, trace, horizon, tol, leak)
        prev = g
    raise HorizonFailure(f"extension did not settle to {tol:g} by chi_{cutoffs.m_max}", best=trace)


@dataclass
class RoundTripReport:
    passed: bool
    t: float
    discrepancy: float
    tol: float
    leak: float
    m: int

    def as_dict(self):
        return {"passed": self.passed, "t": self.t, "discrepancy": self.discrepancy, "tol": self.tol,
                "leak": self.leak, "m": self.m}


def round_trip_check(S: Semigroup, t: float, f: TestFunction, cutoffs: CutoffFamily, tol: float,
                     horizon: int | None = None, iter_tol: float | None = None) -> RoundTripReport:
    """``extend_apply(restrict(S))`` against direct application of ``S`` to ``f`` on ``K_horizon``."""
    ext = extend_apply(restrict(S), t, f, cutoffs, iter_tol if iter_tol is not None else tol / 10, horizon)
    direct = S.apply(t, f)
    K = exhaustion_member(S.space, ext.horizon)
    d = compact_open_seminorm(ext.value - direct, K)
    return RoundTripReport(d <= tol + ext.leak, float(t), d, tol, ext.leak, ext.m)


# -- generator core --------------------------------------------------------------------


def restricted_generator(A: GeneratorGraph, fs) -> GeneratorGraph:
    """``A~``: the pairs ``(f, Af)`` with both members vanishing at infinity."""
    pairs = []
    for f in fs:
        g = apply(A, f)
        if f.vanishing and superlevel_violation(A.space, g.values) is None:
            pairs.append((f, replace(g, vanishing=True)))
    return GeneratorGraph(A.space, A.kind, realization=None, pairs=tuple(pairs), conservative=False,
                          notes=("restriction to C_0",))


def graph_contained(B: GeneratorGraph, A: GeneratorGraph, tol: float = PAIR_TOL) -> bool:
    """Whether every stored pair of ``B`` is a pair of ``A``."""
    for f, g in B.pairs:
        Af = apply(A, f)
        if np.max(np.abs(Af.values - g.values)) > tol * max(1.0, sup_norm(g)):
            return False
    return True


@dataclass
class CoreReport:
    passed: bool
    f_beta: BetaVerdict
    af_beta: BetaVerdict
    profile: str
    f_residuals: list
    af_residuals: list
    notes: list = field(default_factory=list)

    def curve_rows(self):
        return [{"k": k, "f_residual": a, "Af_residual": b}
                for k, (a, b) in enumerate(zip(self.f_residuals, self.af_residuals), 1)]

    def as_dict(self):
        return {"passed": self.passed, "profile": self.profile, "f_beta": self.f_beta.as_dict(),
                "Af_beta": self.af_beta.as_dict(), "notes": self.notes}


def core_check(A: GeneratorGraph, f: TestFunction, cutoffs: CutoffFamily, tol: float,
               horizon: int | None = None) -> CoreReport:
    """``f chi_k -> f`` and ``A(f chi_k) -> Af`` in the strict topology at the horizon."""
    if not A.conservative:
        raise PreconditionError("core check needs a conservative generator")
    if cutoffs.space is not A.space:
        raise DomainError("cutoffs live on a different space")
    notes = [] if cutoffs.admissible else [f"inadmissible cutoffs: {cutoffs.problems()[0]}"]
    if A.space.kind == FINITE:
        notes.append(FINITE_NOTICE)
    Af = apply(A, f)
    fk, gk = [], []
    for k in cutoffs.indices:
        h = f * cutoffs.chi(k)
        try:
            g = apply(A, h)
        except DomainError as exc:
            raise DomainError(f"A(f chi_{k}) is not computable: {exc}") from None
        fk.append(h)
        gk.append(g)
    m = min(horizon or 10, A.space.saturation_index)
    fv = beta_converges(fk, f, tol, m_max=m, bound=sup_norm(f))
    gv = beta_converges(gk, Af, tol, m_max=m)
    fr = [compact_open_seminorm(h - f, exhaustion_member(A.space, m)) for h in fk]
    gr = [compact_open_seminorm(g - Af, exhaustion_member(A.space, m)) for g in gk]
    return CoreReport(bool(fv.converges and gv.converges), fv, gv, cutoffs.profile, fr, gr, notes)
