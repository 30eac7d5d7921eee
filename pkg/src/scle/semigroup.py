"""Transition semigroups ``S(t)f(x) = E[f(eta(t)) | eta(0) = x]`` and their checks.

Backends
--------
``MatrixExpSemigroup``
    ``exp(tQ) f`` for a rate matrix (dense ``scipy.linalg.expm``; sparse
    realizations use ``expm_multiply``).
``HeatSemigroup``
    Brownian motion with generator ``f''/2`` on the real line, evaluated at
    the points of a grid window. ``sin(x^2)`` has a closed form; any other
    function is integrated against the Gaussian kernel adaptively.
``MonteCarloSemigroup``
    Sample means over simulated paths. It refuses the dual action and the
    law/limit checks: those need exact values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad_vec
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from scle.errors import DomainError, PreconditionError, UnsupportedBackendError, ValidationError
from scle.function_space import (
    BetaVerdict,
    TestFunction,
    beta_converges,
    ensure_compact,
    superlevel_violation,
    sup_norm,
)
from scle.generator import GeneratorGraph, QMatrix, build_ctmc
from scle.measure import SignedMeasure
from scle.path_sim import sample_terminal
from scle.state_space import GRID, StateSpace
from scle.stats import EstimateWithBand, mean_band

HEAT_QUAD_EPSABS = 1e-10


def _check_time(t: float):
    if t < 0:
        raise DomainError(f"semigroup time must be >= 0, got {t}")


class Semigroup:
    """Common interface: ``apply(t, f)`` returns ``S(t)f`` as a test function."""

    exact = True
    backend = "abstract"
    space: StateSpace

    def apply(self, t: float, f: TestFunction) -> TestFunction:
        raise NotImplementedError

    def evaluate(self, t: float, f: TestFunction, mask: np.ndarray) -> np.ndarray:
        """``S(t)f`` on the points selected by ``mask``."""
        return self.apply(t, f).values[mask]

    def _result(self, vals, f: TestFunction, t: float) -> TestFunction:
        vanishing = f.vanishing and superlevel_violation(self.space, vals) is None
        return TestFunction.from_values(self.space, vals, vanishing=vanishing, name=f"S({t:g}){f.name}")


class MatrixExpSemigroup(Semigroup):
    backend = "matrix-exponential"

    def __init__(self, generator, space: StateSpace | None = None):
        if isinstance(generator, GeneratorGraph):
            A = generator
        else:
            A = build_ctmc(generator, space)
        if A.realization is None:
            raise ValidationError("matrix backend needs a realized generator")
        self.generator = A
        self.space = A.space
        self.sparse = sp.issparse(A.realization)
        self.method = "expm_multiply" if self.sparse else "scipy.linalg.expm (Pade, scaling and squaring)"
        self._cache: dict[float, np.ndarray] = {}

    @property
    def conservative(self) -> bool:
        return self.generator.conservative

    def transition_matrix(self, t: float) -> np.ndarray:
        _check_time(t)
        if self.sparse:
            raise UnsupportedBackendError("no dense transition matrix for a sparse generator")
        t = float(t)
        if t not in self._cache:
            self._cache[t] = np.eye(self.space.size) if t == 0 else expm(t * np.asarray(self.generator.realization))
        return self._cache[t]

    def apply_values(self, t: float, vals: np.ndarray) -> np.ndarray:
        _check_time(t)
        if t == 0:
            return np.array(vals, dtype=float)
        if self.sparse:
            return expm_multiply(t * self.generator.realization, vals)
        return self.transition_matrix(t) @ vals

    def apply(self, t: float, f: TestFunction) -> TestFunction:
        if f.space is not self.space:
            raise DomainError("function lives on a different space than the semigroup")
        return self._result(self.apply_values(t, f.values), f, t)

    def dual_values(self, t: float, weights: np.ndarray) -> np.ndarray:
        _check_time(t)
        if t == 0:
            return np.array(weights, dtype=float)
        if self.sparse:
            return expm_multiply(t * self.generator.realization.T, weights)
        return weights @ self.transition_matrix(t)


class HeatSemigroup(Semigroup):
    """Standard Brownian motion viewed through a grid window."""

    backend = "heat-closed-form"

    def __init__(self, space: StateSpace):
        if space.kind != GRID:
            raise ValidationError("the heat semigroup lives on a real-grid space")
        self.space = space

    def apply(self, t: float, f: TestFunction) -> TestFunction:
        if f.space is not self.space:
            raise DomainError("function lives on a different space than the semigroup")
        _check_time(t)
        if t == 0:
            return f
        if f.name == "sin_square":
            return TestFunction(self.space, 1.0, rule=lambda x: heat_sin_square(t, x), name=f"S({t:g}){f.name}")
        return self._result(heat_quadrature(t, f, self.space.coords), f, t)

    def evaluate(self, t, f, mask):
        _check_time(t)
        x = self.space.coords[mask]
        if t == 0:
            return f.values[mask]
        if f.name == "sin_square":
            return heat_sin_square(t, x)
        return heat_quadrature(t, f, x)


class MonteCarloSemigroup(Semigroup):
    exact = False
    backend = "monte-carlo"

    def __init__(self, model: GeneratorGraph, n_paths: int, seed: int, dt: float | None = None, level: float = 0.99):
        self.model = model
        self.space = model.space
        self.n_paths = n_paths
        self.seed = seed
        self.dt = dt
        self.level = level

    def estimate(self, t: float, f: TestFunction, x) -> EstimateWithBand:
        return mc_apply(self.model, t, f, x, self.n_paths, self.seed, dt=self.dt, level=self.level)

    def apply(self, t, f):
        vals = [self.estimate(t, f, x).value for x in self.space.coords]
        return TestFunction.from_values(self.space, vals, name=f"S({t:g}){f.name}~MC")


class OffsetSemigroup(Semigroup):
    """``S(t + offset)``: a deliberately broken family for negative controls."""

    def __init__(self, inner: Semigroup, offset: float):
        self.inner = inner
        self.offset = float(offset)
        self.space = inner.space
        self.exact = inner.exact
        self.backend = f"{inner.backend}+offset({offset:g})"

    def apply(self, t, f):
        return self.inner.apply(t + self.offset, f)


# -- point operations -----------------------------------------------------------------


def _as_semigroup(Q) -> MatrixExpSemigroup:
    if isinstance(Q, MatrixExpSemigroup):
        return Q
    if isinstance(Q, QMatrix):
        return MatrixExpSemigroup(Q.rates)
    return MatrixExpSemigroup(Q)


def exact_apply(Q, t: float, f: TestFunction) -> TestFunction:
    """``exp(tQ) f``. ``Q`` may be a rate matrix, a generator graph or a matrix semigroup.

    A bare matrix is interpreted on ``f``'s space.
    """
    _check_time(t)
    if isinstance(Q, (np.ndarray, list, QMatrix)):
        rates = Q.rates if isinstance(Q, QMatrix) else Q
        S = MatrixExpSemigroup(rates, space=f.space)
    else:
        S = _as_semigroup(Q)
    return S.apply(t, f)


def heat_sin_square(t: float, x) -> np.ndarray:
    """``E sin((x + W_t)^2) = Im[(1 - 2it)^(-1/2) exp(i x^2 / (1 - 2it))]``."""
    z = 1.0 - 2.0j * t
    x = np.asarray(x, dtype=float)
    return np.imag(np.exp(1j * x**2 / z) / np.sqrt(z))


def heat_envelope(t: float, x) -> np.ndarray:
    """Modulus of the complex closed form: a bound on ``|S(t) sin(x^2)|``."""
    x = np.asarray(x, dtype=float)
    return (1 + 4 * t * t) ** -0.25 * np.exp(-2 * t * x**2 / (1 + 4 * t * t))


def heat_quadrature(t: float, f: TestFunction, x, epsabs: float = HEAT_QUAD_EPSABS) -> np.ndarray:
    """``E f(x + W_t) = int f(y) phi_t(y - x) dy`` by adaptive quadrature.

    Integrating over ``y`` keeps the kinks of ``f`` at fixed abscissae for
    every ``x``, so one vector-valued adaptive rule serves all points.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == 0:
        return f(x)
    s = np.sqrt(t)
    c = 1.0 / np.sqrt(2 * np.pi * t)

    def integrand(y):
        return f(np.asarray(y)) * c * np.exp(-0.5 * (y - x) ** 2 / t)

    # Gaussian mass more than 12 standard deviations out is below 1e-32
    val, _ = quad_vec(integrand, x.min() - 12 * s, x.max() + 12 * s, epsabs=epsabs, epsrel=0.0,
                      norm="max", limit=20000)
    return np.asarray(val)


def heat_apply(t: float, f: TestFunction, x) -> float:
    _check_time(t)
    if t == 0:
        return float(f(np.asarray([x]))[0])
    if f.name == "sin_square":
        return float(heat_sin_square(t, x))
    return float(heat_quadrature(t, f, x)[0])


def mc_apply(model: GeneratorGraph, t: float, f: TestFunction, x, n_paths: int, seed: int,
             dt: float | None = None, level: float = 0.99) -> EstimateWithBand:
    """Monte Carlo ``S(t)f(x)`` with a normal band at ``level``."""
    _check_time(t)
    if n_paths < 2:
        raise ValidationError("need at least two paths")
    ends = sample_terminal(model, x, t, n_paths, seed, dt=dt)
    return mean_band(f(ends), level)


def dual_apply(S: Semigroup, t: float, mu: SignedMeasure) -> SignedMeasure:
    """``S'(t) mu``: each atom is pushed through its transition row."""
    if not isinstance(S, MatrixExpSemigroup):
        raise UnsupportedBackendError(f"dual action is not available for the {S.backend} backend")
    if mu.space is not S.space:
        raise DomainError("measure lives on a different space than the semigroup")
    return SignedMeasure.from_dense(S.space, S.dual_values(t, mu.dense()))


# -- checks -----------------------------------------------------------------------------


def _require_exact(S: Semigroup, what: str):
    if not S.exact:
        raise UnsupportedBackendError(f"{what} needs an exact backend, not {S.backend}")


@dataclass
class LawReport:
    passed: bool
    residual: float
    s: float
    t: float
    tol: float

    def as_dict(self):
        return {"passed": self.passed, "residual": self.residual, "s": self.s, "t": self.t, "tol": self.tol}


def semigroup_law_check(S: Semigroup, s: float, t: float, f: TestFunction, tol: float) -> LawReport:
    """``||S(s)S(t)f - S(s+t)f|| <= tol``."""
    _require_exact(S, "the semigroup law check")
    lhs = S.apply(s, S.apply(t, f))
    rhs = S.apply(s + t, f)
    res = sup_norm(lhs - rhs)
    return LawReport(res <= tol, res, s, t, tol)


def geometric_schedule(t_unit: float = 1.0, k_max: int = 20, k_min: int = 1) -> list:
    return [t_unit * 2.0**-k for k in range(k_min, k_max + 1)]


@dataclass
class ContinuityReport:
    """Residuals of ``S(t0 + h) f - S(t0) f`` along a decreasing ``h`` schedule."""

    beta: BetaVerdict
    sup_converges: bool
    schedule: list
    compact_residuals: list
    sup_residuals: list
    t0: float
    m: int
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.beta.converges

    def curve_rows(self):
        return [{"h": h, "compact_residual": c, "sup_residual": s}
                for h, c, s in zip(self.schedule, self.compact_residuals, self.sup_residuals)]

    def as_dict(self):
        return {"beta_converges": self.beta.converges, "sup_converges": self.sup_converges, "t0": self.t0,
                "K_index": self.m, "final_compact_residual": self.compact_residuals[-1],
                "final_sup_residual": self.sup_residuals[-1], "beta": self.beta.as_dict(), "notes": self.notes}


def strong_continuity_check(S: Semigroup, f: TestFunction, t0: float, tol: float, schedule=None,
                            m_max: int | None = None) -> ContinuityReport:
    """Strict-topology continuity of ``t -> S(t)f`` at ``t0`` (and, for contrast, in sup norm)."""
    _require_exact(S, "the strong continuity check")
    schedule = sorted(schedule or geometric_schedule(), reverse=True)
    base = S.apply(t0, f)
    fs = [S.apply(t0 + h, f) for h in schedule]
    m = S.space.saturation_index if m_max is None else min(m_max, S.space.saturation_index)
    verdict = beta_converges(fs, base, tol, m_max=m, bound=max(f.bound, sup_norm(f)))
    compact = [float(r) for r in verdict.residual_matrix[m - 1]]
    sups = [sup_norm(g - base) for g in fs]
    notes = [f"checked at t0={t0:g} only, along {len(schedule)} values of h"]
    return ContinuityReport(verdict, sups[-1] <= tol, list(schedule), compact, sups, t0, m, notes)


@dataclass
class EquicontinuityReport:
    passed: bool
    residuals: list  # sup over the t grid of p_K(S(t)f_n - S(t)f), per n
    t_grid: list
    tol: float
    premise: BetaVerdict

    def as_dict(self):
        return {"passed": self.passed, "final_residual": self.residuals[-1], "tol": self.tol,
                "n_terms": len(self.residuals), "t_grid": self.t_grid}


def local_equicontinuity_check(S: Semigroup, fs, f: TestFunction, T: float, K, tol: float,
                               t_grid=None, premise_m_max: int | None = None) -> EquicontinuityReport:
    """``sup_{t <= T} p_K(S(t)f_n - S(t)f)`` along a strictly convergent sequence.

    The premise ``f_n -> f`` is itself checked with :func:`beta_converges`
    (tolerance ``tol``, compacts up to the level of ``K``).
    """
    _require_exact(S, "the equicontinuity check")
    K = ensure_compact(S.space, K)
    m = premise_m_max or int(S.space.levels[K.mask].max())
    premise = beta_converges(fs, f, tol, m_max=m)
    if not premise.converges:
        raise PreconditionError("the sequence does not converge in the strict topology at this horizon")
    t_grid = list(t_grid if t_grid is not None else np.linspace(0.0, T, 11))
    base = {t: S.evaluate(t, f, K.mask) for t in t_grid}
    residuals = []
    for g in fs:
        r = max(float(np.max(np.abs(S.evaluate(t, g, K.mask) - base[t]))) for t in t_grid)
        residuals.append(r)
    return EquicontinuityReport(residuals[-1] <= tol, residuals, t_grid, tol, premise)


@dataclass
class LimitReport:
    passed: bool
    norm_bound_ok: bool
    beta: BetaVerdict
    schedule: list
    residuals: list
    quotient_norms: list
    ratio_limit: float
    slope: float
    tol: float

    def curve_rows(self):
        return [{"t": t, "residual": r, "residual_over_t": r / t, "quotient_norm": q}
                for t, r, q in zip(self.schedule, self.residuals, self.quotient_norms)]

    def as_dict(self):
        return {"passed": self.passed, "norm_bound_ok": self.norm_bound_ok, "beta_converges": self.beta.converges,
                "final_residual": self.residuals[-1], "ratio_limit": self.ratio_limit, "loglog_slope": self.slope,
                "tol": self.tol}


def generator_limit_check(S: Semigroup, f: TestFunction, g: TestFunction, tol: float, schedule=None,
                          m_max: int | None = None) -> LimitReport:
    """Whether ``(S(t)f - f)/t -> g`` strictly with ``||(S(t)f - f)/t|| <= ||g||``."""
    _require_exact(S, "the generator limit check")
    schedule = sorted(schedule or geometric_schedule(), reverse=True)
    quotients = [(S.apply(t, f) - f) * (1.0 / t) for t in schedule]
    qnorms = [sup_norm(q) for q in quotients]
    gnorm = sup_norm(g)
    bound_ok = all(q <= gnorm * (1 + tol) for q in qnorms)
    verdict = beta_converges(quotients, g, tol, m_max=m_max, bound=gnorm * (1 + tol) + tol)
    residuals = [sup_norm(q - g) for q in quotients]
    ts = np.asarray(schedule)
    rs = np.asarray(residuals)
    pos = rs > 0
    slope = float(np.polyfit(np.log(ts[pos]), np.log(rs[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return LimitReport(bool(bound_ok and verdict.converges), bool(bound_ok), verdict, list(schedule), residuals,
                       qnorms, float(rs[-1] / ts[-1]), slope, tol)
