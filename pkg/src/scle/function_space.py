"""Bounded continuous test functions and the seminorms of the strict topology.

A :class:`TestFunction` lives on one :class:`~scle.state_space.StateSpace`
and is known through its values on the represented points (exact on finite
and grid spaces). Three seminorm families are provided: the compact-open
seminorms ``p_K``, the weighted strict seminorms ``sup_n a_n p_{K_n}`` and
the ``g``-weighted form ``||f g||``.

Convergence in the strict topology is decided at a finite horizon by
:func:`beta_converges`: a sequence converges when its sup norms stay bounded
and it converges uniformly on each ``K_m`` of the exhaustion.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from scle.errors import DomainError, ValidationError
from scle.state_space import CompactSet, StateSpace, exhaustion_member

SUPERLEVELS = (1e-1, 1e-2, 1e-3, 1e-4)
_REL = 1e-12


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A bounded function on a represented space.

    Either ``rule`` (a vectorised map from coordinates to values) or
    ``table`` (values on the represented points) must be given. ``bound`` is
    the declared norm bound; ``vanishing`` asserts membership of C_0.
    """

    __test__ = False  # not a pytest class

    space: StateSpace
    bound: float
    rule: Callable[[np.ndarray], np.ndarray] | None = None
    table: np.ndarray | None = field(default=None, repr=False)
    vanishing: bool = False
    name: str = "f"

    def __post_init__(self):
        if (self.rule is None) == (self.table is None):
            raise ValidationError("give exactly one of rule= or table=")
        if not np.isfinite(self.bound) or self.bound < 0:
            raise ValidationError(f"{self.name}: norm bound must be finite and >= 0")
        if self.table is not None:
            table = np.array(self.table, dtype=float)
            if table.shape != (self.space.size,):
                raise ValidationError(f"{self.name}: table has shape {table.shape}, space has {self.space.size} points")
            table.setflags(write=False)
            object.__setattr__(self, "table", table)

    @classmethod
    def from_values(cls, space, values, bound=None, vanishing=False, name="f") -> "TestFunction":
        values = np.asarray(values, dtype=float)
        if bound is None:
            bound = float(np.max(np.abs(values))) if values.size else 0.0
        return cls(space, bound, table=values, vanishing=vanishing, name=name)

    @cached_property
    def values(self) -> np.ndarray:
        if self.table is not None:
            return self.table
        vals = np.asarray(self.rule(self.space.coords), dtype=float)
        vals = np.broadcast_to(vals, self.space.coords.shape).copy()
        vals.setflags(write=False)
        return vals

    def __call__(self, xs):
        xs = np.asarray(xs, dtype=float)
        if self.rule is not None:
            return np.broadcast_to(np.asarray(self.rule(xs), dtype=float), xs.shape)
        return self.values[self.space.nearest_indices(xs)]

    def validate(self) -> "TestFunction":
        """Check the declared bound and, if set, the vanishing certificate."""
        peak = float(np.max(np.abs(self.values)))
        if peak > self.bound * (1 + _REL) + 1e-300:
            raise ValidationError(f"{self.name}: sup |f| = {peak} exceeds declared bound {self.bound}")
        if self.vanishing:
            alpha = superlevel_violation(self.space, self.values)
            if alpha is not None:
                raise ValidationError(
                    f"{self.name}: super-level set at alpha={alpha:g} reaches the edge of the represented space"
                )
        return self

    # -- arithmetic ----------------------------------------------------------

    def _combine(self, other, op, name, vanishing):
        if isinstance(other, TestFunction):
            _same_space(self, other)
            vals = op(self.values, other.values)
        else:
            vals = op(self.values, float(other))
        return TestFunction.from_values(self.space, vals, vanishing=vanishing, name=name)

    def __add__(self, other):
        return self._combine(other, np.add, f"({self.name}+{_nm(other)})", self.vanishing and _vanishes(other))

    def __sub__(self, other):
        return self._combine(other, np.subtract, f"({self.name}-{_nm(other)})", self.vanishing and _vanishes(other))

    def __mul__(self, other):
        return self._combine(other, np.multiply, f"({_nm(other)}*{self.name})", self.vanishing or _vanishes(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"<TestFunction {self.name} on {self.space.kind}, bound={self.bound:g}>"


def _vanishes(x):
    if isinstance(x, TestFunction):
        return x.vanishing
    return float(x) == 0.0


def _nm(x):
    return x.name if isinstance(x, TestFunction) else f"{float(x):g}"


def _same_space(*fs):
    space = fs[0].space
    for f in fs[1:]:
        if f.space is not space:
            raise DomainError(f"{f.name} and {fs[0].name} live on different spaces")
    return space


def superlevel_violation(space: StateSpace, values, levels=SUPERLEVELS):
    """First level ``alpha`` whose set ``{|f| >= alpha}`` reaches the outer shell of the window.

    The outer shell is ``K_sat \\ K_{sat-1}``: a super-level set inside the
    window but outside every proper exhaustion element is not certified compact.

    On a finite space every set is compact and ``None`` is returned.
    """
    if space.compact:
        return None
    edge = np.abs(np.asarray(values)[space.edge_mask])
    for alpha in levels:
        if np.any(edge >= alpha):
            return alpha
    return None


# -- seminorms ----------------------------------------------------------------


def sup_norm(f: TestFunction) -> float:
    return float(np.max(np.abs(f.values)))


def compact_open_seminorm(f: TestFunction, K: CompactSet) -> float:
    """``sup_{x in K} |f(x)|``; the empty set gives 0."""
    if K.space is not f.space:
        raise DomainError("compact set and function live on different spaces")
    if not K.mask.any():
        return 0.0
    return float(np.max(np.abs(f.values[K.mask])))


@dataclass(frozen=True)
class StrictSeminorm:
    """``p(f) = max_n a_n p_{K_n}(f)`` for ``n = 1..len(weights)``.

    The weights are the caller's declaration of a null sequence, truncated at
    the represented horizon.
    """

    space: StateSpace
    weights: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValidationError("strict seminorm needs at least one weight")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValidationError("strict seminorm weights must be finite and non-negative")
        object.__setattr__(self, "weights", tuple(float(a) for a in w))

    @classmethod
    def geometric(cls, space, ratio=0.5, n_max=None):
        n_max = n_max or space.saturation_index
        return cls(space, tuple(ratio ** n for n in range(1, n_max + 1)))


def _level_profile(space: StateSpace, values: np.ndarray) -> np.ndarray:
    """``out[..., m-1] = max |values| over K_m`` for ``m = 1..saturation``."""
    vals = np.abs(np.atleast_2d(values))
    sat = space.saturation_index
    out = np.zeros(vals.shape[:-1] + (sat,))
    for lev in np.unique(space.levels):
        sel = space.levels == lev
        out[..., lev - 1] = vals[..., sel].max(axis=-1)
    return np.maximum.accumulate(out, axis=-1)


def strict_seminorm(f: TestFunction, s: StrictSeminorm) -> float:
    if s.space is not f.space:
        raise DomainError("seminorm and function live on different spaces")
    prof = _level_profile(f.space, f.values)[0]
    w = np.asarray(s.weights)
    idx = np.minimum(np.arange(w.size), prof.size - 1)
    return float(np.max(w * prof[idx]))


def g_weighted_seminorm(f: TestFunction, g: TestFunction) -> float:
    """``||f g||`` where ``g`` must have compact super-level sets."""
    _same_space(f, g)
    alpha = superlevel_violation(g.space, g.values)
    if alpha is not None:
        raise ValidationError(
            f"weight {g.name} has a non-compact super-level set at alpha={alpha:g}"
        )
    return float(np.max(np.abs(f.values * g.values)))


# -- strict convergence -------------------------------------------------------


@dataclass
class BetaVerdict:
    """Outcome of a finite-horizon strict-topology convergence check.

    ``residuals`` holds ``(m, residual at n_max, N(m))`` triples, where
    ``N(m)`` is the first index from which every residual on ``K_m`` stays
    below ``tol`` (``None`` if the last one does not).
    """

    converges: bool
    norm_bound_witness: float
    bounded: bool
    kappa_converges: bool
    residuals: list
    tol: float
    norms: np.ndarray = field(repr=False)
    residual_matrix: np.ndarray = field(repr=False)
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "converges": bool(self.converges),
            "bounded": bool(self.bounded),
            "kappa_converges": bool(self.kappa_converges),
            "norm_bound_witness": float(self.norm_bound_witness),
            "tol": float(self.tol),
            "residuals": [
                {"m": int(m), "residual": float(r), "N": None if n is None else int(n)}
                for m, r, n in self.residuals
            ],
            "notes": list(self.notes),
        }


def _bounded_at_horizon(norms: np.ndarray, limit_norm: float, bound):
    if bound is not None:
        return bool(np.all(norms <= bound * (1 + _REL))), float(bound)
    # no declared common bound: the tail of the horizon must not outgrow its head
    half = max(norms.size // 2, 1)
    head = max(float(norms[:half].max()), limit_norm)
    tail = float(norms[half:].max()) if norms.size > half else 0.0
    return tail <= head * (1 + 1e-9) + 1e-300, float(norms.max())


def beta_converges(
    fs: Sequence[TestFunction],
    f: TestFunction,
    tol: float,
    n_max: int | None = None,
    m_max: int | None = None,
    bound: float | None = None,
) -> BetaVerdict:
    """Decide ``f_n -> f`` in the strict topology at a finite horizon.

    On norm-bounded sets the strict topology agrees with uniform convergence
    on compacts, so the verdict is "norms bounded" and "``p_{K_m}(f_n - f)``
    eventually below ``tol`` for every ``m <= m_max``".

    Without an explicit common ``bound`` the norms count as bounded when the
    second half of the horizon does not exceed the first half (or ``||f||``).
    """
    if not fs:
        raise ValidationError("need a non-empty sequence")
    space = _same_space(f, *fs)
    n_max = len(fs) if n_max is None else min(n_max, len(fs))
    m_max = space.saturation_index if m_max is None else min(m_max, space.saturation_index)
    F = np.stack([g.values for g in fs[:n_max]])
    norms = np.max(np.abs(F), axis=1)
    bounded, witness = _bounded_at_horizon(norms, sup_norm(f), bound)

    R = _level_profile(space, F - f.values)[:, :m_max].T  # (m, n)
    residuals = []
    for m in range(1, m_max + 1):
        row = R[m - 1]
        above = np.flatnonzero(row > tol)
        if above.size == 0:
            start = 1
        elif above[-1] == row.size - 1:
            start = None
        else:
            start = int(above[-1]) + 2
        residuals.append((m, float(row[-1]), start))
    kappa = all(n is not None for _, _, n in residuals)
    return BetaVerdict(
        converges=bool(bounded and kappa),
        norm_bound_witness=witness,
        bounded=bool(bounded),
        kappa_converges=bool(kappa),
        residuals=residuals,
        tol=float(tol),
        norms=norms,
        residual_matrix=R,
    )


def dini_check(fs, f, tol, n_max=None, m_max=None, bound=None) -> BetaVerdict:
    """:func:`beta_converges` for a pointwise monotone sequence.

    Raises :class:`ValidationError` if the sequence is not monotone toward
    ``f`` on the represented points.
    """
    _same_space(f, *fs)
    F = np.stack([g.values for g in fs])
    steps = np.diff(F, axis=0)
    eps = 1e-12 * max(1.0, float(np.max(np.abs(F))))
    up = np.all(steps >= -eps) and np.all(F[-1] <= f.values + eps)
    down = np.all(steps <= eps) and np.all(F[-1] >= f.values - eps)
    if not (up or down):
        raise ValidationError("sequence is not pointwise monotone toward its limit")
    verdict = beta_converges(fs, f, tol, n_max=n_max, m_max=m_max, bound=bound)
    verdict.notes.append("monotone " + ("increasing" if up else "decreasing"))
    return verdict


# -- density probe ------------------------------------------------------------


@dataclass
class DensityProbe:
    residual: float
    by_degree: list
    notes: list = field(default_factory=list)


def _monomials(n_gens: int, degree: int):
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_gens), d):
            yield d, combo


def density_probe(generators, target: TestFunction, K: CompactSet, degree: int) -> DensityProbe:
    """Best uniform residual on ``K`` of least-squares polynomial fits in the generators.

    Polynomials include the constant term. The reported residual is the
    running minimum over degrees ``0..degree`` so it never increases with
    the degree. The probe reports; it never asserts density.
    """
    _same_space(target, *generators)
    if K.space is not target.space:
        raise DomainError("compact set lives on a different space")
    G = np.stack([g.values[K.mask] for g in generators], axis=1)
    y = target.values[K.mask]
    if not np.all(np.max(np.abs(G), axis=1) > 1e-12):
        raise ValidationError("generators vanish simultaneously at some point of K")
    if np.unique(np.round(G, 12), axis=0).shape[0] != G.shape[0]:
        raise ValidationError("generators do not separate the points of K")

    cols, degs = [], []
    for d, combo in _monomials(G.shape[1], degree):
        col = np.prod(G[:, list(combo)], axis=1) if combo else np.ones(G.shape[0])
        cols.append(col)
        degs.append(d)
    X = np.stack(cols, axis=1)
    degs = np.asarray(degs)
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    X = X / scale

    best = np.inf
    by_degree = []
    for d in range(degree + 1):
        Xd = X[:, degs <= d]
        coef, *_ = np.linalg.lstsq(Xd, y, rcond=None)
        res = float(np.max(np.abs(Xd @ coef - y)))
        best = min(best, res)
        by_degree.append((d, res, best))
    return DensityProbe(residual=best, by_degree=by_degree)


def ensure_compact(space: StateSpace, K) -> CompactSet:
    """Accept a :class:`CompactSet` or an exhaustion index."""
    if isinstance(K, CompactSet):
        return K
    return exhaustion_member(space, int(K))
