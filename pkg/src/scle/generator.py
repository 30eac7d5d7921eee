"""Generator graphs and their concrete realizations.

A :class:`GeneratorGraph` is a set of stored pairs ``(f, Af)`` together with
an optional linear realization (a rate matrix or a finite-difference
stencil) that can act on any function of the space. Three builders cover
the models used here: a finite rate matrix, a truncated birth-death chain
and a 1-D diffusion on a grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from scle.errors import DomainError, ValidationError
from scle.function_space import TestFunction, superlevel_violation
from scle.state_space import GRID, StateSpace

CTMC = "ctmc"
DIFFUSION = "diffusion"
PAIR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class QMatrix:
    """Square rate matrix with non-negative off-diagonal entries.

    Row sums may be negative (killing); ``row_slack`` records them.
    """

    rates: np.ndarray

    def __post_init__(self):
        Q = np.array(self.rates, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] == 0:
            raise ValidationError(f"rate matrix must be square, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise ValidationError("rate matrix has non-finite entries")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            i, j = np.argwhere(off < 0)[0]
            raise ValidationError(f"negative off-diagonal rate Q[{i},{j}] = {Q[i, j]}")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.any(Q.sum(axis=1) > 1e-12 * scale):
            raise ValidationError("rate matrix rows must sum to <= 0")
        Q.setflags(write=False)
        object.__setattr__(self, "rates", Q)

    @property
    def size(self) -> int:
        return self.rates.shape[0]

    @property
    def row_slack(self) -> np.ndarray:
        return self.rates.sum(axis=1)

    @property
    def conservative(self) -> bool:
        scale = max(1.0, float(np.abs(self.rates).max()))
        return bool(np.all(np.abs(self.row_slack) <= 1e-12 * scale))


@dataclass(frozen=True, eq=False)
class GeneratorGraph:
    space: StateSpace
    kind: str
    realization: object = None  # dense ndarray or scipy sparse matrix acting on value vectors
    pairs: tuple = ()
    conservative: bool = False
    drift: Callable | None = None
    diffusion: Callable | None = None
    notes: tuple = ()
    q: QMatrix | None = field(default=None, repr=False)

    def __post_init__(self):
        seen = []
        for f, g in self.pairs:
            if f.space is not self.space or g.space is not self.space:
                raise DomainError("stored pair lives on a different space")
            for f0, g0 in seen:
                if np.array_equal(f0.values, f.values) and not np.array_equal(g0.values, g.values):
                    raise ValidationError(f"graph is not single-valued at {f.name}")
            if self.realization is not None:
                err = np.max(np.abs(self.realization @ f.values - g.values))
                if err > PAIR_TOL * max(1.0, float(np.max(np.abs(g.values)))):
                    raise ValidationError(f"stored pair ({f.name}, {g.name}) disagrees with realization by {err:.3g}")
            seen.append((f, g))
        if self.conservative and self.realization is not None:
            leak = np.max(np.abs(self.realization @ np.ones(self.space.size)))
            if leak > PAIR_TOL * max(1.0, _matrix_scale(self.realization)):
                raise ValidationError(f"graph flagged conservative but A1 has size {leak:.3g}")

    @property
    def matrix(self) -> np.ndarray:
        """Dense realization (small models only)."""
        R = self.realization
        if R is None:
            raise DomainError("graph has no realization")
        return R.toarray() if sp.issparse(R) else np.asarray(R)

    def with_pairs(self, fs) -> "GeneratorGraph":
        """Store ``(f, Af)`` for each ``f`` computed from the realization."""
        pairs = tuple(self.pairs) + tuple((f, apply(self, f)) for f in fs)
        return replace(self, pairs=pairs)

    def scaled(self, factor: float) -> "GeneratorGraph":
        """``factor * A``; used to build mis-specified generators for negative controls."""
        R = None if self.realization is None else self.realization * float(factor)
        pairs = tuple((f, g * float(factor)) for f, g in self.pairs)
        q = None if self.q is None else QMatrix(self.q.rates * float(factor))
        return replace(self, realization=R, pairs=pairs, q=q, notes=self.notes + (f"scaled by {factor:g}",))


def _matrix_scale(R) -> float:
    if sp.issparse(R):
        return float(abs(R).max())
    return float(np.abs(R).max())


def apply(A: GeneratorGraph, f: TestFunction) -> TestFunction:
    """``Af`` through the realization, or a stored pair if there is none."""
    if f.space is not A.space:
        raise DomainError("function lives on a different space than the generator")
    if A.realization is not None:
        vals = np.asarray(A.realization @ f.values, dtype=float)
        vanishing = f.vanishing and superlevel_violation(A.space, vals) is None
        return TestFunction.from_values(A.space, vals, vanishing=vanishing, name=f"A{f.name}")
    for g, Ag in A.pairs:
        if g is f or np.array_equal(g.values, f.values):
            return Ag
    raise DomainError(f"{f.name} is not in the stored domain and the graph has no realization")


def build_ctmc(Q, space: StateSpace | None = None) -> GeneratorGraph:
    """Generator of a finite continuous-time chain with rate matrix ``Q``."""
    q = Q if isinstance(Q, QMatrix) else QMatrix(Q)
    if space is None:
        space = StateSpace.finite(q.size)
    if space.size != q.size:
        raise ValidationError(f"rate matrix is {q.size}x{q.size} but the space has {space.size} points")
    notes = () if q.conservative else (f"killing: row sums {q.row_slack.tolist()}",)
    return GeneratorGraph(space, CTMC, realization=q.rates, conservative=q.conservative, notes=notes, q=q)


def _rate_vector(rates, n: int, what: str) -> np.ndarray:
    if callable(rates):
        vec = np.array([rates(i) for i in range(n)], dtype=float)
    elif np.ndim(rates) == 0:
        vec = np.full(n, float(rates))
    else:
        vec = np.asarray(rates, dtype=float)
        if vec.size < n:
            raise ValidationError(f"{what} rates: need {n} values, got {vec.size}")
        vec = vec[:n].copy()
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise ValidationError(f"{what} rates must be finite and non-negative")
    return vec


def build_birth_death(birth_rates, death_rates, n_max: int) -> GeneratorGraph:
    """Birth-death chain on ``0..n_max``, reflecting at ``n_max``.

    Rates may be scalars, sequences indexed by state, or callables. A scalar
    death rate applies to states ``1..n_max``; an explicit sequence or
    callable must give 0 at state 0. The birth rate at ``n_max`` is set to 0
    and the truncation is recorded.
    """
    n = n_max + 1
    lam = _rate_vector(birth_rates, n, "birth")
    mu = _rate_vector(death_rates, n, "death")
    if np.ndim(death_rates) == 0 and not callable(death_rates):
        mu[0] = 0.0
    if mu[0] != 0:
        raise ValidationError(f"death rate at 0 must be 0, got {mu[0]}")
    notes = []
    if lam[-1] != 0:
        notes.append(f"reflecting truncation at {n_max}: birth rate {lam[-1]:g} set to 0")
        lam[-1] = 0.0
    Q = np.diag(lam[:-1], 1) + np.diag(mu[1:], -1)
    Q -= np.diag(Q.sum(axis=1))
    q = QMatrix(Q)
    return GeneratorGraph(StateSpace.countable(n_max), CTMC, realization=q.rates, conservative=True,
                          notes=tuple(notes), q=q)


def build_diffusion_1d(drift, diffusion, space: StateSpace) -> GeneratorGraph:
    """Central-difference stencil for ``b f' + (sigma^2/2) f''`` with reflecting ends.

    ``drift`` and ``diffusion`` (the squared volatility) are vectorised
    callables or constants. The boundary uses a mirrored ghost point, which
    drops the drift term there; this first-order boundary error is recorded.
    """
    if space.kind != GRID:
        raise ValidationError("diffusion generators need a real-grid space")
    b = _as_callable(drift)
    s2 = _as_callable(diffusion)
    x = space.coords
    bx = np.broadcast_to(np.asarray(b(x), dtype=float), x.shape)
    sx = np.broadcast_to(np.asarray(s2(x), dtype=float), x.shape)
    if np.any(sx <= 0):
        i = int(np.argmax(sx <= 0))
        raise ValidationError(f"diffusion coefficient must be positive; sigma^2({x[i]:g}) = {sx[i]:g}")
    h = space.spacing
    up = bx / (2 * h) + sx / (2 * h * h)
    down = -bx / (2 * h) + sx / (2 * h * h)
    up[0] = sx[0] / (h * h)
    down[-1] = sx[-1] / (h * h)
    if np.any(up[:-1] < 0) or np.any(down[1:] < 0):
        raise ValidationError("grid too coarse for the drift: stencil has negative jump rates")
    R = _tridiag(down[1:], up[:-1], x.size)
    notes = (f"reflecting boundary at +/-{space.half_width:g}: drift dropped at the two end points (O(h))",)
    return GeneratorGraph(space, DIFFUSION, realization=R, conservative=True, drift=b, diffusion=s2, notes=notes)


def _tridiag(lower: np.ndarray, upper: np.ndarray, n: int):
    diag = np.zeros(n)
    diag[:-1] -= upper
    diag[1:] -= lower
    return sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="csr")


def _as_callable(c):
    if callable(c):
        return c
    value = float(c)
    return lambda x: np.full(np.shape(x), value)


def load_qmatrix_csv(path) -> QMatrix:
    return QMatrix(np.loadtxt(path, delimiter=",", ndmin=2))


def load_rates_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Two-column CSV ``birth,death`` (header allowed) indexed by state."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return np.asarray(data["birth"], dtype=float), np.asarray(data["death"], dtype=float)
