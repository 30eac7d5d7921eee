"""Finitely supported signed measures and their pairing with test functions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from scle.errors import DomainError, ValidationError
from scle.function_space import TestFunction, superlevel_violation
from scle.state_space import StateSpace, exhaustion_member


@dataclass(frozen=True, eq=False)
class SignedMeasure:
    """``sum_i w_i delta_{x_i}`` over distinct represented points.

    Atoms are stored by point index, sorted, with duplicates merged and zero
    weights pruned.
    """

    space: StateSpace
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.support, dtype=np.int64).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if idx.shape != w.shape:
            raise ValidationError("support and weights differ in length")
        if np.any(~np.isfinite(w)):
            raise ValidationError("weights must be finite")
        if idx.size and (idx.min() < 0 or idx.max() >= self.space.size):
            raise DomainError("support index outside the space")
        uniq, inv = np.unique(idx, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        keep = merged != 0.0
        uniq, merged = uniq[keep], merged[keep]
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "support", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def from_atoms(cls, space: StateSpace, points, weights) -> "SignedMeasure":
        points = list(points)
        idx = [space.index_of(p) for p in points]
        return cls(space, np.asarray(idx, dtype=np.int64), np.asarray(weights, dtype=float))

    @classmethod
    def dirac(cls, space: StateSpace, x, mass: float = 1.0) -> "SignedMeasure":
        return cls.from_atoms(space, [x], [mass])

    @classmethod
    def zero(cls, space: StateSpace) -> "SignedMeasure":
        return cls(space, np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_dense(cls, space: StateSpace, dense) -> "SignedMeasure":
        dense = np.asarray(dense, dtype=float)
        nz = np.flatnonzero(dense)
        return cls(space, nz, dense[nz])

    def dense(self) -> np.ndarray:
        out = np.zeros(self.space.size)
        out[self.support] = self.weights
        return out

    @property
    def points(self) -> np.ndarray:
        return self.space.coords[self.support]

    @property
    def total_variation(self) -> float:
        return float(np.abs(self.weights).sum())

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def is_probability(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.weights >= -tol) and abs(self.total_mass - 1.0) <= tol)

    def mass_of(self, mask) -> float:
        return float(self.weights[np.asarray(mask)[self.support]].sum())

    def __add__(self, other: "SignedMeasure") -> "SignedMeasure":
        if other.space is not self.space:
            raise DomainError("measures live on different spaces")
        return SignedMeasure(self.space, np.concatenate([self.support, other.support]),
                             np.concatenate([self.weights, other.weights]))

    def __mul__(self, c: float) -> "SignedMeasure":
        return SignedMeasure(self.space, self.support, self.weights * float(c))

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def equals(self, other: "SignedMeasure") -> bool:
        """Exact equality of atoms (no tolerance)."""
        return (other.space is self.space and np.array_equal(self.support, other.support)
                and np.array_equal(self.weights, other.weights))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["point", "weight"])
        for x, w in zip(self.points, self.weights):
            writer.writerow([repr(float(x)), repr(float(w))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, space: StateSpace, text: str) -> "SignedMeasure":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls.from_atoms(space, [float(r["point"]) for r in rows], [float(r["weight"]) for r in rows])

    def __repr__(self):
        atoms = ", ".join(f"{w:g}@{x:g}" for x, w in zip(self.points[:6], self.weights[:6]))
        more = " ..." if self.support.size > 6 else ""
        return f"<SignedMeasure {atoms}{more}>"


@dataclass(frozen=True)
class HahnJordan:
    """``mu = c_plus mu_plus - c_minus mu_minus`` with disjointly supported parts.

    ``positive`` and ``negative`` are the unnormalised Jordan parts
    (``c_plus mu_plus`` and ``c_minus mu_minus``); keeping them makes the
    reconstruction exact in floating point. Either probability part is the
    zero measure when its constant is 0.
    """

    c_plus: float
    c_minus: float
    mu_plus: SignedMeasure
    mu_minus: SignedMeasure
    positive: SignedMeasure
    negative: SignedMeasure

    def reconstruct(self) -> SignedMeasure:
        return SignedMeasure(
            self.positive.space,
            np.concatenate([self.positive.support, self.negative.support]),
            np.concatenate([self.positive.weights, -self.negative.weights]),
        )

    @property
    def total_variation(self) -> float:
        return self.c_plus + self.c_minus


def hahn_jordan(mu: SignedMeasure) -> HahnJordan:
    """Split ``mu`` by the sign of its atoms.

    The zero measure maps to ``c_plus = c_minus = 0`` with both probability
    parts equal to the zero measure.
    """
    space = mu.space
    pos = mu.weights > 0
    positive = SignedMeasure(space, mu.support[pos], mu.weights[pos])
    negative = SignedMeasure(space, mu.support[~pos], -mu.weights[~pos])
    c_plus, c_minus = positive.total_mass, negative.total_mass
    mu_plus = positive * (1.0 / c_plus) if c_plus > 0 else SignedMeasure.zero(space)
    mu_minus = negative * (1.0 / c_minus) if c_minus > 0 else SignedMeasure.zero(space)
    return HahnJordan(c_plus, c_minus, mu_plus, mu_minus, positive, negative)


def pair(f: TestFunction, mu: SignedMeasure) -> float:
    """``<f, mu> = sum_i f(x_i) w_i``."""
    if f.space is not mu.space:
        raise DomainError("function and measure live on different spaces")
    return float(np.dot(f.values[mu.support], mu.weights))


# -- convergence of measures ------------------------------------------------------


@dataclass
class MeasureVerdict:
    """Dictionary-based convergence evidence.

    ``residuals[n][k] = |<f_k, mu_n> - <f_k, mu>|``; the verdict is taken at
    the last measure of the sequence (the horizon).
    """

    converges: bool
    topology: str
    tol: float
    residuals: np.ndarray = field(repr=False)
    names: list = field(default_factory=list)

    @property
    def final(self) -> dict:
        return {n: float(r) for n, r in zip(self.names, self.residuals[-1])}

    def as_dict(self) -> dict:
        return {"converges": bool(self.converges), "topology": self.topology, "tol": float(self.tol),
                "final_residuals": self.final}


def _is_constant_one_like(f: TestFunction) -> bool:
    v = f.values
    return bool(v[0] != 0 and np.all(v == v[0]))


def _dictionary_residuals(mus, mu, dictionary):
    if not dictionary:
        raise ValidationError("the test-function dictionary is empty")
    for m in list(mus) + [mu]:
        if m.space is not mu.space:
            raise DomainError("measures live on different spaces")
    for f in dictionary:
        if f.space is not mu.space:
            raise DomainError(f"{f.name} lives on a different space")
    target = np.array([pair(f, mu) for f in dictionary])
    return np.array([[abs(pair(f, m) - t) for f, t in zip(dictionary, target)] for m in mus])


def weak_convergence_test(mus, mu, dictionary, tol) -> MeasureVerdict:
    """Convergence tested against bounded continuous functions.

    The dictionary must contain a non-zero constant so that escaping mass is
    detected.
    """
    if not any(_is_constant_one_like(f) for f in dictionary):
        raise ValidationError("a weak-topology dictionary must contain a non-zero constant")
    res = _dictionary_residuals(mus, mu, dictionary)
    return MeasureVerdict(bool(np.all(res[-1] <= tol)), "weak", tol, res, [f.name for f in dictionary])


def vague_convergence_test(mus, mu, dictionary, tol) -> MeasureVerdict:
    """Convergence tested against functions vanishing at infinity only."""
    for f in dictionary:
        if not f.vanishing or superlevel_violation(f.space, f.values) is not None:
            raise ValidationError(f"{f.name} is not certified to vanish at infinity")
    res = _dictionary_residuals(mus, mu, dictionary)
    return MeasureVerdict(bool(np.all(res[-1] <= tol)), "vague", tol, res, [f.name for f in dictionary])


@dataclass
class TightnessCertificate:
    """Smallest ``K_n`` holding mass ``>= 1 - eps`` for every member of a family."""

    found: bool
    index: int | None
    eps: float
    masses: list
    best_mass: float

    def as_dict(self) -> dict:
        return {"found": self.found, "index": self.index, "eps": self.eps,
                "min_mass": float(min(self.masses)) if self.masses else None, "best_mass": self.best_mass}


def tightness_test(mus, eps: float, n_max: int | None = None) -> TightnessCertificate:
    """Search the exhaustion for a compact set carrying ``1 - eps`` of every measure."""
    if not mus:
        raise ValidationError("empty family")
    space = mus[0].space
    for m in mus:
        if m.space is not space:
            raise DomainError("measures live on different spaces")
        if not m.is_probability(1e-9):
            raise ValidationError("tightness is tested on probability measures only")
    n_max = space.saturation_index if n_max is None else n_max
    best = -np.inf
    for n in range(1, n_max + 1):
        K = exhaustion_member(space, n)
        masses = [m.mass_of(K.mask) for m in mus]
        worst = min(masses)
        best = max(best, worst)
        if worst >= 1.0 - eps:
            return TightnessCertificate(True, n, eps, masses, worst)
    return TightnessCertificate(False, None, eps, [], float(best))
