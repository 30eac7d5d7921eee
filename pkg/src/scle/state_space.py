"""Concrete metric state spaces with a declared compact exhaustion.

Three families are supported:

* ``finite``: ``n`` labelled points with the discrete metric; the whole space
  is compact, so every exhaustion element is the full space.
* ``truncated-countable``: the integers ``0..n_max`` with ``|i - j|``;
  ``K_n = {0, ..., n}``. The truncation stands in for the non-compact set of
  all non-negative integers.
* ``real-grid``: the uniform grid on ``[-L, L]`` with spacing ``h`` and the
  Euclidean metric; ``K_n = [-n, n] ∩ grid``.

Points are addressed by their coordinate (an integer index for the first
two families, a real number for the grid). Finite spaces also accept their
labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from scle.errors import DomainError, ValidationError

FINITE = "finite"
COUNTABLE = "truncated-countable"
GRID = "real-grid"
KINDS = (FINITE, COUNTABLE, GRID)


@dataclass(frozen=True, eq=False)
class StateSpace:
    """An immutable represented state space.

    Use the :meth:`finite`, :meth:`countable` and :meth:`grid` constructors
    rather than calling the class directly.
    """

    kind: str
    coords: np.ndarray
    labels: tuple = ()
    spacing: float = 1.0
    exhaustion_step: float = 1.0
    levels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown space kind {self.kind!r}; expected one of {KINDS}")
        coords = np.asarray(self.coords, dtype=float)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.kind == FINITE:
            levels = np.ones(coords.size, dtype=np.int64)
        else:
            radius = np.abs(coords) / self.exhaustion_step
            # tolerate rounding of grid coordinates that sit on a boundary
            levels = np.maximum(np.ceil(radius - 1e-9), 1).astype(np.int64)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    # -- constructors -----------------------------------------------------

    @classmethod
    def finite(cls, points) -> "StateSpace":
        """Finite space from a point count or a sequence of labels."""
        if isinstance(points, (int, np.integer)):
            labels = tuple(str(i) for i in range(int(points)))
        else:
            labels = tuple(str(p) for p in points)
        if not labels:
            raise ValidationError("a finite space needs at least one point")
        if len(set(labels)) != len(labels):
            raise ValidationError("finite space labels must be distinct")
        return cls(FINITE, np.arange(len(labels), dtype=float), labels=labels)

    @classmethod
    def countable(cls, n_max: int, step: int = 1) -> "StateSpace":
        if n_max < 1:
            raise ValidationError("n_max must be at least 1")
        return cls(COUNTABLE, np.arange(n_max + 1, dtype=float), exhaustion_step=float(step))

    @classmethod
    def grid(cls, half_width: float, spacing: float, step: float = 1.0) -> "StateSpace":
        if half_width <= 0 or spacing <= 0:
            raise ValidationError("half_width and spacing must be positive")
        cells = 2 * half_width / spacing
        if abs(cells - round(cells)) > 1e-6:
            raise ValidationError("spacing must divide the interval [-L, L] evenly")
        coords = np.linspace(-half_width, half_width, int(round(cells)) + 1)
        return cls(GRID, coords, spacing=float(spacing), exhaustion_step=float(step))

    # -- basic facts -------------------------------------------------------

    @property
    def size(self) -> int:
        return self.coords.size

    @property
    def compact(self) -> bool:
        return self.kind == FINITE

    @property
    def half_width(self) -> float:
        return float(self.coords[-1]) if self.kind == GRID else float("nan")

    @property
    def saturation_index(self) -> int:
        """Smallest ``n`` with ``K_n`` equal to the whole represented space."""
        return int(self.levels.max())

    @property
    def diameter(self) -> float:
        if self.kind == FINITE:
            return 1.0 if self.size > 1 else 0.0
        return float(self.coords[-1] - self.coords[0])

    @property
    def edge_mask(self) -> np.ndarray:
        """Outermost represented points; reaching them means leaving the window."""
        if self.kind == FINITE:
            return np.zeros(self.size, dtype=bool)
        return self.levels == self.saturation_index

    def describe(self) -> dict:
        out = {"kind": self.kind, "size": self.size}
        if self.kind == FINITE:
            out["labels"] = list(self.labels)
        elif self.kind == COUNTABLE:
            out["n_max"] = int(self.coords[-1])
        else:
            out["half_width"] = self.half_width
            out["spacing"] = self.spacing
        if self.kind != FINITE:
            out["exhaustion_step"] = self.exhaustion_step
        return out

    # -- point lookup ------------------------------------------------------

    def index_of(self, x) -> int:
        """Index of the represented point ``x``; raises :class:`DomainError`."""
        if self.kind == FINITE and isinstance(x, str):
            try:
                return self.labels.index(x)
            except ValueError:
                raise DomainError(f"{x!r} is not a point of this finite space") from None
        return int(self.indices_of(np.asarray([x]))[0])

    def indices_of(self, xs) -> np.ndarray:
        if self.kind == FINITE and any(isinstance(x, str) for x in np.ravel(np.asarray(xs, dtype=object))):
            return np.array([self.index_of(x) for x in np.ravel(np.asarray(xs, dtype=object))], dtype=np.int64)
        xs = np.asarray(xs, dtype=float)
        if self.kind == GRID:
            pos = (xs - self.coords[0]) / self.spacing
            idx = np.rint(pos)
            bad = (np.abs(pos - idx) > 1e-6) | (idx < 0) | (idx >= self.size)
        else:
            idx = np.rint(xs)
            bad = (np.abs(xs - idx) > 1e-9) | (idx < 0) | (idx >= self.size)
        if np.any(bad):
            raise DomainError(f"point {xs[bad][0]!r} is not represented in this {self.kind} space")
        return idx.astype(np.int64)

    def nearest_indices(self, xs) -> np.ndarray:
        """Nearest represented point, used for off-grid diffusion states."""
        xs = np.asarray(xs, dtype=float)
        if self.kind == GRID:
            idx = np.rint((xs - self.coords[0]) / self.spacing)
        else:
            idx = np.rint(xs)
        return np.clip(idx, 0, self.size - 1).astype(np.int64)

    def contains(self, x) -> bool:
        try:
            self._check_point(x)
        except DomainError:
            return False
        return True

    def _check_point(self, x) -> float:
        if self.kind == FINITE and isinstance(x, str):
            return float(self.index_of(x))
        if self.kind == GRID:
            # the grid represents the whole segment [-L, L] for metric purposes
            xf = float(x)
            if not (math.isfinite(xf) and -self.half_width - 1e-12 <= xf <= self.half_width + 1e-12):
                raise DomainError(f"point {x!r} lies outside [-{self.half_width}, {self.half_width}]")
            return xf
        return float(self.index_of(x))

    def metric(self, xs, ys) -> np.ndarray:
        """Vectorised distance between coordinate arrays (no membership check)."""
        diff = np.abs(np.asarray(xs, dtype=float) - np.asarray(ys, dtype=float))
        if self.kind == FINITE:
            return (diff > 0).astype(float)
        return diff

    def level_of(self, xs) -> np.ndarray:
        """Smallest ``n`` with ``x`` in ``K_n`` for coordinates ``xs``."""
        xs = np.asarray(xs, dtype=float)
        if self.kind == FINITE:
            return np.ones(xs.shape, dtype=np.int64)
        return np.maximum(np.ceil(np.abs(xs) / self.exhaustion_step - 1e-9), 1).astype(np.int64)


@dataclass(frozen=True, eq=False)
class CompactSet:
    """A finite set of represented points, optionally tagged as ``K_n``."""

    space: StateSpace
    mask: np.ndarray
    index: int | None = None

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.space.size,):
            raise ValidationError("compact set mask does not match the space")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_points(cls, space: StateSpace, points) -> "CompactSet":
        mask = np.zeros(space.size, dtype=bool)
        mask[space.indices_of(points)] = True
        return cls(space, mask)

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def points(self) -> np.ndarray:
        return self.space.coords[self.mask]

    def __len__(self):
        return int(self.mask.sum())

    def __contains__(self, x) -> bool:
        try:
            return bool(self.mask[self.space.index_of(x)])
        except DomainError:
            return False

    def issubset(self, other: "CompactSet") -> bool:
        return other.space is self.space and not np.any(self.mask & ~other.mask)

    def __repr__(self):
        tag = f"K_{self.index}" if self.index is not None else "K"
        return f"<CompactSet {tag}: {len(self)} points of {self.space.kind}>"


def exhaustion_member(space: StateSpace, n: int) -> CompactSet:
    """``K_n`` of the declared exhaustion; saturates at the whole space."""
    if n < 1:
        raise DomainError(f"exhaustion index must be >= 1, got {n}")
    return CompactSet(space, space.levels <= n, index=int(n))


def distance(space: StateSpace, x, y) -> float:
    return float(space.metric(space._check_point(x), space._check_point(y)))
