"""Cadlag paths, exact-law samplers and path functionals.

Seeding scheme
--------------
Ensembles are simulated in blocks of ``block_size`` consecutive paths. Block
``b`` draws from ``PCG64(SeedSequence(master_seed, spawn_key=(b,)))``, so a
block's paths depend only on ``(model, x0 or initial law, T, master_seed,
block_size, b)``. Blocks can run in any order or in parallel and the
assembled ensemble is identical bit for bit.

Chain paths are stored as jump lists ``(t_i, x_i)`` with ``t_0 = 0``;
diffusion paths are Euler-Maruyama samples on a uniform time grid and carry
an ``O(dt)`` discretisation error in every functional computed from them.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from scle.errors import DomainError, ValidationError
from scle.function_space import TestFunction
from scle.generator import CTMC, DIFFUSION, GeneratorGraph
from scle.measure import SignedMeasure
from scle.state_space import StateSpace

JUMP = "jump"
GRID_PATH = "grid"
BLOCK_SIZE = 4096


def block_rng(master_seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(block,))))


def _path_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


# -- single paths -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CadlagPath:
    """A right-continuous path with left limits on ``[0, horizon]``.

    ``states`` are point coordinates. For jump lists ``times`` are the jump
    times (``times[0] == 0``); for grid paths they are ``k * dt``.
    """

    space: StateSpace
    times: np.ndarray
    states: np.ndarray
    horizon: float
    kind: str = JUMP
    seed: object = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        x = np.asarray(self.states, dtype=float)
        if t.shape != x.shape or t.size == 0:
            raise ValidationError("times and states must be non-empty and of equal length")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0) or t[-1] > self.horizon:
            raise ValidationError("times must start at 0, increase strictly and stay within the horizon")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", x)

    def value_at(self, t: float) -> float:
        if t < 0 or t > self.horizon:
            raise DomainError(f"time {t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.times, t + _eps(t), side="right")) - 1
        return float(self.states[k])

    def restrict(self, t: float) -> "CadlagPath":
        """The path observed up to time ``t``."""
        keep = self.times <= t
        return CadlagPath(self.space, self.times[keep], self.states[keep], t, self.kind, self.seed)

    @property
    def n_jumps(self) -> int:
        return self.times.size - 1


def _eps(t: float) -> float:
    # grid times k*dt are built by multiplication; absorb representation error
    return 1e-12 * max(1.0, abs(t))


def path_integral(path: CadlagPath, g: TestFunction, t: float) -> float:
    """``int_0^t g(eta(s)) ds``; exact on jump lists, left-endpoint rule on grids."""
    if t < 0 or t > path.horizon + _eps(path.horizon):
        raise DomainError(f"time {t} outside [0, {path.horizon}]")
    ends = np.append(path.times[1:], path.horizon)
    lengths = np.clip(np.minimum(ends, t) - path.times, 0.0, None)
    return float(np.dot(g(path.states), lengths))


def modulus_event(path: CadlagPath, delta: float, eps_prime: float) -> bool:
    """Whether ``sup_{s <= delta} d(eta(0), eta(s)) < eps_prime``."""
    if delta > path.horizon + _eps(path.horizon):
        raise DomainError("delta exceeds the path horizon")
    window = path.states[path.times <= delta + _eps(delta)]
    return bool(np.max(path.space.metric(window, path.states[0])) < eps_prime)


# -- samplers -----------------------------------------------------------------------


@dataclass(frozen=True)
class _JumpTable:
    """Flattened cumulative jump distributions for fast vectorised sampling."""

    rates: np.ndarray
    keys: np.ndarray
    targets: np.ndarray

    @classmethod
    def from_generator(cls, A: GeneratorGraph) -> "_JumpTable":
        if A.kind != CTMC or A.q is None:
            raise ValidationError("chain sampling needs a rate-matrix generator")
        if not A.conservative:
            raise ValidationError("cannot sample paths of a non-conservative generator")
        Q = A.q.rates
        rates = -np.diag(Q).copy()
        keys, targets = [], []
        for i in range(Q.shape[0]):
            if rates[i] <= 0:
                rates[i] = 0.0
                continue
            row = Q[i].copy()
            row[i] = 0.0
            js = np.flatnonzero(row > 0)
            c = np.cumsum(row[js]) / rates[i]
            c[-1] = 1.0
            keys.append(i + c)
            targets.append(js)
        keys = np.concatenate(keys) if keys else np.zeros(0)
        targets = np.concatenate(targets) if targets else np.zeros(0, dtype=np.int64)
        return cls(rates, keys, targets)

    def jump(self, states: np.ndarray, u: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.keys, states + u, side="right")
        return self.targets[pos]


def _ctmc_block(table: _JumpTable, x0: np.ndarray, T: float, rng: np.random.Generator):
    """Jump lists for paths started at state indices ``x0``; returns flat event arrays."""
    n = x0.size
    cur = x0.astype(np.int64).copy()
    now = np.zeros(n)
    pids, ts, xs = [np.arange(n)], [now.copy()], [cur.copy()]
    alive = np.arange(n)
    while alive.size:
        r = table.rates[cur[alive]]
        alive = alive[r > 0]
        r = r[r > 0]
        hold = rng.exponential(size=alive.size) / r
        t_next = now[alive] + hold
        within = t_next <= T
        alive, t_next = alive[within], t_next[within]
        u = rng.random(alive.size)
        cur[alive] = table.jump(cur[alive], u)
        now[alive] = t_next
        pids.append(alive.copy())
        ts.append(t_next)
        xs.append(cur[alive].copy())
    pid = np.concatenate(pids)
    t = np.concatenate(ts)
    x = np.concatenate(xs)
    order = np.lexsort((t, pid))
    counts = np.bincount(pid, minlength=n)
    return counts, t[order], x[order]


def _draw_initial(space, x0, initial_law, n, rng):
    if initial_law is not None:
        if not initial_law.is_probability(1e-9):
            raise ValidationError("initial law must be a probability measure")
        p = initial_law.weights / initial_law.weights.sum()
        return initial_law.support[rng.choice(p.size, size=n, p=p)]
    return np.full(n, space.index_of(x0), dtype=np.int64)


def _reflect(x: np.ndarray, L: float) -> np.ndarray:
    for _ in range(2):
        x = np.where(x > L, 2 * L - x, x)
        x = np.where(x < -L, -2 * L - x, x)
    return np.clip(x, -L, L)


def _diffusion_block(A: GeneratorGraph, x0: np.ndarray, T: float, dt: float, rng, record=True):
    steps = _n_steps(T, dt)
    L = A.space.half_width
    x = x0.astype(float).copy()
    out = np.empty((x.size, steps + 1)) if record else None
    if record:
        out[:, 0] = x
    sqdt = np.sqrt(dt)
    for k in range(steps):
        b = np.broadcast_to(A.drift(x), x.shape)
        s = np.sqrt(np.broadcast_to(A.diffusion(x), x.shape))
        x = _reflect(x + b * dt + s * sqdt * rng.standard_normal(x.size), L)
        if record:
            out[:, k + 1] = x
    return out if record else x


def _n_steps(T: float, dt: float) -> int:
    if dt <= 0:
        raise ValidationError("time step must be positive")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValidationError(f"dt={dt} does not divide T={T}")
    return steps


def simulate_ctmc(A: GeneratorGraph, x0, T: float, seed) -> CadlagPath:
    """One exact-law chain path: exponential holding times, jumps ``Q_xy / -Q_xx``."""
    table = _JumpTable.from_generator(A)
    counts, t, x = _ctmc_block(table, np.array([A.space.index_of(x0)]), T, _path_rng(seed))
    return CadlagPath(A.space, t, A.space.coords[x], T, JUMP, seed)


def simulate_diffusion(A: GeneratorGraph, x0, T: float, dt: float, seed) -> CadlagPath:
    """One Euler-Maruyama path, reflected at the ends of the grid window."""
    if A.kind != DIFFUSION:
        raise ValidationError("diffusion sampling needs a diffusion generator")
    steps = _n_steps(T, dt)
    A.space._check_point(x0)
    values = _diffusion_block(A, np.array([float(x0)]), T, dt, _path_rng(seed))[0]
    return CadlagPath(A.space, np.arange(steps + 1) * dt, values, T, GRID_PATH, seed)


# -- ensembles ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Independent paths of one model with a common horizon.

    Jump-list ensembles store all events flat (``offsets`` delimit paths);
    grid ensembles store an ``(N, steps + 1)`` array of states.
    """

    space: StateSpace
    kind: str
    horizon: float
    times: np.ndarray
    states: np.ndarray
    offsets: np.ndarray | None
    master_seed: int | None
    initial_law: SignedMeasure | None = None
    model: dict = field(default_factory=dict)
    block_size: int = BLOCK_SIZE

    def __len__(self) -> int:
        return self.offsets.size - 1 if self.kind == JUMP else self.states.shape[0]

    @property
    def n_paths(self) -> int:
        return len(self)

    def __getitem__(self, i: int) -> CadlagPath:
        if self.kind == JUMP:
            a, b = self.offsets[i], self.offsets[i + 1]
            return CadlagPath(self.space, self.times[a:b], self.states[a:b], self.horizon, JUMP, (self.master_seed, i))
        return CadlagPath(self.space, self.times, self.states[i], self.horizon, GRID_PATH, (self.master_seed, i))

    def paths(self):
        return (self[i] for i in range(len(self)))

    # -- vectorised functionals ------------------------------------------------------

    def _check_time(self, t: float):
        if t < 0 or t > self.horizon + _eps(self.horizon):
            raise DomainError(f"time {t} outside [0, {self.horizon}]")

    @property
    def initial_values(self) -> np.ndarray:
        if self.kind == JUMP:
            return self.states[self.offsets[:-1]]
        return self.states[:, 0]

    def values_at(self, t: float) -> np.ndarray:
        """``eta(t)`` for every path (right-continuous)."""
        self._check_time(t)
        if self.kind == JUMP:
            upto = (self.times <= t + _eps(t)).astype(np.int64)
            count = np.add.reduceat(upto, self.offsets[:-1])
            return self.states[self.offsets[:-1] + count - 1]
        k = int(np.floor(t / self._dt + 1e-9))
        return self.states[:, min(k, self.states.shape[1] - 1)]

    @property
    def _dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else self.horizon

    def _segment_ends(self) -> np.ndarray:
        ends = np.empty_like(self.times)
        ends[:-1] = self.times[1:]
        ends[self.offsets[1:] - 1] = self.horizon
        return ends

    def integral(self, g: TestFunction, t: float) -> np.ndarray:
        """``int_0^t g(eta(s)) ds`` for every path."""
        self._check_time(t)
        if self.kind == JUMP:
            lengths = np.clip(np.minimum(self._segment_ends(), t) - self.times, 0.0, None)
            return np.add.reduceat(g(self.states) * lengths, self.offsets[:-1])
        ends = np.append(self.times[1:], self.horizon)
        lengths = np.clip(np.minimum(ends, t) - self.times, 0.0, None)
        return g(self.states) @ lengths

    def max_level_before(self, T: float) -> np.ndarray:
        """Largest exhaustion level visited on ``[0, T)`` by each path."""
        self._check_time(T)
        levels = self.space.level_of(self.states)
        if self.kind == JUMP:
            lev = np.where(self.times < T, levels, 0)
            return np.maximum.reduceat(lev, self.offsets[:-1])
        return levels[:, self.times < T].max(axis=1)

    def max_distance_from_start(self, delta: float) -> np.ndarray:
        """``sup_{s <= delta} d(eta(0), eta(s))`` for every path."""
        self._check_time(delta)
        if self.kind == JUMP:
            starts = np.repeat(self.initial_values, np.diff(self.offsets))
            d = np.where(self.times <= delta + _eps(delta), self.space.metric(self.states, starts), 0.0)
            return np.maximum.reduceat(d, self.offsets[:-1])
        cols = self.times <= delta + _eps(delta)
        return self.space.metric(self.states[:, cols], self.states[:, :1]).max(axis=1)

    # -- CSV -------------------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["path_id", "time", "state"])
        for i in range(len(self)):
            p = self[i]
            for t, x in zip(p.times, p.states):
                w.writerow([i, repr(float(t)), repr(float(x))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, space: StateSpace, text: str, horizon: float, kind: str = JUMP) -> "PathEnsemble":
        rows = np.array([(int(r["path_id"]), float(r["time"]), float(r["state"]))
                         for r in csv.DictReader(io.StringIO(text))])
        pid = rows[:, 0].astype(np.int64)
        order = np.lexsort((rows[:, 1], pid))
        pid, t, x = pid[order], rows[order, 1], rows[order, 2]
        counts = np.bincount(pid)
        if kind == JUMP:
            offsets = np.concatenate([[0], np.cumsum(counts)])
            return cls(space, JUMP, horizon, t, x, offsets, None)
        width = int(counts[0])
        return cls(space, GRID_PATH, horizon, t[:width], x.reshape(-1, width), None, None)


def _model_descriptor(A: GeneratorGraph, extra: dict) -> dict:
    desc = {"kind": A.kind, "space": A.space.describe(), "notes": list(A.notes)}
    desc.update(extra)
    return desc


def simulate_ensemble(
    A: GeneratorGraph,
    T: float,
    n_paths: int,
    seed: int,
    x0=None,
    initial_law: SignedMeasure | None = None,
    dt: float | None = None,
    jobs: int = 1,
    block_size: int = BLOCK_SIZE,
) -> PathEnsemble:
    """Simulate ``n_paths`` independent paths from ``x0`` or from ``initial_law``."""
    if (x0 is None) == (initial_law is None):
        raise ValidationError("give exactly one of x0 or initial_law")
    if n_paths < 1:
        raise ValidationError("need at least one path")
    if initial_law is None:
        initial_law = SignedMeasure.dirac(A.space, x0)
    blocks = [(b, min(block_size, n_paths - b * block_size)) for b in range(-(-n_paths // block_size))]

    if A.kind == CTMC:
        table = _JumpTable.from_generator(A)

        def run(block):
            b, n = block
            rng = block_rng(seed, b)
            starts = _draw_initial(A.space, None, initial_law, n, rng)
            return _ctmc_block(table, starts, T, rng)

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            parts = list(pool.map(run, blocks))
        counts = np.concatenate([p[0] for p in parts])
        offsets = np.concatenate([[0], np.cumsum(counts)])
        times = np.concatenate([p[1] for p in parts])
        states = A.space.coords[np.concatenate([p[2] for p in parts])]
        return PathEnsemble(A.space, JUMP, T, times, states, offsets, seed, initial_law,
                            _model_descriptor(A, {}), block_size)

    if A.kind == DIFFUSION:
        if dt is None:
            raise ValidationError("diffusion ensembles need dt")
        steps = _n_steps(T, dt)

        def run(block):
            b, n = block
            rng = block_rng(seed, b)
            starts = A.space.coords[_draw_initial(A.space, None, initial_law, n, rng)]
            return _diffusion_block(A, starts, T, dt, rng)

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            parts = list(pool.map(run, blocks))
        return PathEnsemble(A.space, GRID_PATH, T, np.arange(steps + 1) * dt, np.concatenate(parts), None, seed,
                            initial_law, _model_descriptor(A, {"dt": dt}), block_size)
    raise ValidationError(f"no sampler for generator kind {A.kind!r}")


def sample_terminal(A: GeneratorGraph, x0, t: float, n_paths: int, seed: int, dt: float | None = None,
                    block_size: int = BLOCK_SIZE) -> np.ndarray:
    """Coordinates of ``eta(t)`` for ``n_paths`` paths from ``x0`` (no paths kept)."""
    out = []
    start = A.space.index_of(x0)
    if A.kind == CTMC:
        table = _JumpTable.from_generator(A)
    for b in range(-(-n_paths // block_size)):
        n = min(block_size, n_paths - b * block_size)
        rng = block_rng(seed, b)
        starts = np.full(n, start, dtype=np.int64)
        if A.kind == CTMC:
            counts, _, x = _ctmc_block(table, starts, t, rng)
            out.append(A.space.coords[x[np.cumsum(counts) - 1]])
        elif A.kind == DIFFUSION:
            if t == 0:
                out.append(A.space.coords[starts])
            else:
                out.append(_diffusion_block(A, A.space.coords[starts], t, dt, rng, record=False))
        else:
            raise ValidationError(f"no sampler for generator kind {A.kind!r}")
    return np.concatenate(out)
