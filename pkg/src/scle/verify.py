"""Monte Carlo checks of the martingale problem and of compact containment.

All probabilities come with Wilson intervals; means with normal bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scle import catalog
from scle.errors import DomainError, HorizonFailure, PreconditionError, ValidationError
from scle.function_space import TestFunction, ensure_compact
from scle.generator import GeneratorGraph, apply
from scle.path_sim import GRID_PATH, PathEnsemble
from scle.state_space import CompactSet, exhaustion_member
from scle.stats import EstimateWithBand, wilson_band, z_value

MIN_PATHS = 30


@dataclass
class MartingaleStatistic:
    """``M_f(t) = f(eta(t)) - f(eta(0)) - int_0^t Af(eta(s)) ds`` per path.

    ``values[i, k]`` is path ``i`` at ``times[k]``. Jump-list ensembles give
    the integral exactly; grid ensembles use the left-endpoint rule.
    """

    times: list
    values: np.ndarray = field(repr=False)
    f_name: str
    af_name: str
    exact: bool

    @classmethod
    def compute(cls, ensemble: PathEnsemble, f: TestFunction, A: GeneratorGraph, times) -> "MartingaleStatistic":
        if f.space is not ensemble.space or A.space is not ensemble.space:
            raise DomainError("ensemble, function and generator must share a space")
        Af = apply(A, f)
        f0 = f(ensemble.initial_values)
        cols = [f(ensemble.values_at(t)) - f0 - ensemble.integral(Af, t) for t in times]
        vals = np.stack(cols, axis=1) if cols else np.zeros((len(ensemble), 0))
        return cls(list(times), vals, f.name, Af.name, ensemble.kind != GRID_PATH)


@dataclass
class MeanVerdict:
    t: float
    passed: bool
    mean: float
    sd: float
    threshold: float
    bias_allowance: float
    n: int

    def as_dict(self):
        return {"t": self.t, "passed": self.passed, "mean": self.mean, "sd": self.sd,
                "threshold": self.threshold, "bias_allowance": self.bias_allowance, "n": self.n}


@dataclass
class MartingaleReport:
    verdicts: list
    alpha: float
    z: float
    statistic: MartingaleStatistic = field(repr=False)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def failures(self) -> list:
        return [v.t if isinstance(v, MeanVerdict) else v.name for v in self.verdicts if not v.passed]

    def as_dict(self):
        return {"passed": self.passed, "alpha": self.alpha, "z": self.z,
                "verdicts": [v.as_dict() for v in self.verdicts], "notes": self.notes}


def _gate(ensemble: PathEnsemble):
    if len(ensemble) < MIN_PATHS:
        raise ValidationError(f"need at least {MIN_PATHS} paths for the normal approximation, got {len(ensemble)}")


def _check_times(ensemble: PathEnsemble, times):
    for t in times:
        if t < 0 or t > ensemble.horizon * (1 + 1e-12):
            raise DomainError(f"time {t} outside [0, {ensemble.horizon}]")


def _bias_rate(ensemble: PathEnsemble, f: TestFunction, A: GeneratorGraph) -> float:
    """Heuristic drift of the left-endpoint integral per unit time on grid paths.

    ``||(Af)'|| * sigma * sqrt(dt)``; zero for jump-list paths.
    """
    if ensemble.kind != GRID_PATH:
        return 0.0
    x = A.space.coords
    dAf = np.gradient(apply(A, f).values, x)
    sigma = np.sqrt(np.max(A.diffusion(x))) if A.diffusion is not None else 1.0
    dt = float(ensemble.times[1] - ensemble.times[0])
    return float(np.max(np.abs(dAf)) * sigma * np.sqrt(dt))


def _z_test(samples: np.ndarray, z: float):
    n = samples.size
    mean = float(samples.mean())
    sd = float(samples.std(ddof=1))
    return mean, sd, z * sd / np.sqrt(n)


def martingale_mean_test(ensemble: PathEnsemble, f: TestFunction, A: GeneratorGraph, times,
                         alpha: float = 0.01) -> MartingaleReport:
    """Per time ``t``: reject iff ``|mean M_f(t)| > z_{1-alpha/2} sd / sqrt(N)``."""
    _gate(ensemble)
    _check_times(ensemble, times)
    stat = MartingaleStatistic.compute(ensemble, f, A, times)
    z = z_value(1 - alpha)
    rate = _bias_rate(ensemble, f, A)
    verdicts = []
    for k, t in enumerate(times):
        mean, sd, thr = _z_test(stat.values[:, k], z)
        bias = rate * t
        verdicts.append(MeanVerdict(float(t), abs(mean) <= thr + bias, mean, sd, thr, bias, len(ensemble)))
    notes = [] if rate == 0 else [f"grid paths: threshold inflated by {rate:.3g} per unit time (discretisation bias)"]
    return MartingaleReport(verdicts, alpha, z, stat, notes)


@dataclass
class IncrementVerdict:
    name: str
    passed: bool
    mean: float
    sd: float
    threshold: float

    def as_dict(self):
        return {"g": self.name, "passed": self.passed, "mean": self.mean, "sd": self.sd, "threshold": self.threshold}


def default_dictionary(space, n_cells: int | None = None) -> list:
    """The constant 1 plus indicators of the exhaustion shells ``K_m \\ K_{m-1}``."""
    out = [catalog.constant(space)]
    n_cells = space.saturation_index if n_cells is None else min(n_cells, space.saturation_index)
    for m in range(1, n_cells + 1):
        shell = space.levels == m
        if shell.any():
            g = TestFunction.from_values(space, shell.astype(float), bound=1.0, name=f"shell({m})")
            out.append(g)
    return out


def martingale_increment_test(ensemble: PathEnsemble, f: TestFunction, A: GeneratorGraph, s: float, t: float,
                              dictionary=None, alpha: float = 0.01) -> MartingaleReport:
    """Weak form of the martingale property: ``E[(M_f(t) - M_f(s)) g(eta(s))] = 0`` for each ``g``."""
    _gate(ensemble)
    if not s < t:
        raise DomainError(f"need s < t, got s={s}, t={t}")
    _check_times(ensemble, [s, t])
    dictionary = default_dictionary(ensemble.space) if dictionary is None else list(dictionary)
    if not any(np.all(g.values == 1.0) for g in dictionary):
        raise ValidationError("the dictionary must include the constant 1")
    stat = MartingaleStatistic.compute(ensemble, f, A, [s, t])
    inc = stat.values[:, 1] - stat.values[:, 0]
    at_s = ensemble.values_at(s)
    z = z_value(1 - alpha)
    bias = _bias_rate(ensemble, f, A) * (t - s)
    verdicts = []
    for g in dictionary:
        gs = g(at_s)
        prod = inc * gs
        mean, sd, thr = _z_test(prod, z)
        allowance = bias * float(np.max(np.abs(g.values)))
        verdicts.append(IncrementVerdict(g.name, abs(mean) <= thr + allowance, mean, sd, thr + allowance))
    return MartingaleReport(verdicts, alpha, z, stat)


# -- compact containment ------------------------------------------------------------


@dataclass
class ContainmentCertificate:
    """Empirical evidence for ``P[eta(t) in K' for t < T, eta(0) in K] >= (1 - eps) P[eta(0) in K]``.

    ``left`` is the Wilson interval for the left side at the certified
    ``K' = K_m``; ``right`` is ``nu(K)``, exact because the initial law is
    atomic. ``lower_bounds[m - 1]`` is the Wilson lower bound at ``K_m``.
    """

    K: CompactSet
    K_prime: CompactSet
    index: int
    eps: float
    T: float
    left: EstimateWithBand
    right: float
    n_paths: int
    lower_bounds: list
    monotone: bool
    notes: list = field(default_factory=list)

    def as_dict(self):
        return {"index": self.index, "K_prime_size": len(self.K_prime), "eps": self.eps, "T": self.T,
                "left": self.left.as_dict(), "right": self.right, "threshold": (1 - self.eps) * self.right,
                "n_paths": self.n_paths, "lower_bounds": self.lower_bounds, "monotone": self.monotone,
                "notes": self.notes}

    def curve_rows(self):
        return [{"m": m + 1, "wilson_lower": b} for m, b in enumerate(self.lower_bounds)]


def containment_search(ensemble: PathEnsemble, K, eps: float, T: float, n_max: int | None = None,
                       level: float = 0.99) -> ContainmentCertificate:
    """Smallest exhaustion member ``K_m`` whose Wilson lower bound clears ``(1 - eps) nu(K)``."""
    space = ensemble.space
    K = ensure_compact(space, K)
    if not 0 < eps <= 1:
        raise DomainError(f"eps must lie in (0, 1], got {eps}")
    if T > ensemble.horizon * (1 + 1e-12):
        raise PreconditionError(f"ensemble horizon {ensemble.horizon} is shorter than T={T}")
    nu = ensemble.initial_law
    if nu is not None and nu.mass_of(~K.mask) != 0:
        raise PreconditionError("the initial law charges points outside K")
    right = 1.0 if nu is None else nu.mass_of(K.mask)
    n = len(ensemble)
    started = K.mask[space.indices_of(ensemble.initial_values)]
    top = ensemble.max_level_before(T)
    n_max = space.saturation_index if n_max is None else min(n_max, space.saturation_index)
    threshold = (1 - eps) * right
    lower = []
    found = None
    for m in range(1, n_max + 1):
        hits = int(np.sum(started & (top <= m)))
        band = wilson_band(hits, n, level)
        lower.append(band.lower)
        if found is None and band.lower >= threshold:
            found = (m, band)
    monotone = all(b >= a for a, b in zip(lower, lower[1:]))
    if found is None:
        raise HorizonFailure(f"no K_m with m <= {n_max} certifies at eps={eps}", best=max(lower))
    m, band = found
    notes = ["one simulated solution from the given initial law stands in for every solution"]
    return ContainmentCertificate(K, exhaustion_member(space, m), m, eps, T, band, right, n, lower, monotone, notes)


def modulus_probability(ensemble: PathEnsemble, delta: float, eps_prime: float,
                        level: float = 0.99) -> EstimateWithBand:
    """Fraction of paths with ``sup_{s <= delta} d(eta(0), eta(s)) < eps_prime``, Wilson band."""
    dist = ensemble.max_distance_from_start(delta)
    return wilson_band(int(np.sum(dist < eps_prime)), len(ensemble), level)
