"""Built-in test functions, addressable by name from campaign configs."""

from __future__ import annotations

import numpy as np

from scle.errors import ValidationError
from scle.function_space import TestFunction
from scle.state_space import StateSpace


def constant(space: StateSpace, c: float = 1.0) -> TestFunction:
    c = float(c)
    return TestFunction(space, abs(c), rule=lambda x: np.full(np.shape(x), c), vanishing=c == 0, name=f"const({c:g})")


def indicator(space: StateSpace, points) -> TestFunction:
    vals = np.zeros(space.size)
    vals[space.indices_of(np.atleast_1d(points))] = 1.0
    van = not np.any(vals[space.edge_mask])
    return TestFunction.from_values(space, vals, bound=1.0, vanishing=van, name="indicator")


def linear(space: StateSpace, slope: float = 1.0, clip: float = 1.0) -> TestFunction:
    """``slope * x`` clipped to ``[-clip, clip]``."""
    return TestFunction(
        space, abs(clip), rule=lambda x: np.clip(slope * np.asarray(x), -clip, clip), name=f"linear({slope:g},{clip:g})"
    )


def square(space: StateSpace, clip: float) -> TestFunction:
    """``x**2`` clipped at ``clip``."""
    return TestFunction(space, clip, rule=lambda x: np.minimum(np.asarray(x) ** 2, clip), name=f"square({clip:g})")


def sin_square(space: StateSpace) -> TestFunction:
    return TestFunction(space, 1.0, rule=lambda x: np.sin(np.asarray(x) ** 2), name="sin_square")


def gaussian(space: StateSpace, rate: float = 1.0, amplitude: float = 1.0, center: float = 0.0) -> TestFunction:
    """``amplitude * exp(-rate (x - center)^2)``."""
    return TestFunction(
        space,
        abs(amplitude),
        rule=lambda x: amplitude * np.exp(-rate * (np.asarray(x) - center) ** 2),
        vanishing=True,
        name=f"gaussian({rate:g},{amplitude:g})",
    )


def peaked_gaussian(space: StateSpace, n: float) -> TestFunction:
    """``n exp(-n x^2)``: unbounded in norm as ``n`` grows."""
    return gaussian(space, rate=n, amplitude=n)


def abs_ramp(space: StateSpace, n: float) -> TestFunction:
    """``min(|x|/n, 1)``."""
    return TestFunction(space, 1.0, rule=lambda x: np.minimum(np.abs(np.asarray(x)) / n, 1.0), name=f"abs_ramp({n:g})")


def abs_clip(space: StateSpace, clip: float) -> TestFunction:
    """``min(|x|, clip)``."""
    return TestFunction(space, clip, rule=lambda x: np.minimum(np.abs(np.asarray(x)), clip), name=f"abs_clip({clip:g})")


def exp_decay(space: StateSpace, rate: float = 1.0) -> TestFunction:
    """``exp(-rate |x|)``; a smoothed indicator of the origin."""
    return TestFunction(space, 1.0, rule=lambda x: np.exp(-rate * np.abs(np.asarray(x))), vanishing=True,
                        name=f"exp_decay({rate:g})")


def cos_inverse(space: StateSpace) -> TestFunction:
    """``cos(1/(1+x))`` on ``x >= 0``: tends to 1 at infinity, so not in C_0."""
    if np.any(space.coords < 0):
        raise ValidationError("cos_inverse is defined on non-negative coordinates only")
    return TestFunction(space, 1.0, rule=lambda x: np.cos(1.0 / (1.0 + np.asarray(x))), name="cos_inverse")


def lorentz_even(space: StateSpace) -> TestFunction:
    """``1/(1+x^2)``."""
    return TestFunction(space, 1.0, rule=lambda x: 1.0 / (1.0 + np.asarray(x) ** 2), vanishing=True, name="lorentz_even")


def lorentz_odd(space: StateSpace) -> TestFunction:
    """``x/(1+x^2)``, bounded by 1/2."""
    return TestFunction(space, 0.5, rule=lambda x: np.asarray(x) / (1.0 + np.asarray(x) ** 2), vanishing=True,
                        name="lorentz_odd")


def vector(space: StateSpace, values) -> TestFunction:
    """Explicit values on every represented point (finite spaces)."""
    return TestFunction.from_values(space, values, name="vector")


CATALOG = {
    "constant": constant,
    "indicator": indicator,
    "linear": linear,
    "square": square,
    "sin_square": sin_square,
    "gaussian": gaussian,
    "peaked_gaussian": peaked_gaussian,
    "abs_ramp": abs_ramp,
    "abs_clip": abs_clip,
    "exp_decay": exp_decay,
    "cos_inverse": cos_inverse,
    "lorentz_even": lorentz_even,
    "lorentz_odd": lorentz_odd,
    "vector": vector,
}


def build(space: StateSpace, spec) -> TestFunction:
    """Build a catalog function from ``"name"`` or ``{"name": ..., **params}``."""
    if isinstance(spec, str):
        name, params = spec, {}
    else:
        params = dict(spec)
        name = params.pop("name", None)
    if name not in CATALOG:
        raise ValidationError(f"unknown catalog function {name!r}; known: {sorted(CATALOG)}")
    try:
        return CATALOG[name](space, **params)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {name!r}: {exc}") from None
