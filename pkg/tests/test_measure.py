import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scle import catalog
from scle.errors import DomainError, ValidationError
from scle.function_space import TestFunction, sup_norm
from scle.measure import (
    SignedMeasure,
    hahn_jordan,
    pair,
    tightness_test,
    vague_convergence_test,
    weak_convergence_test,
)
from scle.state_space import StateSpace

LINE = StateSpace.countable(60)


def test_pair_examples(two_state):
    mu = SignedMeasure.from_atoms(two_state, ["a", "b"], [0.75, 0.25])
    assert pair(catalog.constant(two_state, 1.0), mu) == 1.0
    assert pair(catalog.vector(two_state, [1.0, 0.0]), mu) == 0.75
    nu = SignedMeasure.from_atoms(LINE, [0, 1], [3.0, -2.0])
    assert pair(catalog.linear(LINE, 1.0, 100.0), nu) == -2.0


def test_pair_space_mismatch(two_state):
    with pytest.raises(DomainError):
        pair(catalog.constant(LINE), SignedMeasure.dirac(two_state, "a"))


def test_atoms_are_merged_and_pruned():
    mu = SignedMeasure.from_atoms(LINE, [3, 1, 3, 2], [1.0, 0.5, 1.0, 0.0])
    assert list(mu.support) == [1, 3] and list(mu.weights) == [0.5, 2.0]
    assert mu.total_variation == 2.5


def test_hahn_jordan_examples():
    hj = hahn_jordan(SignedMeasure.from_atoms(LINE, [0, 1], [3.0, -2.0]))
    assert (hj.c_plus, hj.c_minus, hj.total_variation) == (3.0, 2.0, 5.0)
    assert hj.mu_plus.equals(SignedMeasure.dirac(LINE, 0))
    assert hj.mu_minus.equals(SignedMeasure.dirac(LINE, 1))

    p = SignedMeasure.from_atoms(LINE, [2, 5], [0.25, 0.75])
    hj = hahn_jordan(p)
    assert hj.c_plus == 1.0 and hj.c_minus == 0.0 and hj.mu_plus.equals(p)

    hj = hahn_jordan(SignedMeasure.zero(LINE))
    assert hj.c_plus == hj.c_minus == 0.0
    assert hj.mu_plus.support.size == hj.mu_minus.support.size == 0


def _random_measure(rng, space, k):
    idx = rng.choice(space.size, size=k, replace=False)
    return SignedMeasure(space, idx, rng.normal(size=k) * rng.choice([1e-3, 1.0, 1e3]))


def test_hahn_jordan_exact_on_random_measures(rng):
    for _ in range(1000):
        mu = _random_measure(rng, LINE, int(rng.integers(1, 20)))
        hj = hahn_jordan(mu)
        assert hj.reconstruct().equals(mu)
        assert not set(hj.mu_plus.support) & set(hj.mu_minus.support)
        assert hj.total_variation == pytest.approx(mu.total_variation, rel=1e-14)
        for part, c in ((hj.mu_plus, hj.c_plus), (hj.mu_minus, hj.c_minus)):
            if c > 0:
                assert part.is_probability(1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_pair_bilinear_and_bounded(seed, a, b):
    rng = np.random.default_rng(seed)
    f = TestFunction.from_values(LINE, rng.normal(size=LINE.size))
    g = TestFunction.from_values(LINE, rng.normal(size=LINE.size))
    mu, nu = _random_measure(rng, LINE, 8), _random_measure(rng, LINE, 5)
    lhs = pair(a * f + b * g, mu)
    assert lhs == pytest.approx(a * pair(f, mu) + b * pair(g, mu), abs=1e-9 * (1 + abs(lhs)))
    assert pair(f, mu + nu) == pytest.approx(pair(f, mu) + pair(f, nu), abs=1e-9 * (1 + abs(lhs)))
    assert abs(pair(f, mu)) <= sup_norm(f) * mu.total_variation * (1 + 1e-12)


def _lipschitz_dictionary(space):
    return [catalog.constant(space, 1.0), catalog.linear(space, 1.0, 5.0), catalog.gaussian(space),
            catalog.abs_clip(space, 2.0)]


def test_weak_convergence_of_shrinking_diracs(grid10):
    ns = [1, 2, 4, 5, 10, 20, 25, 50, 100]
    mus = [SignedMeasure.dirac(grid10, 1.0 / n) for n in ns]
    v = weak_convergence_test(mus, SignedMeasure.dirac(grid10, 0.0), _lipschitz_dictionary(grid10), tol=0.02)
    assert v.converges
    assert max(v.final.values()) == pytest.approx(0.01)
    vague = [catalog.gaussian(grid10), catalog.exp_decay(grid10, 2.0)]
    assert vague_convergence_test(mus, SignedMeasure.dirac(grid10, 0.0), vague, tol=0.02).converges


def test_escaping_mass_weak_false_vague_true():
    space = StateSpace.countable(200)
    mus = [SignedMeasure.dirac(space, n) for n in range(1, 101)]
    zero = SignedMeasure.zero(space)
    weak = weak_convergence_test(mus, zero, [catalog.constant(space, 1.0), catalog.exp_decay(space)], tol=1e-3)
    assert not weak.converges and weak.final["const(1)"] == 1.0
    vague = vague_convergence_test(mus, zero, [catalog.exp_decay(space), catalog.exp_decay(space, 0.2),
                                               catalog.gaussian(space, 0.01)], tol=1e-3)
    assert vague.converges


def test_identical_sequence_zero_residuals(grid10):
    mu = SignedMeasure.from_atoms(grid10, [0.0, 1.0], [0.5, 0.5])
    v = weak_convergence_test([mu] * 3, mu, _lipschitz_dictionary(grid10), tol=0.0)
    assert v.converges and np.all(v.residuals == 0)


def test_vague_rejects_nonvanishing(grid10):
    mu = SignedMeasure.dirac(grid10, 0.0)
    with pytest.raises(ValidationError):
        vague_convergence_test([mu], mu, [catalog.constant(grid10, 1.0)], tol=0.1)


def test_weak_requires_constant(grid10):
    mu = SignedMeasure.dirac(grid10, 0.0)
    with pytest.raises(ValidationError):
        weak_convergence_test([mu], mu, [catalog.gaussian(grid10)], tol=0.1)


def test_weak_implies_vague_on_subdictionary(rng):
    space = StateSpace.countable(80)
    base = rng.dirichlet(np.ones(10))
    mus = [SignedMeasure(space, np.arange(10), base + rng.normal(size=10) * 1e-3 / k) for k in range(1, 20)]
    mu = SignedMeasure(space, np.arange(10), base)
    sub = [catalog.exp_decay(space), catalog.gaussian(space, 0.1)]
    weak = weak_convergence_test(mus, mu, [catalog.constant(space, 1.0)] + sub, tol=1e-3)
    assert weak.converges
    assert vague_convergence_test(mus, mu, sub, tol=1e-3).converges


def test_tightness_examples():
    space = StateSpace.countable(200)
    cert = tightness_test([SignedMeasure.dirac(space, 0)], eps=0.1)
    assert cert.found and cert.index == 1 and cert.masses == [1.0]

    family = [SignedMeasure.dirac(space, m) for m in range(51)]
    assert tightness_test(family, eps=0.1).index == 50

    from scipy.stats import binom
    fam = [SignedMeasure(space, np.arange(11), binom.pmf(np.arange(11), 10, p)) for p in (0.3, 0.5, 0.9)]
    assert tightness_test(fam, eps=1e-12).index == 10


def test_tightness_horizon_failure():
    space = StateSpace.countable(200)
    family = [SignedMeasure.dirac(space, m) for m in range(0, 201, 10)]
    cert = tightness_test(family, eps=0.1, n_max=100)
    assert not cert.found and cert.best_mass == 0.0


def test_measure_csv_round_trip(grid10):
    mu = SignedMeasure.from_atoms(grid10, [-1.5, 0.25, 3.0], [0.2, -0.7, 1.5])
    back = SignedMeasure.from_csv(grid10, mu.to_csv())
    assert back.equals(mu)
