import numpy as np
import pytest
from scipy.linalg import expm

from scle import catalog
from scle.errors import DomainError, ValidationError
from scle.generator import DIFFUSION, GeneratorGraph, build_birth_death, build_ctmc, build_diffusion_1d
from scle.measure import SignedMeasure
from scle.path_sim import (
    CadlagPath,
    PathEnsemble,
    modulus_event,
    path_integral,
    sample_terminal,
    simulate_ctmc,
    simulate_diffusion,
    simulate_ensemble,
)
from scle.state_space import StateSpace
from scle.stats import wilson_band

FLIP = [[-1.0, 1.0], [1.0, -1.0]]


def test_zero_rates_give_constant_path():
    A = build_ctmc([[0.0, 0.0], [0.0, 0.0]])
    p = simulate_ctmc(A, 1, 5.0, seed=1)
    assert p.n_jumps == 0 and p.value_at(4.9) == 1.0


def test_long_run_occupancy_is_uniform():
    A = build_ctmc(FLIP)
    T = 1e4
    p = simulate_ctmc(A, 0, T, seed=11)
    # batch means for the standard error of the occupation fraction
    edges = np.linspace(0, T, 101)
    ind = catalog.vector(A.space, [1.0, 0.0])
    cum = np.array([path_integral(p, ind, e) for e in edges])
    batch = np.diff(cum) / np.diff(edges)
    frac = cum[-1] / T
    se = batch.std(ddof=1) / np.sqrt(batch.size)
    assert abs(frac - 0.5) <= 3 * se
    # closed form: the occupation fraction has variance 1/(4T)
    assert se == pytest.approx(np.sqrt(1 / (4 * T)), rel=0.35)


def test_first_jump_survival_probability():
    A = build_ctmc(FLIP)
    E = simulate_ensemble(A, 0.1, 100_000, seed=5, x0=0)
    delta = 0.0513
    stay = int(np.sum(E.max_distance_from_start(delta) == 0))
    band = wilson_band(stay, len(E))
    assert np.exp(-delta) == pytest.approx(0.95, abs=1e-4)
    assert band.covers(np.exp(-delta))


def test_ctmc_marginals_match_matrix_exponential():
    A = build_birth_death(lambda i: 1.0 + 0.5 * i, 1.5, 5)
    t = 0.7
    E = simulate_ensemble(A, 1.0, 100_000, seed=99, x0=2)
    x = E.values_at(t)
    exact = expm(t * A.matrix)[2]
    for state in range(6):
        assert wilson_band(int(np.sum(x == state)), len(E)).covers(exact[state])


def test_brownian_moments(grid10):
    A = build_diffusion_1d(0.0, 1.0, grid10)
    x = sample_terminal(A, 0.0, 1.0, 100_000, seed=3, dt=0.01)
    n = x.size
    assert abs(x.var(ddof=1) - 1.0) <= 3 * np.sqrt(2.0 / (n - 1))
    assert abs(x.mean()) <= 3 / np.sqrt(n)


def test_deterministic_diffusion_is_constant(grid10):
    frozen = GeneratorGraph(grid10, DIFFUSION, drift=lambda x: 0 * x, diffusion=lambda x: 0 * x)
    p = simulate_diffusion(frozen, 1.5, 1.0, 0.01, seed=0)
    assert np.all(p.states == 1.5)


def test_diffusion_rejects_bad_dt(grid10):
    A = build_diffusion_1d(0.0, 1.0, grid10)
    with pytest.raises(ValidationError):
        simulate_diffusion(A, 0.0, 1.0, 0.0, seed=0)
    with pytest.raises(ValidationError):
        simulate_diffusion(A, 0.0, 1.0, 0.3, seed=0)


def test_diffusion_paths_stay_in_window():
    space = StateSpace.grid(1.0, 0.1)
    A = build_diffusion_1d(0.0, 4.0, space)
    E = simulate_ensemble(A, 2.0, 500, seed=1, x0=0.9, dt=0.01)
    assert np.all(np.abs(E.states) <= 1.0)


def test_non_conservative_refused():
    with pytest.raises(ValidationError):
        simulate_ctmc(build_ctmc([[-1.0, 0.5], [1.0, -1.0]]), 0, 1.0, seed=0)


def test_path_integral_examples(two_state):
    space = StateSpace.countable(10)
    p = CadlagPath(space, [0.0, 0.4], [2.0, 5.0], 1.0)
    g = catalog.linear(space, 1.0, 100.0)
    assert path_integral(p, g, 1.0) == pytest.approx(3.8)
    assert path_integral(p, g, 0.0) == 0.0
    assert path_integral(p, catalog.constant(space, 2.5), 0.7) == pytest.approx(1.75)
    with pytest.raises(DomainError):
        path_integral(p, g, 1.5)


def test_modulus_event_examples(two_state):
    p = CadlagPath(two_state, [0.0, 0.03], [0.0, 1.0], 1.0)
    assert not modulus_event(p, 0.05, 0.5)
    assert modulus_event(p, 0.02, 0.5)
    flat = CadlagPath(two_state, [0.0], [1.0], 1.0)
    assert modulus_event(flat, 1.0, 1e-9)


def test_right_continuity(two_state):
    p = CadlagPath(two_state, [0.0, 0.5], [0.0, 1.0], 1.0)
    assert p.value_at(0.5) == 1.0 and p.value_at(0.4999) == 0.0
    with pytest.raises(ValidationError):
        CadlagPath(two_state, [0.0, 0.5, 0.5], [0.0, 1.0, 0.0], 1.0)


def test_reproducibility_and_parallel_invariance():
    A = build_birth_death(1.0, 1.0, 30)
    nu = SignedMeasure(A.space, np.arange(6), np.full(6, 1 / 6))
    a = simulate_ensemble(A, 1.0, 10_000, seed=8, initial_law=nu, block_size=1000)
    b = simulate_ensemble(A, 1.0, 10_000, seed=8, initial_law=nu, block_size=1000, jobs=4)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.states, b.states)
    assert np.array_equal(a.offsets, b.offsets)
    p1 = simulate_ctmc(A, 3, 2.0, seed=12)
    p2 = simulate_ctmc(A, 3, 2.0, seed=12)
    assert np.array_equal(p1.times, p2.times) and np.array_equal(p1.states, p2.states)
    c = simulate_ensemble(A, 1.0, 10_000, seed=9, initial_law=nu, block_size=1000)
    assert not np.array_equal(a.times, c.times)


def test_blocks_are_keyed_by_index():
    A = build_ctmc(FLIP)
    big = simulate_ensemble(A, 1.0, 300, seed=4, x0=0, block_size=100)
    small = simulate_ensemble(A, 1.0, 100, seed=4, x0=0, block_size=100)
    for i in range(100):
        assert np.array_equal(big[i].times, small[i].times)


def test_vectorised_functionals_match_single_paths(grid10):
    A = build_birth_death(1.0, 1.0, 20)
    E = simulate_ensemble(A, 2.0, 300, seed=2, x0=3)
    g = catalog.exp_decay(A.space, 0.3)
    ints = E.integral(g, 1.3)
    vals = E.values_at(1.3)
    mods = E.max_distance_from_start(0.4)
    for i, p in enumerate(E.paths()):
        assert ints[i] == pytest.approx(path_integral(p, g, 1.3), abs=1e-12)
        assert vals[i] == p.value_at(1.3)
        assert (mods[i] < 0.5) == modulus_event(p, 0.4, 0.5)

    D = build_diffusion_1d(0.0, 1.0, grid10)
    G = simulate_ensemble(D, 1.0, 50, seed=2, x0=0.0, dt=0.05)
    for i, p in enumerate(G.paths()):
        assert G.integral(g_grid := catalog.gaussian(grid10), 0.73)[i] == pytest.approx(path_integral(p, g_grid, 0.73))
        assert G.values_at(0.73)[i] == p.value_at(0.73)


def test_csv_round_trip():
    A = build_birth_death(1.0, 1.0, 20)
    E = simulate_ensemble(A, 1.0, 50, seed=2, x0=3)
    back = PathEnsemble.from_csv(A.space, E.to_csv(), horizon=1.0)
    assert np.array_equal(back.times, E.times) and np.array_equal(back.states, E.states)
    assert np.array_equal(back.offsets, E.offsets)
