import numpy as np
import pytest

from scle import catalog
from scle.errors import DomainError, HorizonFailure, PreconditionError, ValidationError
from scle.extension import (
    CutoffFamily,
    core_check,
    extend_apply,
    graph_contained,
    mass_conservation_check,
    restrict,
    restrict_check,
    restricted_generator,
    round_trip_check,
    truncation_leak,
)
from scle.function_space import sup_norm
from scle.generator import build_birth_death, build_ctmc
from scle.measure import SignedMeasure
from scle.semigroup import HeatSemigroup, MatrixExpSemigroup
from scle.state_space import StateSpace, exhaustion_member


@pytest.fixture(scope="module")
def bd():
    return build_birth_death(1.0, 1.0, 200)


@pytest.fixture(scope="module")
def S(bd):
    return MatrixExpSemigroup(bd)


@pytest.fixture(scope="module", params=[("linear", 1), ("smooth", 3)])
def cutoffs(request, bd):
    return CutoffFamily(bd.space, *request.param)


def test_cutoff_family_admissible(cutoffs, bd):
    assert cutoffs.admissible
    chis = np.stack([c.values for c in cutoffs])
    assert np.all((chis >= 0) & (chis <= 1))
    assert np.all(np.diff(chis, axis=0) >= 0)
    assert all(c.vanishing for c in cutoffs)
    m = 7
    c = cutoffs.chi(m).values
    assert np.all(c[bd.space.levels <= m] == 1.0)
    assert np.all(c[bd.space.levels > m + cutoffs.width] == 0.0)


def test_cutoff_family_validation(bd):
    with pytest.raises(ValidationError):
        CutoffFamily(bd.space, "linear", 0)
    with pytest.raises(ValidationError):
        CutoffFamily(bd.space, "linear", 1, m_max=199)
    with pytest.raises(ValidationError):
        CutoffFamily(bd.space, "cubic", 1).chi(3)
    bad = CutoffFamily.custom(bd.space, [CutoffFamily(bd.space).chi(3)] * 10)
    assert not bad.admissible


def test_smooth_cutoff_values(bd):
    c = CutoffFamily(bd.space, "smooth", 4).chi(10).values
    # u = (14 - x)/4, smoothstep u^2 (3 - 2u)
    assert c[12] == pytest.approx(0.5)
    assert c[11] == pytest.approx(0.75**2 * 1.5)


def test_restrict_check_birth_death(S, bd):
    f = catalog.exp_decay(bd.space, 2.0)
    rep = restrict_check(S, f, [0.1, 0.05, 0.01], 0.0203)
    assert rep.passed and all(rep.vanishing)
    assert rep.sup_residuals[-1] <= np.exp(0.02) - 1
    assert restrict_check(S, f, [0.0], 1e-15).sup_residuals == [0.0]
    with pytest.raises(PreconditionError):
        restrict_check(S, catalog.constant(bd.space), [0.01], 0.1)


def test_restricted_semigroup_refuses_non_vanishing(S, bd):
    with pytest.raises(PreconditionError):
        restrict(S).apply(0.1, catalog.cos_inverse(bd.space))


def test_mass_conservation(S, bd):
    mus = [SignedMeasure.dirac(bd.space, 0), SignedMeasure.from_atoms(bd.space, range(6), [1 / 6] * 6)]
    rep = mass_conservation_check(S, mus, [0.0, 0.5, 1.0])
    assert rep.passed and rep.worst_mass_error <= 1e-12


@pytest.mark.parametrize("kappa", [0.3, 1.0])
def test_mass_conservation_killed_control(kappa):
    Q = [[-1 - kappa, 1.0], [1.0, -1 - kappa]]
    K = MatrixExpSemigroup(build_ctmc(Q))
    mu = SignedMeasure.dirac(K.space, 0)
    rep = mass_conservation_check(K, [mu], [1.0])
    assert not rep.passed
    assert rep.masses[0][2] == pytest.approx(np.exp(-kappa), abs=1e-10)
    assert mass_conservation_check(K, [mu], [0.0]).passed


def test_mass_conservation_rejects_non_probability(S, bd):
    with pytest.raises(ValidationError):
        mass_conservation_check(S, [SignedMeasure.dirac(bd.space, 0, 0.5)], [1.0])


def test_truncation_leak_matches_poisson_bound(S):
    # leaving K_6 from K_1 = {0, 1} before t needs six births; births come at rate <= 1
    from scipy.stats import poisson

    leak = truncation_leak(S, 1.0, 6, 1)
    assert 0 < leak <= poisson.sf(5, 1.0)
    with pytest.raises(DomainError):
        truncation_leak(S, 1.0, 6, 0)
    assert truncation_leak(S, 0.0, 6, 1) == 0.0
    assert truncation_leak(S, 1.0, 12, 5) >= truncation_leak(S, 1.0, 12, 4)


def test_truncation_leak_heat():
    space = StateSpace.grid(10.0, 0.1)
    H = HeatSemigroup(space)
    from scipy.stats import norm

    assert truncation_leak(H, 1.0, 5, 1) == pytest.approx(2 * norm.sf(4) + 2 * norm.sf(6))


@pytest.mark.parametrize("name", ["constant", "cos_inverse"])
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
def test_round_trip(S, bd, cutoffs, name, t):
    f = catalog.build(bd.space, name)
    rep = round_trip_check(S, t, f, cutoffs, 1e-6)
    assert rep.passed
    assert rep.discrepancy <= 1e-6 + rep.leak


def test_extension_of_one_is_one(S, bd, cutoffs):
    ext = extend_apply(restrict(S), 0.5, catalog.constant(bd.space), cutoffs, 1e-10)
    K = exhaustion_member(bd.space, ext.horizon)
    assert np.max(np.abs(ext.value.values[K.mask] - 1.0)) <= 1e-10 + ext.leak
    assert ext.converged and ext.trace


def test_extension_cos_inverse_at_origin(S, bd, cutoffs):
    f = catalog.cos_inverse(bd.space)
    ext = extend_apply(restrict(S), 0.5, f, cutoffs, 1e-9)
    assert ext.value.values[0] == pytest.approx(S.apply(0.5, f).values[0], abs=1e-8)


def test_extension_consistent_on_c0(S, bd, cutoffs):
    f = catalog.exp_decay(bd.space, 3.0)
    ext = extend_apply(restrict(S), 0.5, f, cutoffs, 1e-12)
    direct = restrict(S).apply(0.5, f)
    assert sup_norm(ext.value - direct) <= 1e-12
    assert ext.m <= 15


def test_extension_horizon_failure(S, bd):
    short = CutoffFamily(bd.space, "linear", 1, m_max=4)
    with pytest.raises(HorizonFailure):
        extend_apply(restrict(S), 1.0, catalog.constant(bd.space), short, 1e-12)


def test_extension_finite_space_notice():
    A = build_ctmc([[-1.0, 1.0], [1.0, -1.0]])
    T = MatrixExpSemigroup(A)
    f = catalog.vector(A.space, [1.0, 0.0])
    ext = extend_apply(T, 0.3, f, CutoffFamily(A.space), 1e-12)
    assert ext.notes and np.allclose(ext.value.values, T.apply(0.3, f).values)


def test_core_check_passes_for_admissible_cutoffs(bd, cutoffs):
    for name in ("constant", "cos_inverse"):
        rep = core_check(bd, catalog.build(bd.space, name), cutoffs, 1e-9)
        assert rep.passed, name


def test_core_check_cutoff_generator_is_local(bd):
    cf = CutoffFamily(bd.space, "linear", 1)
    g = (bd.matrix @ cf.chi(30).values)
    assert np.max(np.abs(g)) <= 2.0
    assert np.all(g[:30] == 0.0) and np.all(g[32:] == 0.0)


def test_core_check_on_vanishing_function(bd, cutoffs):
    rep = core_check(bd, catalog.exp_decay(bd.space, 2.0), cutoffs, 1e-9)
    assert rep.passed


def test_core_check_adversarial_cutoffs(bd):
    fixed = CutoffFamily(bd.space).chi(3)
    bad = CutoffFamily.custom(bd.space, [fixed] * 60)
    rep = core_check(bd, catalog.constant(bd.space), bad, 1e-9)
    assert not rep.passed and rep.notes


def test_core_check_needs_conservative_generator():
    Q = [[-2.0, 1.0], [1.0, -2.0]]
    A = build_ctmc(Q)
    with pytest.raises(PreconditionError):
        core_check(A, catalog.constant(A.space), CutoffFamily(A.space), 1e-9)


def test_restricted_graph_is_contained(bd):
    fs = [catalog.exp_decay(bd.space, r) for r in (0.5, 1.0, 2.0)] + [catalog.constant(bd.space)]
    small = restricted_generator(bd, fs)
    assert len(small.pairs) == 3
    assert graph_contained(small, bd)
    # a tampered pair is not in A
    f, g = small.pairs[0]
    from dataclasses import replace

    tampered = replace(small, pairs=((f, g * 1.5),))
    assert not graph_contained(tampered, bd)
