import numpy as np
import pytest

from scle.errors import DomainError, ValidationError
from scle.state_space import CompactSet, StateSpace, distance, exhaustion_member


def test_finite_space_is_its_own_exhaustion(two_state):
    K1 = exhaustion_member(two_state, 1)
    assert list(K1.indices) == [0, 1]
    assert "a" in K1 and "b" in K1
    assert two_state.compact


def test_grid_exhaustion_member(grid10):
    K3 = exhaustion_member(grid10, 3)
    pts = K3.points
    assert pts.min() == pytest.approx(-3.0) and pts.max() == pytest.approx(3.0)
    assert len(K3) == 601
    assert K3.index == 3


def test_countable_exhaustion_member():
    space = StateSpace.countable(200)
    assert list(exhaustion_member(space, 7).points) == list(range(8))


def test_exhaustion_saturates(grid10):
    assert len(exhaustion_member(grid10, 50)) == grid10.size
    assert grid10.saturation_index == 10


@pytest.mark.parametrize("space", [StateSpace.finite(3), StateSpace.countable(40), StateSpace.grid(5.0, 0.1)])
def test_exhaustion_is_increasing_and_covers(space):
    top = space.saturation_index + 2
    members = [exhaustion_member(space, n) for n in range(1, top)]
    for small, big in zip(members, members[1:]):
        assert small.issubset(big)
    assert members[-1].mask.all()


def test_exhaustion_index_must_be_positive(grid10):
    with pytest.raises(DomainError):
        exhaustion_member(grid10, 0)


def test_distances(grid10, two_state):
    assert distance(grid10, 1.5, -2.5) == 4.0
    assert distance(grid10, 0.3, 0.3) == 0.0
    assert distance(StateSpace.countable(200), 3, 8) == 5.0
    assert distance(two_state, "a", "b") == 1.0
    assert distance(two_state, "a", "a") == 0.0


def test_distance_rejects_unrepresented_points(grid10, two_state):
    with pytest.raises(DomainError):
        distance(grid10, 11.0, 0.0)
    with pytest.raises(DomainError):
        distance(two_state, "c", "a")
    with pytest.raises(DomainError):
        distance(StateSpace.countable(5), 6, 0)


@pytest.mark.parametrize("space", [StateSpace.finite(5), StateSpace.countable(30), StateSpace.grid(4.0, 0.05)])
def test_metric_axioms_on_random_triples(space, rng):
    idx = rng.integers(0, space.size, size=(2000, 3))
    x, y, z = (space.coords[idx[:, k]] for k in range(3))
    dxy, dyz, dxz = space.metric(x, y), space.metric(y, z), space.metric(x, z)
    assert np.all(dxy >= 0)
    assert np.array_equal(dxy, space.metric(y, x))
    assert np.array_equal(dxy == 0, x == y)
    assert np.all(dxz <= dxy + dyz + 1e-12)


def test_grid_spacing_must_divide():
    with pytest.raises(ValidationError):
        StateSpace.grid(1.0, 0.3)


def test_compact_set_from_points(grid10):
    K = CompactSet.from_points(grid10, [0.0, 0.5])
    assert len(K) == 2 and 0.5 in K and 0.25 not in K
