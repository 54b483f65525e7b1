import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from swarmdmd.observables import (
    FeatureKind,
    FeatureLayout,
    assemble_matrices,
    default_layout,
    differentiate,
    feature_matrix,
    heading_from_velocity,
    pairwise_features,
    stack_positions,
    unstack_positions,
    velocity_from_positions,
)
from swarmdmd.sim import simulate
from swarmdmd.trajectory import SwarmParams, SwarmTrajectory, TrajectoryError

WIDTHS = {
    "position": 2, "velocity": 2, "heading": 1, "rel_position": "2N",
    "rel_distance": "N", "rel_heading": "N", "rel_velocity": "2N", "rel_speed": "N",
}


def traj_from(pos, dt=0.1):
    pos = np.asarray(pos, dtype=float)
    return SwarmTrajectory.from_arrays(pos, np.zeros(pos.shape[:2]), dt)


@pytest.mark.parametrize("name,width", WIDTHS.items())
def test_per_agent_widths(name, width):
    n = 7
    expected = {"N": n, "2N": 2 * n}.get(width, width)
    assert FeatureKind(name).width(n) == expected


def test_layout_blocks_cover_rows():
    lay = FeatureLayout.parse("position velocity heading rel_distance", 4)
    starts = [b.start for b in lay.block_index.values()]
    stops = [b.stop for b in lay.block_index.values()]
    assert starts[0] == 0 and stops[-1] == lay.total_width
    assert starts[1:] == stops[:-1]
    assert lay.total_width == 4 * (2 + 2 + 1 + 4)


def test_layout_rejects_bad_input():
    with pytest.raises(ValueError):
        FeatureLayout.parse("position bogus", 3)
    with pytest.raises(ValueError):
        FeatureLayout.parse("position position", 3)
    with pytest.raises(ValueError):
        FeatureLayout.parse("", 3)


def test_grouping_component_then_agent():
    pos = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
    lay = FeatureLayout.parse("position", 3)
    y = feature_matrix(pos, np.zeros_like(pos), lay)[:, 0]
    np.testing.assert_array_equal(y, [1, 2, 3, 10, 20, 30])
    assert lay.row_of("position", 1, 2) == 5


# -- velocity and heading ------------------------------------------------------


def test_forward_difference_velocity():
    v = velocity_from_positions(traj_from([[[0, 0]], [[0.1, 0]], [[0.2, 0]]]))
    np.testing.assert_allclose(v[0, 0], [1.0, 0.0])


def test_stationary_velocity_is_zero():
    v = velocity_from_positions(traj_from(np.ones((4, 3, 2))))
    assert np.all(v == 0)


def test_velocity_needs_two_snapshots():
    with pytest.raises(TrajectoryError):
        velocity_from_positions(traj_from(np.zeros((1, 2, 2))))
    with pytest.raises(ValueError):
        differentiate(np.zeros((3, 1, 2)), 0.1, "central")


def test_vicsek_velocity_has_constant_speed():
    p = SwarmParams.standard(seed=3)
    v = velocity_from_positions(simulate(p, duration=2.0))
    np.testing.assert_allclose(np.linalg.norm(v[:-1], axis=-1), p.speed, rtol=1e-9)


@pytest.mark.parametrize("v,angle", [((1, 0), 0.0), ((0, -2), -math.pi / 2), ((0, 0), 0.0)])
def test_heading_from_velocity(v, angle):
    assert heading_from_velocity(v) == pytest.approx(angle)


# -- pairwise ----------------------------------------------------------------------


def test_relative_distance_345():
    d = pairwise_features([[0, 0], [3, 4]], np.zeros((2, 2)), "rel_distance")
    assert d[0, 0, 1] == pytest.approx(5.0)
    assert d[1, 0, 0] == pytest.approx(5.0)


def test_relative_heading_is_wrapped():
    v = np.array([[math.cos(3), math.sin(3)], [math.cos(-3), math.sin(-3)]])
    h = pairwise_features(np.zeros((2, 2)), v, "rel_heading")
    assert h[0, 0, 1] == pytest.approx(2 * math.pi - 6)
    assert h[0, 0, 1] == pytest.approx(0.2832, abs=1e-4)


@pytest.mark.parametrize("kind", [k for k in FeatureKind if k.pairwise])
def test_self_pairs_are_zero(kind, rng):
    p, v = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    f = pairwise_features(p, v, kind)
    for i in range(5):
        assert np.all(f[i, :, i] == 0)


# -- assembly ----------------------------------------------------------------------


def test_assemble_dimensions():
    lay = FeatureLayout.parse("rel_distance", 2)
    m = assemble_matrices(traj_from(np.arange(12.0).reshape(3, 2, 2)), lay)
    assert m.Y.shape == (4, 2)
    assert m.X.shape == (4, 2)


def test_standard_layout_row_count():
    lay = default_layout("standard", 50)
    assert lay.per_agent_width == 55
    assert lay.total_width == 2750
    traj = simulate(SwarmParams.standard(seed=0), duration=0.5)
    assert assemble_matrices(traj, lay).Y.shape == (2750, 5)


def test_stationary_swarm_has_zero_displacement():
    m = assemble_matrices(traj_from(np.ones((5, 3, 2))), default_layout("standard", 3))
    assert np.all(m.S == 0)


def test_assemble_rejects_mismatched_layout():
    with pytest.raises(ValueError):
        assemble_matrices(traj_from(np.zeros((4, 3, 2))), default_layout("standard", 4))


def test_columns_come_from_the_same_snapshot():
    traj = simulate(SwarmParams.standard(n_agents=6, seed=2), duration=1.0)
    m = assemble_matrices(traj, default_layout("standard", 6))
    vel = velocity_from_positions(traj)
    for k in range(m.n_columns):
        np.testing.assert_array_equal(m.X[:, k], stack_positions(traj.positions[k]))
        np.testing.assert_array_equal(m.Y[:, k], feature_matrix(traj.positions[k], vel[k], m.layout)[:, 0])


# -- invariants ----------------------------------------------------------------------

coords = arrays(np.float64, st.tuples(st.integers(1, 8), st.just(2)), elements=st.floats(-50, 50))


@given(coords)
def test_relative_distance_symmetric(p):
    d = pairwise_features(p, np.zeros_like(p), "rel_distance")[:, 0, :]
    np.testing.assert_array_equal(d, d.T)
    assert np.all(np.diag(d) == 0)


@given(coords, st.integers(0, 1000))
def test_relative_heading_and_speed_ranges(p, seed):
    v = np.random.default_rng(seed).normal(size=p.shape)
    h = pairwise_features(p, v, "rel_heading")
    s = pairwise_features(p, v, "rel_speed")
    assert np.all((h >= 0) & (h <= math.pi))
    assert np.all(s >= 0)


@given(arrays(np.float64, st.tuples(st.integers(3, 6), st.integers(1, 5), st.just(2)), elements=st.floats(-1e6, 1e6)))
def test_stack_round_trip(pos):
    traj = traj_from(pos)
    m = assemble_matrices(traj, FeatureLayout.parse("position", pos.shape[1]))
    full = np.column_stack([m.X, m.Xp[:, -1]])
    assert np.array_equal(unstack_positions(full), pos)
    assert np.array_equal(m.S, m.Xp - m.X)
