#!/usr/bin/env python3
"""
Lattice Test Suite
Index arithmetic, world conversion, nearest-state snapping and the neighbor graph
"""

import math

import numpy as np
import pytest

from errors import ConfigurationError, DegeneratePoseError
from lattice import (
    ActorPose,
    CameraPose,
    LatticeSpec,
    SphericalIndex,
    build_lattice,
    nearest_state,
    normalize_angle,
    to_world,
)


def test_default_spec_sizes():
    spec = LatticeSpec()
    assert (spec.n_theta, spec.n_phi, spec.n_rho) == (16, 6, 6)
    assert spec.size == 576
    assert spec.horizon == pytest.approx(10.0)
    assert spec.computed_states == 2880
    assert build_lattice(spec).size == 576


def test_small_table_spec_computed_states():
    spec = LatticeSpec.uniform(3, 3, 8, rho_min=2.0)
    assert spec.rho_values == tuple(float(r) for r in range(2, 10))
    assert spec.size == 72
    assert spec.computed_states == 360


@pytest.mark.parametrize("kwargs", [
    {"n_theta": 1},
    {"n_phi": 0},
    {"rho_values": ()},
    {"rho_values": (2.0, 2.0)},
    {"rho_values": (3.0, 2.0)},
    {"rho_values": (-1.0, 2.0)},
    {"horizon_steps": 0},
    {"step_dt": 0.0},
    {"n_phi": 1, "include_pole": True},
])
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ConfigurationError, match="LatticeSpec"):
        LatticeSpec(**kwargs)


def test_linear_index_layout():
    spec = LatticeSpec()
    assert spec.linear(SphericalIndex(0, 0, 0)) == 0
    assert spec.linear(SphericalIndex(0, 0, 1)) == 1
    assert spec.linear(SphericalIndex(0, 1, 0)) == 6
    assert spec.linear(SphericalIndex(1, 0, 0)) == 36
    assert spec.unravel(35) == SphericalIndex(0, 5, 5)
    with pytest.raises(ConfigurationError):
        spec.linear(576)
    with pytest.raises(ConfigurationError):
        spec.linear(SphericalIndex(16, 0, 0))


def test_tilt_bins():
    spec = LatticeSpec()
    assert spec.phi_values[0] > 0.0
    assert spec.phi_values[-1] == pytest.approx(math.pi / 2)
    pole = LatticeSpec(include_pole=True)
    assert pole.phi_values[0] == 0.0
    assert pole.phi_values[-1] == pytest.approx(math.pi / 2)


def test_normalize_angle():
    assert normalize_angle(-math.pi / 2) == pytest.approx(3 * math.pi / 2)
    assert normalize_angle(2 * math.pi) == 0.0
    assert 0.0 <= normalize_angle(-1e-20) < 2 * math.pi


def test_to_world_equatorial_point_faces_actor():
    spec = LatticeSpec(rho_values=(2.0, 3.0))
    pose = to_world(SphericalIndex(0, spec.n_phi - 1, 0), ActorPose(0.0, 0.0, 0.0, 0.0), spec)
    assert pose.position == pytest.approx([2.0, 0.0, 0.0], abs=1e-12)
    assert pose.yaw == pytest.approx(math.pi)


def test_to_world_pole_is_overhead():
    spec = LatticeSpec(n_phi=4, rho_values=(5.0,), include_pole=True)
    for i_theta in range(spec.n_theta):
        pose = to_world(SphericalIndex(i_theta, 0, 0), ActorPose(0.0, 0.0, 0.0), spec)
        assert pose.position == pytest.approx([0.0, 0.0, 5.0], abs=1e-12)


def test_to_world_rotates_with_actor_heading():
    spec = LatticeSpec(rho_values=(3.0,))
    pose = to_world(SphericalIndex(0, spec.n_phi - 1, 0), ActorPose(10.0, 0.0, 0.0, math.pi / 2), spec)
    assert pose.position == pytest.approx([10.0, 3.0, 0.0], abs=1e-12)


def test_to_world_moves_rigidly_with_the_actor():
    spec = LatticeSpec()
    base_actor = ActorPose(0.0, 0.0, 0.0, 0.0)
    base = [to_world(s, base_actor, spec) for s in range(spec.size)]
    rng = np.random.default_rng(8)
    for _ in range(10):
        shift = rng.uniform(-50.0, 50.0, size=3)
        heading = float(rng.uniform(0.0, 2.0 * math.pi))
        cos_h, sin_h = math.cos(heading), math.sin(heading)
        rotation = np.array([[cos_h, -sin_h, 0.0], [sin_h, cos_h, 0.0], [0.0, 0.0, 1.0]])
        actor = ActorPose(*shift, heading=heading)
        for state, before in enumerate(base):
            moved = to_world(state, actor, spec)
            np.testing.assert_allclose(moved.position, rotation @ before.position + shift, atol=1e-9)
            turn = normalize_angle(moved.yaw - before.yaw - heading)
            assert min(turn, 2.0 * math.pi - turn) < 1e-9


def test_nearest_state_round_trip_all_states():
    spec = LatticeSpec()
    actor = ActorPose(1.0, -2.0, 1.5, 0.7)
    for state in range(spec.size):
        pose = to_world(state, actor, spec)
        assert spec.linear(nearest_state(pose, actor, spec)) == state


def test_nearest_state_tie_goes_to_lower_index():
    spec = LatticeSpec()
    actor = ActorPose(0.0, 0.0, 0.0)
    # Midway between the rho=2 and rho=3 shells on the horizon ray at theta=0
    pose = CameraPose(2.5, 0.0, 0.0)
    assert nearest_state(pose, actor, spec) == SphericalIndex(0, spec.n_phi - 1, 0)


def test_nearest_state_matches_brute_force_scan():
    rng = np.random.default_rng(3)
    spec = LatticeSpec()
    actor = ActorPose(0.5, 0.5, 1.0, 1.2)
    for _ in range(50):
        p = rng.uniform(-8.0, 8.0, size=3)
        best, best_d = None, math.inf
        for s in range(spec.size):
            d = float(np.linalg.norm(to_world(s, actor, spec).position - p))
            if d < best_d - 1e-9:
                best, best_d = s, d
        assert spec.linear(nearest_state(CameraPose(*p), actor, spec)) == best


def test_nearest_state_rejects_pose_at_actor():
    with pytest.raises(DegeneratePoseError):
        nearest_state(CameraPose(1.0, 2.0, 3.0), ActorPose(1.0, 2.0, 3.0), LatticeSpec())


def test_neighbor_graph_properties():
    lattice = build_lattice(LatticeSpec())
    spec = lattice.spec
    for s in range(lattice.size):
        neighbors = lattice.neighbor_lists[s]
        assert s in neighbors
        assert np.all(np.diff(neighbors) > 0)
        for n in neighbors:
            assert lattice.is_neighbor(int(n), s)

    interior = spec.linear(SphericalIndex(5, 2, 2))
    assert len(lattice.neighbor_lists[interior]) == 27
    # phi and rho clamp at the bounds
    assert len(lattice.neighbor_lists[spec.linear(SphericalIndex(5, 0, 2))]) == 18
    assert len(lattice.neighbor_lists[spec.linear(SphericalIndex(5, 0, 0))]) == 12
    # theta wraps
    assert lattice.is_neighbor(spec.linear(SphericalIndex(0, 2, 2)), spec.linear(SphericalIndex(15, 2, 2)))
    assert not lattice.is_neighbor(spec.linear(SphericalIndex(0, 2, 2)), spec.linear(SphericalIndex(2, 2, 2)))


def test_smallest_wrap_case():
    lattice = build_lattice(LatticeSpec(n_theta=2, n_phi=1, rho_values=(2.0,)))
    assert lattice.size == 2
    for s in range(2):
        assert list(lattice.neighbor_lists[s]) == [0, 1]


def test_cell_volumes_positive_and_grow_with_radius():
    lattice = build_lattice(LatticeSpec())
    spec = lattice.spec
    assert np.all(lattice.cell_volumes > 0.0)
    inner = lattice.cell_volumes[spec.linear(SphericalIndex(0, 3, 0))]
    outer = lattice.cell_volumes[spec.linear(SphericalIndex(0, 3, 5))]
    assert outer > inner
