#!/usr/bin/env python3
"""
Cost Model Test Suite
Ramps, visibility cone, pair tables, obstacle/occlusion terms and cost maps
"""

import math

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from conftest import random_model
from costmodel import (
    TERMS,
    CinePrior,
    CineRule,
    CostModel,
    DiversityParams,
    PairTables,
    Weights,
    build_pair_tables,
    collision_pair,
    diversity_pair,
    obstacle_cost,
    occlusion_cost,
    state_cost,
    visibility_pair,
)
from errors import ConfigurationError, DegeneratePoseError
from lattice import ActorPose, LatticeSpec, SphericalIndex, build_lattice
from planner import WaypointPath
from world import Box, SceneDescription, SphericalGrid, spherical_regrid, voxelize

FOV = math.radians(50.0)


@pytest.fixture(scope="module")
def default_tables():
    lattice = build_lattice(LatticeSpec())
    return lattice, build_pair_tables(lattice, DiversityParams(), FOV)


def test_diversity_ramp():
    params = DiversityParams()
    assert diversity_pair([0, 0, 0], [0, 0, 0], params) == 1.0
    assert diversity_pair([0, 0, 0], [10, 0, 0], params) == 0.0
    assert diversity_pair([0, 0, 0], [3.5, 0, 0], params) == pytest.approx(0.5)


def test_collision_ramp():
    params = DiversityParams(d_min_col=1.0, d_max_col=2.0)
    assert collision_pair([1, 1, 1], [1, 1, 1], params) == 1.0
    assert collision_pair([0, 0, 0], [0, 0, 1.5], params) == pytest.approx(0.5)
    assert collision_pair([0, 0, 0], [0, 3, 0], params) == 0.0


def test_diversity_params_validation():
    with pytest.raises(ConfigurationError, match="DiversityParams"):
        DiversityParams(d_min_div=7.0, d_max_div=6.0)
    with pytest.raises(ConfigurationError, match="DiversityParams"):
        DiversityParams(d_min_col=-1.0)


def test_weights_reject_negative():
    with pytest.raises(ConfigurationError, match="lambda_vis"):
        Weights(lambda_vis=-1.0)


def test_visibility_cone():
    actor = [0.0, 0.0, 0.0]
    assert visibility_pair([5, 0, 0], [2, 0, 0], actor, FOV) == 1
    assert visibility_pair([5, 0, 0], [10, 0, 0], actor, FOV) == 0
    # opposite cameras on the same shell see each other through the actor
    assert visibility_pair([3, 0, 0], [-3, 0, 0], actor, FOV) == 1
    assert visibility_pair([-3, 0, 0], [3, 0, 0], actor, FOV) == 1
    with pytest.raises(DegeneratePoseError):
        visibility_pair(actor, [1, 0, 0], actor, FOV)


def test_pair_table_shape_and_memory(default_tables):
    lattice, tables = default_tables
    assert tables.entries == 331_776
    assert tables.nbytes == PairTables.estimate_bytes(576)
    assert np.all(np.diag(tables.diversity) == 1.0)
    assert np.all(np.diag(tables.collision) == 1.0)
    assert np.all(np.diag(tables.visibility))
    np.testing.assert_array_equal(tables.diversity, tables.diversity.T)
    np.testing.assert_array_equal(tables.collision, tables.collision.T)


def test_pair_tables_match_direct_computation(default_tables):
    lattice, tables = default_tables
    params = tables.params
    offsets = lattice.unit_offsets
    d = cdist(offsets, offsets)
    np.testing.assert_allclose(
        tables.diversity, np.clip((params.d_max_div - d) / (params.d_max_div - params.d_min_div), 0.0, 1.0),
        rtol=0.0, atol=1e-12,
    )
    np.testing.assert_allclose(
        tables.collision, np.clip((params.d_max_col - d) / (params.d_max_col - params.d_min_col), 0.0, 1.0),
        rtol=0.0, atol=1e-12,
    )

    # cosine between i -> j and i -> actor, with the actor at the origin
    to_actor = -offsets / np.linalg.norm(offsets, axis=1)[:, None]
    v = offsets[None, :, :] - offsets[:, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.einsum("ijk,ik->ij", v, to_actor) / d
    expected = (d == 0.0) | (cos >= math.cos(FOV))
    on_cone = (d > 0.0) & (np.abs(cos - math.cos(FOV)) < 1e-9)
    np.testing.assert_array_equal(tables.visibility[~on_cone], expected[~on_cone])
    for i, j in zip(*np.nonzero(on_cone)):
        assert tables.visibility[i, j] == bool(visibility_pair(offsets[i], offsets[j], np.zeros(3), FOV))


def test_pair_tables_reject_bad_fov():
    lattice = build_lattice(LatticeSpec.uniform(3, 3, 2))
    with pytest.raises(ConfigurationError):
        build_pair_tables(lattice, DiversityParams(), 0.0)


def test_cine_prior_rules_and_presets():
    lattice = build_lattice(LatticeSpec())
    prior = CinePrior.from_rules(lattice, preset="overhead", preset_cost=3.0)
    assert np.all(prior.values[lattice.phi <= math.pi / 6 + 1e-9] == 3.0)
    assert np.all(prior.values[lattice.phi > math.pi / 6 + 1e-9] == 0.0)

    # a wrapping theta range covers both sides of the actor heading
    rule = CineRule(cost=1.0, theta_range=(math.radians(300.0), math.radians(30.0)))
    wrapped = CinePrior.from_rules(lattice, [rule])
    assert wrapped[lattice.spec.linear(SphericalIndex(0, 2, 2))] == 1.0
    assert wrapped[lattice.spec.linear(SphericalIndex(15, 2, 2))] == 1.0
    assert wrapped[lattice.spec.linear(SphericalIndex(8, 2, 2))] == 0.0

    with pytest.raises(ConfigurationError, match="unknown preset"):
        CinePrior.from_rules(lattice, preset="dutch_tilt")
    with pytest.raises(ConfigurationError):
        CinePrior(np.full(lattice.size, -1.0))


@pytest.fixture(scope="module")
def wall_world():
    scene = SceneDescription(
        bounds_min=(-8.0, -8.0, -8.0), bounds_max=(8.0, 8.0, 8.0),
        boxes=[Box((3.0, -2.0, -2.0), (4.0, 2.0, 2.0))],
    )
    grid = voxelize(scene, 0.25)
    lattice = build_lattice(LatticeSpec())
    return spherical_regrid(grid, [ActorPose(0.0, 0.0, 0.0)], lattice)


def test_occlusion_through_wall(wall_world):
    # (θ=0, horizon, ρ=7) looks through a 1 m wall
    assert occlusion_cost(SphericalIndex(0, 5, 5), 0, wall_world) == pytest.approx(1.0, abs=0.25)
    # the wall is behind (θ=π, horizon, ρ=7)
    assert occlusion_cost(SphericalIndex(8, 5, 5), 0, wall_world) == 0.0


def test_obstacle_cost_inside_wall(wall_world):
    inside = SphericalIndex(0, 5, 1)  # camera at (3, 0, 0)
    assert wall_world.occupancy[0, wall_world.lattice.spec.linear(inside)] == 1.0
    assert obstacle_cost(inside, 0, wall_world, 1.0) > 0.0
    assert obstacle_cost(SphericalIndex(8, 5, 5), 0, wall_world, 1.0) == 0.0


def test_empty_world_costs_zero():
    lattice = build_lattice(LatticeSpec())
    grid = voxelize(SceneDescription(bounds_min=(-8.0, -8.0, -8.0), bounds_max=(8.0, 8.0, 8.0)), 0.5)
    sgrid = spherical_regrid(grid, [ActorPose(0.0, 0.0, 0.0)] * 2, lattice)
    model = CostModel(lattice, build_pair_tables(lattice, DiversityParams(), FOV), sgrid,
                      CinePrior.zeros(lattice), Weights())
    assert np.all(model.costmap().values == 0.0)


def test_obstacle_single_cell_volume():
    lattice = build_lattice(LatticeSpec())
    occupancy = np.zeros((1, lattice.size))
    occupancy[0, 100] = 1.0
    sgrid = SphericalGrid(
        lattice=lattice,
        actor_path=[ActorPose(0.0, 0.0, 0.0)],
        positions=lattice.world_positions(ActorPose(0.0, 0.0, 0.0))[None],
        occupancy=occupancy,
        ray_occupancy=np.zeros((1, lattice.size, 1)),
        ray_weights=np.zeros((lattice.size, 1)),
    )
    assert obstacle_cost(100, 0, sgrid, 0.1) == pytest.approx(lattice.cell_volumes[100])
    assert obstacle_cost(101, 0, sgrid, 0.1) == 0.0

    tables = build_pair_tables(lattice, DiversityParams(), FOV)
    model = CostModel(lattice, tables, sgrid, CinePrior.zeros(lattice), Weights(), r_max=0.1)
    assert model.obstacle[0, 100] == pytest.approx(lattice.cell_volumes[100])
    assert model.obstacle[0].sum() == pytest.approx(lattice.cell_volumes[100])


def test_coincident_second_uav_pays_full_pairwise():
    model = random_model(seed=3)
    s = 17
    first = WaypointPath(uav_id=0, states=(s, s, s))
    terms = model.terms(s, 1, [first])
    assert terms["div"] == 1.0
    assert terms["col"] == 1.0
    assert terms["vis"] == 2.0
    assert model.terms(s, 1)["div"] == 0.0


def test_costmap_matches_from_scratch_terms():
    model = random_model(seed=5)
    lattice, sgrid = model.lattice, model.sgrid
    params, actor = model.tables.params, np.zeros(3)
    first = WaypointPath(uav_id=0, states=(4, 13, 22))
    values = model.costmap([first]).values
    positions = sgrid.positions

    rng = np.random.default_rng(2)
    for t, s in zip(rng.integers(0, 3, size=25), rng.integers(0, lattice.size, size=25)):
        p, q = positions[t, s], positions[t, first.states[t]]
        near = np.linalg.norm(positions[t] - p, axis=1) <= model.r_max
        expected = (
            float(np.dot(sgrid.ray_occupancy[t, s], sgrid.ray_weights[s]))
            + float(np.sum(sgrid.occupancy[t, near] * lattice.cell_volumes[near]))
            + model.prior[s]
            + diversity_pair(p, q, params)
            + collision_pair(p, q, params)
            + visibility_pair(p, q, actor, FOV)
            + visibility_pair(q, p, actor, FOV)
        )
        assert values[t, s] == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert state_cost(s, t, None, [first], model.tables, sgrid, model.prior, model.weights,
                          model.r_max) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_incremental_costmap_equals_full_recomputation():
    model = random_model(seed=9)
    rng = np.random.default_rng(9)
    paths = [WaypointPath(uav_id=i, states=tuple(int(s) for s in rng.integers(0, model.lattice.size, size=3)))
             for i in range(3)]
    accumulator = model.pairwise_accumulator()
    for path in paths:
        model.add_fixed(accumulator, path)
    np.testing.assert_array_equal(model.unary + accumulator, model.costmap(paths).values)


def test_weights_scale_terms():
    base = random_model(seed=1)
    doubled = random_model(seed=1, weights=Weights().scaled(2.0))
    first = WaypointPath(uav_id=0, states=(0, 1, 2))
    for name in TERMS:
        assert doubled.terms(5, 0, [first])[name] == pytest.approx(2.0 * base.terms(5, 0, [first])[name])
