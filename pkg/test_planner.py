#!/usr/bin/env python3
"""
Planner Test Suite
Backward induction, path extraction, greedy sequential planning and the exhaustive oracle
"""

import itertools

import numpy as np
import pytest

from conftest import SMALL_SPEC, random_model
from costmodel import CostMap, Weights, state_cost
from errors import NumericError, SizeLimitError
from lattice import LatticeSpec, SphericalIndex, build_lattice
from planner import (
    ExhaustiveLimits,
    WaypointPath,
    backward_induction,
    count_paths,
    enumerate_paths,
    extract_path,
    path_cost,
    plan_exhaustive,
    plan_greedy,
)

TINY_SPEC = LatticeSpec(n_theta=3, n_phi=3, rho_values=(2.0, 3.0))


@pytest.fixture(scope="module")
def small_lattice():
    return build_lattice(LatticeSpec(SMALL_SPEC.n_theta, SMALL_SPEC.n_phi, SMALL_SPEC.rho_values, horizon_steps=3))


def test_terminal_layer_equals_costmap(small_lattice):
    costs = CostMap(np.random.default_rng(0).random((1, small_lattice.size)))
    V = backward_induction(costs, small_lattice)
    np.testing.assert_array_equal(V.values, costs.values)
    assert extract_path(V, costs, small_lattice, 7).states == (7,)


def test_uniform_cost_accumulates(small_lattice):
    costs = CostMap(np.full((5, small_lattice.size), 2.5))
    V = backward_induction(costs, small_lattice)
    assert np.allclose(V.values[0], 12.5)


def test_value_map_matches_enumeration(small_lattice):
    rng = np.random.default_rng(1)
    costs = CostMap(rng.random((3, small_lattice.size)))
    V = backward_induction(costs, small_lattice)
    steps = np.arange(3)
    for s in range(small_lattice.size):
        paths = enumerate_paths(small_lattice, s, 3)
        assert V.values[0, s] == pytest.approx(costs.values[steps, paths].sum(axis=1).min(), rel=1e-12)


def test_path_follows_zero_chain(small_lattice):
    costs = np.full((3, small_lattice.size), 100.0)
    chain = [0, small_lattice.neighbor_lists[0][-1]]
    chain.append(int(small_lattice.neighbor_lists[chain[1]][-1]))
    for t, s in enumerate(chain):
        costs[t, s] = 0.0
    cm = CostMap(costs)
    path = extract_path(backward_induction(cm, small_lattice), cm, small_lattice, 0)
    assert list(path.states) == chain
    assert path_cost(path, cm) == 0.0


def test_extracted_path_cost_equals_value(small_lattice):
    rng = np.random.default_rng(2)
    for _ in range(20):
        cm = CostMap(rng.random((3, small_lattice.size)))
        V = backward_induction(cm, small_lattice)
        start = int(rng.integers(small_lattice.size))
        path = extract_path(V, cm, small_lattice, start)
        assert path_cost(path, cm) == pytest.approx(V.values[0, start], rel=1e-9)
        for a, b in zip(path.states, path.states[1:]):
            assert small_lattice.is_neighbor(a, b)


def test_non_finite_costmap_rejected(small_lattice):
    costs = np.zeros((2, small_lattice.size))
    costs[1, 3] = np.nan
    with pytest.raises(NumericError):
        backward_induction(CostMap(costs), small_lattice)


def test_count_matches_enumeration(small_lattice):
    for start in (0, 10, 40):
        assert count_paths(small_lattice, start, 3) == len(enumerate_paths(small_lattice, start, 3))


def test_single_uav_greedy_is_optimal():
    for seed in range(100):
        model = random_model(seed=seed)
        start = seed % model.lattice.size
        greedy = plan_greedy([start], model)
        exhaustive = plan_exhaustive([start], model)
        assert greedy.total_cost == pytest.approx(exhaustive.total_cost, rel=1e-9)


def test_greedy_bounded_below_by_joint_optimum():
    for seed in range(20):
        model = random_model(spec=TINY_SPEC, horizon_steps=2, seed=seed)
        rng = np.random.default_rng(seed)
        starts = [int(s) for s in rng.integers(0, model.lattice.size, size=2)]
        greedy = plan_greedy(starts, model)
        joint = plan_exhaustive(starts, model)
        assert greedy.total_cost >= joint.total_cost - 1e-9
        assert joint.total_cost == pytest.approx(model.joint_cost(joint.paths), rel=1e-9)

        # independent enumeration, second UAV in the outer loop
        best = min(
            model.joint_cost([WaypointPath(0, tuple(a)), WaypointPath(1, tuple(b))])
            for b in enumerate_paths(model.lattice, starts[1], 2)
            for a in enumerate_paths(model.lattice, starts[0], 2)
        )
        assert joint.total_cost == pytest.approx(best, rel=1e-9)


def test_decoupled_objective_greedy_is_joint_optimal():
    weights = Weights(lambda_div=0.0, lambda_col=0.0, lambda_vis=0.0)
    for seed in range(5):
        model = random_model(spec=TINY_SPEC, horizon_steps=2, seed=seed, weights=weights)
        greedy = plan_greedy([0, 9], model)
        joint = plan_exhaustive([0, 9], model)
        assert greedy.total_cost == pytest.approx(joint.total_cost, rel=1e-9)


def test_sequential_optimality_and_bellman():
    model = random_model(seed=4)
    plan = plan_greedy([3, 30, 60], model)
    steps = np.arange(model.horizon_steps)
    lattice = model.lattice
    for i, path in enumerate(plan.paths):
        costmap = model.costmap(plan.paths[:i])
        np.testing.assert_array_equal(costmap.values, plan.cost_maps[i].values)
        candidates = enumerate_paths(lattice, path.states[0], model.horizon_steps)
        assert plan.costs[i] == pytest.approx(costmap.values[steps, candidates].sum(axis=1).min(), rel=1e-9)

        V = plan.value_maps[i].values
        for t in range(model.horizon_steps - 1):
            for s in (0, 17, 44, 71):
                expected = costmap.values[t, s] + V[t + 1, lattice.neighbor_lists[s]].min()
                assert V[t, s] == pytest.approx(expected, rel=1e-12)
    assert plan.total_cost == pytest.approx(model.joint_cost(plan.paths), rel=1e-9)


def test_greedy_cost_maps_match_state_cost_everywhere():
    model = random_model(seed=4)
    plan = plan_greedy([3, 30, 60], model)
    for i, costmap in enumerate(plan.cost_maps):
        fixed = plan.paths[:i]
        for t in range(model.horizon_steps):
            for s in range(model.lattice.size):
                expected = state_cost(s, t, None, fixed, model.tables, model.sgrid, model.prior, model.weights,
                                      model.r_max)
                assert costmap.values[t, s] == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_second_uav_departs_from_first():
    weights = Weights(lambda_occ=0.0, lambda_obs=0.0, lambda_cine=0.0)
    model = random_model(seed=6, weights=weights)
    plan = plan_greedy([20, 20], model)
    first, second = plan.paths
    assert second.states[0] == first.states[0]
    assert all(a != b for a, b in zip(first.states[1:], second.states[1:]))


def test_scaling_all_weights_keeps_the_plan():
    for seed in range(10):
        base = random_model(seed=seed)
        scaled = random_model(seed=seed, weights=Weights().scaled(3.7))
        starts = [int(s) for s in np.random.default_rng(seed).integers(0, base.lattice.size, size=3)]
        plan, plan_scaled = plan_greedy(starts, base), plan_greedy(starts, scaled)
        assert [p.states for p in plan_scaled.paths] == [p.states for p in plan.paths]
        assert plan_scaled.total_cost == pytest.approx(3.7 * plan.total_cost, rel=1e-9)


def test_plan_is_deterministic():
    a = plan_greedy([1, 2, 3], random_model(seed=8))
    b = plan_greedy([1, 2, 3], random_model(seed=8))
    assert a.paths == b.paths
    assert a.costs == b.costs


def test_uav_ids_follow_input_order():
    plan = plan_greedy([5, 6], random_model(seed=2), uav_ids=[7, 3])
    assert [p.uav_id for p in plan.paths] == [7, 3]
    assert plan.path_for(3).states[0] == 6
    with pytest.raises(KeyError):
        plan.path_for(0)


def test_default_lattice_computed_states():
    model = random_model(spec=LatticeSpec(), horizon_steps=5, seed=0, r_max=0.5)
    plan = plan_greedy([0, 100, 200], model)
    assert all(cm.values.size == 2880 for cm in plan.cost_maps)


def test_exhaustive_size_limit():
    model = random_model(seed=0)
    with pytest.raises(SizeLimitError):
        plan_exhaustive([0, 1], model, ExhaustiveLimits(max_joint_paths=10))


def test_plan_dump_breaks_down_costs():
    model = random_model(seed=12)
    plan = plan_greedy([0, 40], model)
    dump = plan.to_dict(model)
    assert dump["lattice"] == [3, 3, 8]
    assert len(dump["uavs"]) == 2
    for uav, cost in zip(dump["uavs"], plan.costs):
        assert len(uav["waypoints"]) == model.horizon_steps
        assert sum(step["cost"] for step in uav["waypoints"]) == pytest.approx(cost, rel=1e-9)
        assert set(uav["waypoints"][0]["terms"]) == {"occ", "obs", "cine", "div", "col", "vis"}
        for step in uav["waypoints"]:
            assert model.lattice.spec.linear(SphericalIndex(*step["index"])) == step["state"]
    assert dump["uavs"][0]["waypoints"][0]["terms"]["div"] == 0.0


def test_joint_enumeration_order_independent():
    model = random_model(spec=TINY_SPEC, horizon_steps=2, seed=21)
    forward = plan_exhaustive([2, 11], model)
    backward = plan_exhaustive([11, 2], model)
    assert forward.total_cost == pytest.approx(backward.total_cost, rel=1e-9)
    pairs = itertools.product(enumerate_paths(model.lattice, 2, 2), enumerate_paths(model.lattice, 11, 2))
    assert sum(1 for _ in pairs) == count_paths(model.lattice, 2, 2) * count_paths(model.lattice, 11, 2)
