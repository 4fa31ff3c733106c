"""
Shared fixtures: small randomized cost models built without a voxel world
"""

import math

import numpy as np
import pytest

from costmodel import CinePrior, CostModel, DiversityParams, Weights, build_pair_tables
from lattice import ActorPose, LatticeSpec, build_lattice
from world import SphericalGrid

SMALL_SPEC = LatticeSpec.uniform(3, 3, 8, rho_min=2.0)


def random_model(spec=SMALL_SPEC, horizon_steps=3, seed=0, weights=None, r_max=1.5, ray_samples=4):
    """CostModel over a hand-filled SphericalGrid with random occupancy, rays and prior"""
    rng = np.random.default_rng(seed)
    spec = LatticeSpec(spec.n_theta, spec.n_phi, spec.rho_values, horizon_steps, spec.step_dt, spec.include_pole)
    lattice = build_lattice(spec)
    tables = build_pair_tables(lattice, DiversityParams(), math.radians(50.0))
    S, T = lattice.size, horizon_steps

    actor_path = [ActorPose(0.0, 0.0, 0.0)] * T
    positions = np.broadcast_to(lattice.world_positions(actor_path[0]), (T, S, 3)).copy()
    sgrid = SphericalGrid(
        lattice=lattice,
        actor_path=actor_path,
        positions=positions,
        occupancy=(rng.random((T, S)) < 0.2).astype(float),
        ray_occupancy=(rng.random((T, S, ray_samples)) < 0.3).astype(float),
        ray_weights=rng.uniform(0.0, 0.5, size=(S, ray_samples)),
    )
    prior = CinePrior(rng.uniform(0.0, 2.0, size=S))
    return CostModel(lattice, tables, sgrid, prior, weights or Weights(), r_max=r_max)


@pytest.fixture
def make_model():
    return random_model
