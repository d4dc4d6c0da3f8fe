#!/usr/bin/env python3
"""
Tests for the uplink to downlink transformation.
"""

import itertools
import os
import sys

import numpy as np
import pytest

# Add the parent directory to path to import our modules
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dpcorder.duality import bc_sinr, mac_to_bc, time_sharing_downlink
from dpcorder.fixed_order import solve_fixed_order
from dpcorder.instance import (
    BeamformerSet,
    PrecodingOrder,
    ProblemInstance,
    rate_from_sinr,
    sample_rayleigh_instance,
)
from dpcorder.relaxation import ellipsoid_solve


def test_single_user():
    instance = ProblemInstance(channels=[[3.0, 4.0]], rate_targets=[1.0])
    solution = solve_fixed_order(instance, PrecodingOrder.identity(1))
    downlink = mac_to_bc(instance, solution.order, solution.powers)
    assert downlink.beams.beamformers[0] == pytest.approx(np.array([0.6, 0.8]))
    assert downlink.beams.downlink_powers == pytest.approx(solution.powers.powers)
    assert downlink.sinrs[0] == pytest.approx(solution.powers.powers[0] * 25.0)


def test_orthogonal_users():
    instance = ProblemInstance(channels=[[2.0, 0.0], [0.0, 1.0]], rate_targets=[1.0, 2.0])
    for perm in itertools.permutations(range(2)):
        solution = solve_fixed_order(instance, PrecodingOrder(perm))
        downlink = mac_to_bc(instance, solution.order, solution.powers)
        assert np.allclose(np.abs(downlink.beams.beamformers), np.eye(2))
        assert downlink.beams.downlink_powers == pytest.approx(solution.powers.powers)


def test_power_and_sinr_preserved():
    """Same sum power, SINR targets met, rates equal the uplink rates"""
    for seed in range(30):
        instance = sample_rayleigh_instance(3, 3, 1.5, seed=seed)
        for perm in itertools.permutations(range(3)):
            solution = solve_fixed_order(instance, PrecodingOrder(perm))
            downlink = mac_to_bc(instance, solution.order, solution.powers)
            assert downlink.sum_power == pytest.approx(solution.sum_power, rel=1e-8)
            assert downlink.sinrs == pytest.approx(instance.sinr_targets, rel=1e-6)
            assert rate_from_sinr(downlink.sinrs) == pytest.approx(solution.achieved_rates, abs=1e-6)
            norms = np.linalg.norm(downlink.beams.beamformers, axis=1)
            assert np.allclose(norms, 1.0, atol=1e-12)


def test_bc_sinr_zero_power():
    instance = sample_rayleigh_instance(2, 2, 1.0, seed=0)
    beams = BeamformerSet(beamformers=[[1.0, 0.0], [0.0, 1.0]], downlink_powers=[0.0, 0.0])
    assert np.all(bc_sinr(instance, PrecodingOrder.identity(2), beams) == 0.0)


def test_bc_sinr_scalar():
    instance = ProblemInstance(channels=[[1.0]], rate_targets=[1.0])
    beams = BeamformerSet(beamformers=[[1.0]], downlink_powers=[1.0])
    assert bc_sinr(instance, PrecodingOrder.identity(1), beams) == pytest.approx([1.0])


def test_bc_sinr_interference_from_later_encoded_users():
    """Position m only sees users at earlier positions"""
    instance = ProblemInstance(channels=[[1.0], [1.0]], rate_targets=[1.0, 1.0])
    beams = BeamformerSet(beamformers=[[1.0], [1.0]], downlink_powers=[1.0, 2.0])
    sinrs = bc_sinr(instance, PrecodingOrder((0, 1)), beams)
    # user 1 at position 1 sees nobody; user 2 at position 2 sees user 1
    assert sinrs == pytest.approx([1.0, 1.0])


def test_zero_target_user_gets_no_power():
    instance = sample_rayleigh_instance(3, 3, 1.0, seed=4).with_targets([1.0, 0.0, 2.0])
    solution = solve_fixed_order(instance, PrecodingOrder((0, 1, 2)))
    downlink = mac_to_bc(instance, solution.order, solution.powers)
    assert downlink.beams.downlink_powers[1] == 0.0
    assert downlink.sum_power == pytest.approx(solution.sum_power, rel=1e-8)


def test_time_sharing_phases_share_power():
    instance = ProblemInstance(channels=[[1.0], [1.0]], rate_targets=[1.0, 1.0])
    solution = ellipsoid_solve(instance)
    orders = solution.time_sharing.orders if solution.time_sharing else [solution.order]
    phases = time_sharing_downlink(instance, orders, solution.powers)
    assert len(phases) == len(orders)
    for phase in phases:
        assert phase.sum_power == pytest.approx(solution.sum_power, rel=1e-8)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
