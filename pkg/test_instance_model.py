#!/usr/bin/env python3
"""
Tests for problem instances, rates and the uplink capacity region.
"""

import os
import sys

import numpy as np
import pytest

# Add the parent directory to path to import our modules
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from dpcorder.errors import InstanceValidationError, NotPositiveDefiniteError, SizeLimitError
from dpcorder.instance import (
    BeamformerSet,
    InterferenceMatrix,
    PowerAllocation,
    PrecodingOrder,
    ProblemInstance,
    capacity_region_check,
    capacity_slacks,
    effective_gain,
    interference_chain,
    mac_rates,
    nested_suffix_sets,
    rate_from_sinr,
    rate_targets_from_sinr,
    sample_rayleigh_instance,
    sinr_from_rate,
    tight_subsets,
)
from dpcorder import utils
from dpcorder.utils.linalg import hermitian_factor, identity_plus_outer, logdet_from_factor, quadratic_form
from dpcorder.utils.seeding import derive_seed


def random_orders(num_users, count, seed):
    rng = np.random.default_rng(seed)
    return [PrecodingOrder(tuple(rng.permutation(num_users))) for _ in range(count)]


def test_instance_validation():
    """Invalid channels and targets are rejected"""
    with pytest.raises(InstanceValidationError):
        ProblemInstance(channels=[[1.0, 0.0], [0.0, 0.0]], rate_targets=[1.0, 1.0])
    with pytest.raises(InstanceValidationError):
        ProblemInstance(channels=[[1.0]], rate_targets=[-1.0])
    with pytest.raises(InstanceValidationError):
        ProblemInstance(channels=[[np.inf]], rate_targets=[1.0])
    with pytest.raises(InstanceValidationError):
        ProblemInstance(channels=[[1.0], [2.0]], rate_targets=[1.0])
    with pytest.raises(InstanceValidationError):
        ProblemInstance(channels=[[1.0]], rate_targets=[1100.0])
    # InstanceValidationError is also a ValueError
    with pytest.raises(ValueError):
        ProblemInstance(channels=np.zeros((0, 2)), rate_targets=[])


def test_instance_is_read_only():
    instance = ProblemInstance(channels=[[1.0, 2.0]], rate_targets=[1.0])
    with pytest.raises(ValueError):
        instance.channels[0, 0] = 5.0
    assert instance.num_users == 1
    assert instance.num_tx_antennas == 2


def test_order_validation():
    """Orders must be bijections"""
    with pytest.raises(InstanceValidationError):
        PrecodingOrder((0, 0, 1))
    with pytest.raises(InstanceValidationError):
        PrecodingOrder.from_one_based([1, 3])
    order = PrecodingOrder.from_one_based([2, 3, 1])
    assert order.perm == (1, 2, 0)
    assert order.to_one_based() == [2, 3, 1]
    assert list(order.positions()) == [2, 0, 1]


def test_power_allocation_rejects_negative():
    with pytest.raises(InstanceValidationError):
        PowerAllocation([1.0, -0.5])
    assert PowerAllocation([1.0, 3.0]).sum_power == 4.0


def test_beamformer_norms():
    with pytest.raises(InstanceValidationError):
        BeamformerSet(beamformers=[[1.0, 1.0]], downlink_powers=[1.0])
    beams = BeamformerSet(beamformers=[[1.0, 0.0], [0.0, 1j]], downlink_powers=[1.0, 2.0])
    assert beams.sum_power == 3.0


def test_sample_is_deterministic():
    """Same seed gives bit-identical instances"""
    a = sample_rayleigh_instance(3, 3, 2.0, seed=42)
    b = sample_rayleigh_instance(3, 3, 2.0, seed=42)
    assert np.array_equal(a.channels, b.channels)
    assert np.array_equal(a.rate_targets, [2.0, 2.0, 2.0])
    c = sample_rayleigh_instance(3, 3, 2.0, seed=43)
    assert not np.array_equal(a.channels, c.channels)


def test_sample_shapes_and_negative_seed():
    instance = sample_rayleigh_instance(1, 1, 1.0, seed=-5)
    assert instance.channels.shape == (1, 1)
    assert list(instance.rate_targets) == [1.0]


def test_sample_unit_variance():
    """Mean |h|^2 over many entries is close to 1"""
    instance = sample_rayleigh_instance(1000, 100, 1.0, seed=3)
    mean_power = float(np.mean(np.abs(instance.channels) ** 2))
    assert 0.99 <= mean_power <= 1.01


def test_rate_sinr_maps():
    assert rate_from_sinr(1.0) == pytest.approx(1.0)
    assert rate_from_sinr(0.0) == 0.0
    assert sinr_from_rate(3.0) == pytest.approx(7.0)
    rates = np.linspace(0.0, 60.0, 121)
    assert np.allclose(rate_from_sinr(sinr_from_rate(rates)), rates, rtol=1e-12, atol=0)
    assert np.allclose(rate_targets_from_sinr([1.0, 3.0]), [1.0, 2.0])
    with pytest.raises(InstanceValidationError):
        rate_targets_from_sinr([-1.0])


def test_effective_gain():
    assert effective_gain(np.array([1.0, 0.0]), np.eye(2)) == pytest.approx(1.0)
    assert effective_gain(np.array([1.0, 0.0]), 2 * np.eye(2)) == pytest.approx(0.5)

    rng = np.random.default_rng(0)
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    z = np.eye(3) + np.outer(h, h.conj())
    explicit = float(np.real(h.conj() @ np.linalg.inv(z) @ h))
    assert effective_gain(h, z) == pytest.approx(explicit, rel=1e-12)


def test_effective_gain_errors():
    with pytest.raises(InstanceValidationError):
        effective_gain(np.array([1.0, 0.0, 0.0]), np.eye(2))
    with pytest.raises(NotPositiveDefiniteError):
        effective_gain(np.array([1.0, 0.0]), -np.eye(2))


def test_mac_rates_simple():
    instance = ProblemInstance(channels=[[1.0]], rate_targets=[1.0])
    order = PrecodingOrder.identity(1)
    assert mac_rates(instance, order, PowerAllocation([1.0])) == pytest.approx([1.0])
    zero = sample_rayleigh_instance(3, 2, 1.0, seed=1)
    assert np.all(mac_rates(zero, PrecodingOrder.identity(3), np.zeros(3)) == 0.0)


def test_determinant_lemma_and_sum_rate():
    """Rates match the determinant lemma and sum to log2|Z_1| for every order"""
    for seed in range(20):
        instance = sample_rayleigh_instance(4, 3, 1.0, seed=seed)
        powers = np.random.default_rng(seed).exponential(2.0, size=4)
        for order in random_orders(4, 3, seed):
            chain = interference_chain(instance, order, powers)
            rates = mac_rates(instance, order, powers)
            for m, user in enumerate(order.perm):
                gain = effective_gain(instance.channels[user], chain[m + 1])
                assert rates[user] == pytest.approx(np.log2(1.0 + powers[user] * gain), rel=1e-10)
            assert float(np.sum(rates)) == pytest.approx(chain[0].logdet / np.log(2.0), rel=1e-10)


def test_interference_matrix_eigenvalues():
    instance = sample_rayleigh_instance(3, 3, 1.0, seed=9)
    z = InterferenceMatrix.from_users(instance, np.array([1.0, 2.0, 0.5]), [0, 2])
    assert np.allclose(z.matrix, z.matrix.conj().T)
    assert np.min(np.linalg.eigvalsh(z.matrix)) >= 1.0 - 1e-12


def test_capacity_region_trivial():
    instance = ProblemInstance(channels=[[1.0], [1.0]], rate_targets=[0.0, 0.0])
    assert capacity_region_check(instance, np.zeros(2), [0.0, 0.0]).feasible

    single = ProblemInstance(channels=[[1.0]], rate_targets=[1.0])
    check = capacity_region_check(single, np.array([1.0]), [1.0])
    assert check.feasible
    assert check.slack == pytest.approx(0.0, abs=1e-12)


def test_capacity_region_violation():
    instance = ProblemInstance(channels=[[1.0], [1.0]], rate_targets=[1.0, 1.0])
    check = capacity_region_check(instance, np.array([1.0, 1.0]), [1.0, 1.0])
    # log2(3) < 2 on the pair
    assert not check.feasible
    assert check.violated_subset == (0, 1)
    assert check.slack == pytest.approx(np.log2(3.0) - 2.0)


def test_vertices_lie_in_region():
    for seed in range(10):
        instance = sample_rayleigh_instance(3, 2, 1.0, seed=seed)
        powers = np.random.default_rng(seed).exponential(1.0, size=3)
        for order in random_orders(3, 2, seed):
            rates = mac_rates(instance, order, powers)
            assert capacity_region_check(instance, powers, rates, tol=1e-9).feasible


def test_tight_subsets_are_nested_suffixes():
    instance = sample_rayleigh_instance(3, 3, 1.0, seed=5)
    powers = np.array([0.7, 1.3, 2.1])
    order = PrecodingOrder((2, 0, 1))
    rates = mac_rates(instance, order, powers)
    assert sorted(tight_subsets(instance, powers, rates, tol=1e-9)) == sorted(nested_suffix_sets(order))


def test_region_size_limit():
    instance = sample_rayleigh_instance(21, 1, 0.1, seed=0)
    with pytest.raises(SizeLimitError):
        capacity_slacks(instance, np.zeros(21), instance.rate_targets)


def test_factor_helpers():
    """Log-det comes from the Cholesky factor; the helper set has no unused entries"""
    instance = sample_rayleigh_instance(3, 3, 1.0, seed=4)
    z = identity_plus_outer(instance.channels, np.array([0.5, 1.0, 2.0]), 3)
    factor = hermitian_factor(z)
    _, expected = np.linalg.slogdet(z)
    assert logdet_from_factor(factor) == pytest.approx(float(expected), rel=1e-12)
    h = instance.channels[0]
    assert quadratic_form(factor, h) == pytest.approx(float(np.real(h.conj() @ np.linalg.solve(z, h))), rel=1e-10)
    assert sorted(utils.__all__) == sorted(
        ["hermitian_factor", "hermitian_solve", "logdet_from_factor", "quadratic_form", "identity_plus_outer", "derive_seed"]
    )
    assert not hasattr(utils, "hermitian_logdet")


def test_derive_seed_is_stable():
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2)
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)
    assert 0 <= derive_seed(-1, 0, 0) < 2**64


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
