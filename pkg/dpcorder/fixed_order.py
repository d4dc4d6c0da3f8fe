"""
Minimum sum power for a fixed dirty-paper coding order.

For a fixed order the uplink problem has a closed-form solution obtained by
walking the order backwards: the user decoded last sees no interference,
and every earlier user is whitened against the users decoded after it.
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from dpcorder.instance import (
    InterferenceMatrix,
    PowerAllocation,
    PrecodingOrder,
    ProblemInstance,
    mac_rates,
    sinr_from_rate,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FixedOrderSolution:
    """
    Powers that make every rate constraint of one order tight.

    interference_matrices holds [Z_1, ..., Z_M, Z_{M+1} = I], position
    indexed, for reuse by the certificate and the duality transform.
    """

    order: PrecodingOrder
    powers: PowerAllocation
    achieved_rates: np.ndarray
    interference_matrices: List[InterferenceMatrix]

    @property
    def sum_power(self) -> float:
        return self.powers.sum_power


def solve_fixed_order(instance: ProblemInstance, order: PrecodingOrder) -> FixedOrderSolution:
    """
    Closed-form backward recursion for one order.

    From the last position down to the first,
    p_{pi(m)} = (2^{R_{pi(m)}} - 1) / (h_{pi(m)}^H Z_{m+1}^{-1} h_{pi(m)}),
    then Z_m = Z_{m+1} + p_{pi(m)} h_{pi(m)} h_{pi(m)}^H.

    Args:
        instance: channels and rate targets
        order: decoding order of the dual uplink

    Returns:
        FixedOrderSolution with every constraint tight
    """
    if order.num_users != instance.num_users:
        raise ValueError(f"order has {order.num_users} users, instance has {instance.num_users}")

    dim = instance.num_tx_antennas
    powers = np.zeros(instance.num_users)
    sinr_targets = sinr_from_rate(instance.rate_targets)

    chain = [InterferenceMatrix.identity(dim)]
    current = np.eye(dim, dtype=complex)
    for user in reversed(order.perm):
        z_next = chain[-1]
        if sinr_targets[user] > 0.0:
            h = instance.channels[user]
            powers[user] = sinr_targets[user] / z_next.gain(h)
            current = current + powers[user] * np.outer(h, h.conj())
            current = 0.5 * (current + current.conj().T)
            chain.append(InterferenceMatrix(current.copy()))
        else:
            # zero-rate users are transparent
            chain.append(z_next)
    chain.reverse()

    allocation = PowerAllocation(powers)
    rates = mac_rates(instance, order, allocation)
    logger.debug(f"fixed order {order.to_one_based()}: sum power {allocation.sum_power:.6g}")
    return FixedOrderSolution(
        order=order,
        powers=allocation,
        achieved_rates=rates,
        interference_matrices=chain,
    )


def sum_power(solution: FixedOrderSolution) -> float:
    """Total uplink (equivalently downlink) power of a fixed-order solution."""
    return float(np.sum(solution.powers.powers))
