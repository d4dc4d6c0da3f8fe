"""
Uplink to downlink transformation.

The dual uplink decodes pi(1) first with whitened matched filters; the
downlink reuses the filters as beamformers, encodes pi(M) first and picks
downlink powers that reproduce the uplink SINRs. The downlink SINR of the
user at position m only sees the users at positions n < m (the later
encoded ones are cancelled by dirty-paper coding), so the power equations
form a lower-triangular system in position order.
"""

import logging
from dataclasses import dataclass
from typing import List, Union

import numpy as np
from scipy import linalg as sla

from dpcorder.errors import DualityError
from dpcorder.instance import (
    BeamformerSet,
    PowerAllocation,
    PrecodingOrder,
    ProblemInstance,
    interference_chain,
)
from dpcorder.utils.linalg import hermitian_solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DownlinkSolution:
    beams: BeamformerSet
    order: PrecodingOrder
    sinrs: np.ndarray  # achieved downlink SINRs by user
    uplink_sinrs: np.ndarray

    @property
    def sum_power(self) -> float:
        return self.beams.sum_power


def receive_filters(
    instance: ProblemInstance, order: PrecodingOrder, powers: Union[PowerAllocation, np.ndarray]
) -> tuple:
    """
    Normalized whitened matched filters and the uplink SINRs they achieve.

    u_{pi(m)} = Z_{m+1}^{-1} h_{pi(m)} / ||.||, SINR = p h^H Z_{m+1}^{-1} h.
    """
    p = powers.powers if isinstance(powers, PowerAllocation) else np.asarray(powers, dtype=float)
    chain = interference_chain(instance, order, p)
    filters = np.zeros(instance.channels.shape, dtype=complex)
    sinrs = np.zeros(instance.num_users)
    for position, user in enumerate(order.perm):
        h = instance.channels[user]
        z_next = chain[position + 1]
        filtered = hermitian_solve(z_next.factor, h)
        filters[user] = filtered / np.linalg.norm(filtered)
        sinrs[user] = p[user] * float(np.real(np.vdot(h, filtered)))
    return filters, sinrs


def bc_sinr(instance: ProblemInstance, order: PrecodingOrder, beams: BeamformerSet) -> np.ndarray:
    """
    Downlink SINRs under dirty-paper coding, by user.

    gamma_{pi(m)} = pt_{pi(m)} |u_{pi(m)}^H h_{pi(m)}|^2
                    / (1 + sum_{n<m} pt_{pi(n)} |u_{pi(n)}^H h_{pi(m)}|^2)
    """
    # couplings[i, j] = |u_i^H h_j|^2
    couplings = np.abs(beams.beamformers.conj() @ instance.channels.T) ** 2
    powers = beams.downlink_powers
    sinrs = np.zeros(instance.num_users)
    perm = order.perm
    for m, user in enumerate(perm):
        interference = sum(powers[perm[n]] * couplings[perm[n], user] for n in range(m))
        sinrs[user] = powers[user] * couplings[user, user] / (1.0 + interference)
    return sinrs


def mac_to_bc(
    instance: ProblemInstance, order: PrecodingOrder, powers: Union[PowerAllocation, np.ndarray]
) -> DownlinkSolution:
    """
    Downlink beamformers and powers with the uplink SINRs and sum power.

    Args:
        instance: channels and rate targets
        order: the uplink decoding order (pi(M) is encoded first downlink)
        powers: uplink powers, usually from solve_fixed_order

    Returns:
        DownlinkSolution whose SINRs are recomputed from scratch

    Raises:
        DualityError: if the power system is singular or gives negative powers
    """
    p = powers.powers if isinstance(powers, PowerAllocation) else np.asarray(powers, dtype=float)
    filters, uplink_sinrs = receive_filters(instance, order, p)
    couplings = np.abs(filters.conj() @ instance.channels.T) ** 2

    perm = list(order.perm)
    num_users = len(perm)
    system = np.zeros((num_users, num_users))
    rhs = np.ones(num_users)
    for m, user in enumerate(perm):
        if uplink_sinrs[user] <= 0.0:
            # silent user: no power and no interference
            system[m, m] = 1.0
            rhs[m] = 0.0
            continue
        system[m, m] = couplings[user, user] / uplink_sinrs[user]
        for n in range(m):
            system[m, n] = -couplings[perm[n], user]

    try:
        by_position = sla.solve_triangular(system, rhs, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise DualityError(f"downlink power system is singular: {e}")
    if not np.all(np.isfinite(by_position)) or np.any(by_position < -1e-12 * max(1.0, np.max(np.abs(by_position)))):
        raise DualityError(f"downlink power system gave invalid powers {by_position.tolist()}")

    downlink = np.zeros(num_users)
    downlink[perm] = np.maximum(by_position, 0.0)
    beams = BeamformerSet(beamformers=filters, downlink_powers=downlink)
    sinrs = bc_sinr(instance, order, beams)

    uplink_total = float(np.sum(p))
    if uplink_total > 0.0 and abs(beams.sum_power - uplink_total) > 1e-8 * uplink_total:
        logger.warning(f"downlink sum power {beams.sum_power:.12g} differs from uplink {uplink_total:.12g}")
    return DownlinkSolution(beams=beams, order=order, sinrs=sinrs, uplink_sinrs=uplink_sinrs)


def time_sharing_downlink(
    instance: ProblemInstance, orders: List[PrecodingOrder], powers: Union[PowerAllocation, np.ndarray]
) -> List[DownlinkSolution]:
    """
    One downlink beamformer set per time-shared order.

    Every order is transformed at the common uplink powers, so each
    downlink phase uses the same sum power.
    """
    return [mac_to_bc(instance, order, powers) for order in orders]
