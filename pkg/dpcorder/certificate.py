"""
Optimality certificate for a fixed dirty-paper coding order.

The rate constraints of a fixed-order solution are all active, so their
Lagrange multipliers follow from stationarity by a forward recursion over
the order positions. The order is optimal for the relaxed problem exactly
when the multipliers increase strictly along the positions; equal
neighbours mean the order is one vertex of a time-sharing solution.

Corollary-style reading used here: theta_m = lambda_m - lambda_{m-1} is the
multiplier of the nested constraint on {pi(m), ..., pi(M)}, so the order is
part of a time-sharing optimum when every theta_m >= 0 and at least one is
zero. (Printing the difference the other way round contradicts the
strict-increase condition and is not used.)
"""

import enum
import logging
import math
from dataclasses import dataclass
from typing import FrozenSet, List, Sequence

import numpy as np

from dpcorder.fixed_order import FixedOrderSolution
from dpcorder.instance import ProblemInstance
from dpcorder.utils.linalg import hermitian_solve

logger = logging.getLogger(__name__)

DEFAULT_TIE_TOL = 1e-7


class Verdict(str, enum.Enum):
    OPTIMAL = "Optimal"
    NOT_OPTIMAL = "NotOptimal"
    TIME_SHARING_BOUNDARY = "TimeSharingBoundary"


@dataclass(frozen=True, eq=False)
class DualCertificate:
    """
    Multipliers by order position, the verdict, and the tied positions.

    tie_positions are 0-based positions m >= 1 with
    |lambda_m - lambda_{m-1}| <= tie_tol (after normalizing by lambda_1).
    """

    multipliers: np.ndarray
    verdict: Verdict
    tie_positions: FrozenSet[int]


def lagrange_multipliers(
    instance: ProblemInstance, solution: FixedOrderSolution, units: str = "nats"
) -> np.ndarray:
    """
    Multipliers of the rate constraints of a fixed-order solution.

    lambda_m = [1 - h^H (sum_{n<m} lambda_n (Z_n^{-1} - Z_{n+1}^{-1})) h]
               / (h^H Z_m^{-1} h),  with h = h_{pi(m)}.

    Args:
        instance: the instance the solution was computed for
        solution: output of solve_fixed_order (its Z-chain is reused)
        units: "nats" for the price per nat of rate, "bits" for the price
            per bit (nats multiplied by ln 2)

    Returns:
        (M,) multipliers indexed by order position
    """
    if units not in ("nats", "bits"):
        raise ValueError(f"units must be 'nats' or 'bits', got {units!r}")

    chain = solution.interference_matrices
    order = solution.order.perm
    num_users = len(order)
    lambdas = np.zeros(num_users)

    # whitened[n] holds Z_n^{-1} applied to every channel (columns)
    channels_t = instance.channels.T
    whitened = [hermitian_solve(z.factor, channels_t) for z in chain]

    for m, user in enumerate(order):
        h = instance.channels[user]
        correction = 0.0
        for n in range(m):
            difference = whitened[n][:, user] - whitened[n + 1][:, user]
            correction += lambdas[n] * float(np.real(np.vdot(h, difference)))
        gain = float(np.real(np.vdot(h, whitened[m][:, user])))
        lambdas[m] = (1.0 - correction) / gain

    if np.any(lambdas <= 0.0):
        logger.warning(f"non-positive multiplier for order {solution.order.to_one_based()}: {lambdas.tolist()}")

    if units == "bits":
        lambdas = lambdas * math.log(2.0)
    return lambdas


def certify(multipliers: Sequence[float], tie_tol: float = DEFAULT_TIE_TOL) -> DualCertificate:
    """
    Verdict on a fixed order from its multipliers.

    Differences are taken on multipliers normalized by lambda_1, so the
    verdict does not depend on the rate units.
    """
    lambdas = np.asarray(multipliers, dtype=float)
    if lambdas.size == 0:
        raise ValueError("need at least one multiplier")
    if lambdas.size == 1:
        return DualCertificate(multipliers=lambdas, verdict=Verdict.OPTIMAL, tie_positions=frozenset())

    scale = abs(lambdas[0]) if lambdas[0] != 0.0 else 1.0
    differences = np.diff(lambdas) / scale
    ties = frozenset(int(m) + 1 for m in np.flatnonzero(np.abs(differences) <= tie_tol))

    if np.all(differences > tie_tol):
        verdict = Verdict.OPTIMAL
    elif np.all(differences >= -tie_tol) and ties:
        verdict = Verdict.TIME_SHARING_BOUNDARY
    else:
        verdict = Verdict.NOT_OPTIMAL
    return DualCertificate(multipliers=lambdas, verdict=verdict, tie_positions=ties)


def certify_solution(
    instance: ProblemInstance, solution: FixedOrderSolution, tie_tol: float = DEFAULT_TIE_TOL
) -> DualCertificate:
    """Multipliers (in nats) and verdict for a fixed-order solution."""
    return certify(lagrange_multipliers(instance, solution), tie_tol)


def multipliers_by_user(solution: FixedOrderSolution, multipliers: Sequence[float]) -> List[float]:
    """Reorder position-indexed multipliers by user index."""
    by_user = [0.0] * len(multipliers)
    for position, user in enumerate(solution.order.perm):
        by_user[user] = float(multipliers[position])
    return by_user
