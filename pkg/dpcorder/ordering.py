"""
Precoding order search: exhaustive oracle, certificate-driven heuristic and
the random baseline.
"""

import enum
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from dpcorder.certificate import DualCertificate, Verdict, certify, lagrange_multipliers
from dpcorder.config import MAX_EXHAUSTIVE_USERS
from dpcorder.errors import SizeLimitError
from dpcorder.fixed_order import FixedOrderSolution, solve_fixed_order
from dpcorder.instance import PrecodingOrder, ProblemInstance
from dpcorder.metrics import record_heuristic_termination
from dpcorder.utils.seeding import to_uint64

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-10


class TerminationReason(str, enum.Enum):
    CERTIFICATE_OPTIMAL = "CertificateOptimal"
    CERTIFICATE_BOUNDARY = "CertificateBoundary"
    VERTEX_REVISITED = "VertexRevisited"
    ITERATION_CAP = "IterationCap"


@dataclass
class HeuristicTrace:
    """
    Orders visited by heuristic_search with their multipliers and powers.

    Only the last entry of visited_orders may repeat an earlier one (the
    revisit that stopped the search).
    """

    visited_orders: List[PrecodingOrder] = field(default_factory=list)
    multipliers: List[np.ndarray] = field(default_factory=list)
    sum_powers: List[float] = field(default_factory=list)
    termination: Optional[TerminationReason] = None

    @property
    def iterations(self) -> int:
        return len(self.sum_powers)


def _better(candidate: float, incumbent: float) -> bool:
    """Strictly smaller beyond the relative tie tolerance."""
    return candidate < incumbent - TIE_RTOL * abs(incumbent)


def _solve_chunk(instance: ProblemInstance, perms: List[Tuple[int, ...]]) -> Tuple[float, Tuple[int, ...]]:
    best_power, best_perm = math.inf, None
    for perm in perms:
        power = solve_fixed_order(instance, PrecodingOrder(perm)).sum_power
        if best_perm is None or _better(power, best_power):
            best_power, best_perm = power, perm
    return best_power, best_perm


def exhaustive_search(instance: ProblemInstance, threads: int = 1) -> Tuple[PrecodingOrder, FixedOrderSolution]:
    """
    Minimum sum power over all M! orders.

    Permutations are visited in lexicographic order and the incumbent is
    only replaced by a strictly better one, so ties within a relative 1e-10
    go to the lexicographically smallest order. With threads > 1 the
    permutations are split into contiguous chunks whose winners are reduced
    in the same order, which gives the same answer.

    Raises:
        SizeLimitError: if M > 8
    """
    num_users = instance.num_users
    if num_users > MAX_EXHAUSTIVE_USERS:
        raise SizeLimitError(
            f"exhaustive search is limited to {MAX_EXHAUSTIVE_USERS} users, got {num_users}"
        )

    perms = list(itertools.permutations(range(num_users)))
    if threads > 1 and len(perms) > 1:
        size = math.ceil(len(perms) / threads)
        chunks = [perms[i:i + size] for i in range(0, len(perms), size)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda chunk: _solve_chunk(instance, chunk), chunks))
    else:
        results = [_solve_chunk(instance, perms)]

    best_power, best_perm = results[0]
    for power, perm in results[1:]:
        if _better(power, best_power):
            best_power, best_perm = power, perm

    order = PrecodingOrder(best_perm)
    logger.debug(f"exhaustive search over {len(perms)} orders: best {order.to_one_based()} at {best_power:.6g}")
    return order, solve_fixed_order(instance, order)


def heuristic_search(
    instance: ProblemInstance,
    initial_order: Optional[PrecodingOrder] = None,
    max_iters: Optional[int] = None,
    tie_tol: float = 1e-7,
) -> Tuple[PrecodingOrder, FixedOrderSolution, DualCertificate, HeuristicTrace]:
    """
    Resort the users by their Lagrange multipliers until the order certifies.

    Each step solves the current order in closed form, computes its
    multipliers and sorts the users by ascending multiplier (stable, so tied
    users keep their current relative order). The search stops when the
    certificate is Optimal or TimeSharingBoundary, when the resorted order
    was visited before, or after max_iters steps (default 2 * M).

    Returns:
        The best visited order, its solution and certificate, and the trace
    """
    num_users = instance.num_users
    order = PrecodingOrder.identity(num_users) if initial_order is None else initial_order
    if order.num_users != num_users:
        raise ValueError(f"initial order has {order.num_users} users, instance has {num_users}")
    if max_iters is None:
        max_iters = 2 * num_users
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")

    trace = HeuristicTrace()
    visited = set()
    best = None

    while True:
        solution = solve_fixed_order(instance, order)
        multipliers = lagrange_multipliers(instance, solution)
        certificate = certify(multipliers, tie_tol)
        visited.add(order.perm)
        trace.visited_orders.append(order)
        trace.multipliers.append(multipliers)
        trace.sum_powers.append(solution.sum_power)
        if best is None or _better(solution.sum_power, best[1].sum_power):
            best = (order, solution, certificate)

        if certificate.verdict == Verdict.OPTIMAL:
            trace.termination = TerminationReason.CERTIFICATE_OPTIMAL
            break
        if certificate.verdict == Verdict.TIME_SHARING_BOUNDARY:
            trace.termination = TerminationReason.CERTIFICATE_BOUNDARY
            break
        if trace.iterations >= max_iters:
            trace.termination = TerminationReason.ITERATION_CAP
            break

        ranks = np.argsort(multipliers, kind="stable")
        order = PrecodingOrder(tuple(order.perm[k] for k in ranks))
        if order.perm in visited:
            trace.visited_orders.append(order)
            trace.termination = TerminationReason.VERTEX_REVISITED
            break

    record_heuristic_termination(trace.termination.value)
    logger.debug(
        f"heuristic stopped with {trace.termination.value} after {trace.iterations} orders, "
        f"best {best[0].to_one_based()}"
    )
    return best[0], best[1], best[2], trace


def random_order(num_users: int, seed: int) -> PrecodingOrder:
    """Uniformly random order drawn from a seeded generator."""
    rng = np.random.default_rng(to_uint64(seed))
    return PrecodingOrder(tuple(int(u) for u in rng.permutation(num_users)))


def random_order_baseline(instance: ProblemInstance, seed: int) -> FixedOrderSolution:
    """Fixed-order solution of a uniformly random (seeded) order."""
    return solve_fixed_order(instance, random_order(instance.num_users, seed))
