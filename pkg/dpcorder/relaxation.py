"""
Convex relaxation of the joint power and precoding order problem.

The relaxation lets the transmitter time-share between orders, which turns
the problem into sum power minimization over the uplink capacity region.
Its Lagrangian dual over the rate prices lambda (bits) is

    g(lambda) = sum_m lambda_m Rbar_m - max_{p >= 0} F_lambda(p),
    F_lambda(p) = sum_m delta_m log2|Z_m| - sum_m p_m,

where the users are sorted by ascending price, delta_m is the price
increment at position m and Z_m collects the users at positions m..M.
g is concave and is maximized with a central-cut ellipsoid method; the
inner maximization is smooth and concave. It is solved by a projected
Newton method with Armijo backtracking along the projection arc instead
of plain projected gradient ascent; the gradient step stays as the
fallback direction when the Newton step is rejected.

The primal solution is recovered from the groups of (numerically) equal
prices: distinct prices mean a single optimal order, equal prices mean the
users of a group time-share their decoding positions.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from dpcorder.certificate import Verdict, certify, lagrange_multipliers
from dpcorder.config import SolverSettings
from dpcorder.errors import SizeLimitError, TimeSharingError
from dpcorder.fixed_order import solve_fixed_order
from dpcorder.instance import (
    LN2,
    InterferenceMatrix,
    PowerAllocation,
    PrecodingOrder,
    ProblemInstance,
    capacity_region_check,
    mac_rates,
)
from dpcorder.metrics import observe_ellipsoid_iterations
from dpcorder.utils.linalg import hermitian_factor, hermitian_solve, logdet_from_factor

logger = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 40
ROUNDING = 64 * float(np.finfo(float).eps)
STALL_RATIO = 0.5
MAX_STALLS = 3
BOUNDARY_FRACTION = 0.99
MAX_TIME_SHARING_ORDERS = 40320
MAX_WARM_START_ORDERS = 120
MAX_CUT_ROUNDS = 20


@dataclass(frozen=True, eq=False)
class InnerSolution:
    """Maximizer of the weighted-rate-minus-power objective for fixed prices."""

    order: PrecodingOrder
    powers: PowerAllocation
    rates: np.ndarray
    objective: float
    residual: float
    tolerance: float
    iterations: int
    converged: bool


@dataclass(frozen=True, eq=False)
class EllipsoidState:
    """
    Ellipsoid {x : (x - c)^T P^{-1} (x - c) <= 1} of the cutting-plane method.
    """

    center: np.ndarray
    shape: np.ndarray
    iteration: int = 0

    @classmethod
    def initial(cls, upper_bound: np.ndarray) -> "EllipsoidState":
        """
        Smallest axis-aligned ellipsoid centred at upper_bound / 2 that
        contains the box [0, upper_bound].
        """
        n = upper_bound.size
        semi_axes = math.sqrt(n) * upper_bound / 2.0
        return cls(center=upper_bound / 2.0, shape=np.diag(semi_axes**2))

    @property
    def dimension(self) -> int:
        return self.center.size

    @property
    def log_det(self) -> float:
        sign, value = np.linalg.slogdet(self.shape)
        return float(value) if sign > 0 else -math.inf

    def width(self, direction: np.ndarray) -> float:
        """sqrt(d^T P d), the support half-width along d."""
        return math.sqrt(max(float(direction @ self.shape @ direction), 0.0))

    def cut(self, normal: np.ndarray) -> "EllipsoidState":
        """
        Central cut keeping {x : normal^T (x - c) <= 0}.

        The shape matrix is re-symmetrized after every update.
        """
        n = self.dimension
        scaled = self.shape @ normal
        denom = math.sqrt(float(normal @ scaled))
        step = scaled / denom
        if n == 1:
            center = self.center - 0.5 * step
            shape = self.shape / 4.0
        else:
            center = self.center - step / (n + 1)
            shape = (n * n / (n * n - 1.0)) * (self.shape - (2.0 / (n + 1)) * np.outer(step, step))
        shape = 0.5 * (shape + shape.T)
        return EllipsoidState(center=center, shape=shape, iteration=self.iteration + 1)


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    dual_value: float
    upper_bound: float


@dataclass(frozen=True, eq=False)
class TimeSharing:
    """Convex combination of decoding orders at one power vector."""

    orders: List[PrecodingOrder]
    weights: np.ndarray
    vertex_rates: np.ndarray  # (K, M), rates of each order by user
    rates: np.ndarray  # weighted combination by user


@dataclass(frozen=True, eq=False)
class RelaxationSolution:
    """
    Result of the relaxed problem.

    multipliers are the rate prices in bits by user; order is the ascending
    price order; achieved_rates are the time-shared rates when time sharing
    is needed and the single-order rates otherwise.
    """

    multipliers: np.ndarray
    powers: PowerAllocation
    achieved_rates: np.ndarray
    order: PrecodingOrder
    time_sharing: Optional[TimeSharing]
    iterations: int
    dual_value: float
    dual_gap_bound: float
    converged: bool
    restarts: int = 0
    trace: List[TraceEntry] = field(default_factory=list)
    time_sharing_error: Optional[str] = None

    @property
    def sum_power(self) -> float:
        return self.powers.sum_power


def lambda_upper_bound(instance: ProblemInstance) -> np.ndarray:
    """
    A-priori size of the rate prices (bits), one entry per user.

    lambda_max_m = ln 2 * 2^{sum_n Rbar_n} / ||h_m||^2: the marginal power
    per bit of user m if it had to carry the whole rate budget alone. Used
    only to size the initial ellipsoid; ellipsoid_solve doubles it when the
    optimum lands on its edge.

    Raises:
        SizeLimitError: if the summed targets overflow the bound
    """
    total_rate = float(np.sum(instance.rate_targets))
    with np.errstate(over="ignore"):
        bound = LN2 * np.exp2(total_rate) / instance.channel_norms_squared()
    if not np.all(np.isfinite(bound)):
        raise SizeLimitError(
            f"summed rate targets of {total_rate:.6g} bits are too large for the price bound"
        )
    return bound


def ascending_price_order(prices: Sequence[float]) -> PrecodingOrder:
    """Users sorted by ascending price, ties broken by ascending index."""
    return PrecodingOrder(tuple(int(u) for u in np.argsort(np.asarray(prices, dtype=float), kind="stable")))


def _inner_terms(
    channels: np.ndarray, delta: np.ndarray, x: np.ndarray, with_hessian: bool = True
) -> Tuple[float, np.ndarray, Optional[np.ndarray]]:
    """
    Value, gradient and Hessian of F in position order.

    channels are the rows h_{pi(1)}, ..., h_{pi(M)}; x the matching powers.
    """
    num_users, dim = channels.shape
    value = -float(np.sum(x))
    gradient = -np.ones(num_users)
    hessian = np.zeros((num_users, num_users)) if with_hessian else None

    suffix = [None] * num_users
    current = np.eye(dim, dtype=complex)
    for n in range(num_users - 1, -1, -1):
        if x[n] > 0.0:
            current = current + x[n] * np.outer(channels[n], channels[n].conj())
        suffix[n] = current

    for n in range(num_users):
        if delta[n] <= 0.0:
            continue
        factor = hermitian_factor(0.5 * (suffix[n] + suffix[n].conj().T))
        value += delta[n] * logdet_from_factor(factor) / LN2
        tail = channels[n:]
        gram = tail.conj() @ hermitian_solve(factor, tail.T)
        gradient[n:] += delta[n] * np.real(np.diag(gram)) / LN2
        if with_hessian:
            hessian[n:, n:] -= delta[n] * np.abs(gram) ** 2 / LN2
    return value, gradient, hessian


def _stationarity_residual(x: np.ndarray, gradient: np.ndarray) -> float:
    positive = x > 0.0
    residual = 0.0
    if np.any(positive):
        residual = float(np.max(np.abs(gradient[positive])))
    if np.any(~positive):
        residual = max(residual, float(np.max(np.maximum(gradient[~positive], 0.0))))
    return residual


def _relative_tolerance(tol: float, gradient: np.ndarray) -> float:
    """tol scaled by the largest weighted rate gain (the gradient plus one)."""
    return tol * (1.0 + float(np.max(gradient + 1.0)))


def _newton_direction(gradient: np.ndarray, hessian: np.ndarray, free: np.ndarray) -> np.ndarray:
    direction = np.zeros_like(gradient)
    if not np.any(free):
        return direction
    curvature = -hessian[np.ix_(free, free)]
    try:
        factor = sla.cho_factor(curvature, lower=True)
    except np.linalg.LinAlgError:
        ridge = 1e-10 * (1.0 + np.trace(curvature))
        try:
            factor = sla.cho_factor(curvature + ridge * np.eye(curvature.shape[0]), lower=True)
        except np.linalg.LinAlgError:
            direction[free] = gradient[free]
            return direction
    direction[free] = sla.cho_solve(factor, gradient[free])
    return direction


def dual_inner_maximize(
    instance: ProblemInstance,
    prices: Sequence[float],
    tol: float = 1e-9,
    max_iters: int = 200,
    initial_powers: Optional[np.ndarray] = None,
) -> InnerSolution:
    """
    Maximize sum_m delta_m log2|Z_m| - sum_m p_m over p >= 0.

    The users are sorted by ascending price (ties by index) and delta_m is
    the price increase at position m. Optimality: the gradient
    g_m = (1/ln 2) sum_{n<=m} delta_n h^H Z_n^{-1} h - 1 satisfies
    |g_m| <= tol' where p > 0 and g_m <= tol' where p = 0, with
    tol' = tol * (1 + max_m (g_m + 1)). The iteration also stops once
    MAX_STALLS consecutive steps leave the objective unchanged up to
    rounding without halving the residual; such a point counts as
    converged.

    Args:
        instance: channels (targets are not used)
        prices: nonnegative rate prices in bits, by user
        tol: stationarity tolerance, relative to the largest rate gain
        max_iters: iteration cap; when hit the best iterate is returned
            with converged=False and its residual
        initial_powers: optional warm start, by user

    Returns:
        InnerSolution with the maximizer, its order and decoding rates
    """
    prices = np.asarray(prices, dtype=float)
    if np.any(prices < 0.0):
        raise ValueError("rate prices must be nonnegative")

    order = ascending_price_order(prices)
    perm = list(order.perm)
    sorted_prices = prices[perm]
    delta = np.diff(sorted_prices, prepend=0.0)
    channels = instance.channels[perm]

    if initial_powers is None:
        x = np.zeros(instance.num_users)
    else:
        x = np.maximum(np.asarray(initial_powers, dtype=float)[perm], 0.0)

    value, gradient, hessian = _inner_terms(channels, delta, x)
    residual = _stationarity_residual(x, gradient)
    tolerance = _relative_tolerance(tol, gradient)
    iterations = 0
    stalls = 0
    while residual > tolerance and iterations < max_iters:
        iterations += 1
        free = (x > 0.0) | (gradient > 0.0)
        # objective changes below this are rounding
        noise = ROUNDING * (1.0 + abs(value))
        accepted = False
        for direction in (_newton_direction(gradient, hessian, free), np.where(free, gradient, 0.0)):
            step = 1.0
            for _ in range(MAX_BACKTRACKS):
                candidate = np.maximum(x + step * direction, 0.0)
                candidate_value, _, _ = _inner_terms(channels, delta, candidate, with_hessian=False)
                if candidate_value >= value + ARMIJO_SLOPE * float(gradient @ (candidate - x)) - noise:
                    accepted = True
                    break
                step *= ARMIJO_SHRINK
            if accepted:
                break
        if not accepted:
            logger.debug(f"inner solver stalled at residual {residual:.3e} after {iterations} iterations")
            break

        previous_value, previous_residual = value, residual
        moved = np.max(np.abs(candidate - x)) > ROUNDING * (1.0 + np.max(x))
        x = candidate
        value, gradient, hessian = _inner_terms(channels, delta, x)
        residual = _stationarity_residual(x, gradient)
        tolerance = _relative_tolerance(tol, gradient)
        if not moved or (value - previous_value <= noise and residual > STALL_RATIO * previous_residual):
            stalls += 1
            if stalls >= MAX_STALLS:
                logger.debug(f"inner solver at rounding level, residual {residual:.3e} after {iterations} iterations")
                break
        else:
            stalls = 0

    stalled = stalls >= MAX_STALLS
    converged = residual <= tolerance or stalled
    if not converged:
        logger.debug(f"inner solver residual {residual:.3e} above tolerance {tolerance:.1e}")

    powers = np.zeros(instance.num_users)
    powers[perm] = x
    allocation = PowerAllocation(powers)
    return InnerSolution(
        order=order,
        powers=allocation,
        rates=mac_rates(instance, order, allocation),
        objective=value,
        residual=residual,
        tolerance=tolerance,
        iterations=iterations,
        converged=converged,
    )


def rate_subgradient(rates: Sequence[float], targets: Sequence[float]) -> np.ndarray:
    """
    nu_m = R_m - Rbar_m.

    The dual is concave with supergradient Rbar - R, so nu is the normal of
    the half-space an ellipsoid cut discards.
    """
    return np.asarray(rates, dtype=float) - np.asarray(targets, dtype=float)


def tie_groups(prices: Sequence[float], tie_tol: float) -> List[List[int]]:
    """
    Split users into groups of equal price, in ascending price order.

    Neighbours in the sorted order belong to the same group when their
    prices differ by at most tie_tol relative to the larger one.
    """
    prices = np.asarray(prices, dtype=float)
    order = ascending_price_order(prices).perm
    groups = [[order[0]]]
    for previous, user in zip(order, order[1:]):
        scale = max(abs(prices[previous]), abs(prices[user]), 1e-300)
        if abs(prices[user] - prices[previous]) <= tie_tol * scale:
            groups[-1].append(user)
        else:
            groups.append([user])
    return groups


def _group_orders(groups: Sequence[Sequence[int]]):
    """Every order that keeps the groups in place and permutes inside them."""
    for parts in itertools.product(*(itertools.permutations(g) for g in groups)):
        yield PrecodingOrder(tuple(u for part in parts for u in part))


def _count_group_orders(groups: Sequence[Sequence[int]]) -> int:
    return int(np.prod([math.factorial(len(g)) for g in groups]))


def recover_time_sharing(
    instance: ProblemInstance,
    powers: PowerAllocation,
    prices: Sequence[float],
    targets: Optional[Sequence[float]] = None,
    tol: float = 1e-7,
    tie_tol: float = 1e-5,
    groups: Optional[Sequence[Sequence[int]]] = None,
) -> TimeSharing:
    """
    Weights over decoding orders whose averaged rates meet the targets.

    At the fixed powers, enumerates the orders consistent with ascending
    prices where equal-price users may swap, computes each order's rate
    vertex and solves the linear program
    max t  s.t.  sum_k w_k R^(k) >= targets + t,  w >= 0,  sum w = 1.
    A basic optimal solution is returned with zero weights dropped.

    Raises:
        TimeSharingError: if no combination comes within tol of the targets
        SizeLimitError: if the tie groups admit too many orders
    """
    targets = instance.rate_targets if targets is None else np.asarray(targets, dtype=float)
    if groups is None:
        groups = tie_groups(prices, tie_tol)
    count = _count_group_orders(groups)
    if count > MAX_TIME_SHARING_ORDERS:
        raise SizeLimitError(f"time sharing over {count} orders is not supported")

    orders = list(_group_orders(groups))
    vertices = np.array([mac_rates(instance, order, powers) for order in orders])
    num_orders, num_users = vertices.shape

    # variables [w_1..w_K, t]; linprog minimizes, so the objective is -t
    objective = np.zeros(num_orders + 1)
    objective[-1] = -1.0
    a_ub = np.hstack([-vertices.T, np.ones((num_users, 1))])
    b_ub = -targets
    a_eq = np.zeros((1, num_orders + 1))
    a_eq[0, :num_orders] = 1.0
    bounds = [(0.0, None)] * num_orders + [(None, None)]
    result = optimize.linprog(
        objective, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs"
    )
    if not result.success:
        raise TimeSharingError(f"time-sharing program failed: {result.message}")

    slack = float(result.x[-1])
    if slack < -tol:
        raise TimeSharingError(
            f"targets are {-slack:.3e} bits outside the rate vertices' hull at these powers"
        )

    weights = np.clip(result.x[:num_orders], 0.0, None)
    keep = weights > 1e-12
    weights = weights[keep] / np.sum(weights[keep])
    kept_vertices = vertices[keep]
    kept_orders = [order for order, k in zip(orders, keep) if k]
    logger.debug(f"time sharing over {len(kept_orders)} of {num_orders} orders, min slack {slack:.3e}")
    return TimeSharing(
        orders=kept_orders,
        weights=weights,
        vertex_rates=kept_vertices,
        rates=weights @ kept_vertices,
    )


def _subset_terms(instance: ProblemInstance, p: np.ndarray, subset: Sequence[int]) -> Tuple[float, np.ndarray]:
    """log2|Z_S| and its gradient with respect to p."""
    z = InterferenceMatrix.from_users(instance, np.maximum(p, 0.0), subset)
    gradient = np.zeros(instance.num_users)
    for user in subset:
        gradient[user] = z.gain(instance.channels[user]) / LN2
    return z.logdet / LN2, gradient


def _restricted_primal(
    instance: ProblemInstance, groups: Sequence[Sequence[int]], start: np.ndarray, settings: SolverSettings
) -> np.ndarray:
    """
    Minimum sum power under the constraints that matter for these groups.

    For every group G_k and nonempty S in G_k the subset S joined with all
    later groups is constrained; further violated subsets are added as cuts.
    """
    targets = instance.rate_targets
    subsets = []
    for k, group in enumerate(groups):
        later = [u for g in groups[k + 1:] for u in g]
        for size in range(1, len(group) + 1):
            for part in itertools.combinations(group, size):
                subsets.append(tuple(sorted(part + tuple(later))))

    p = np.array(start, dtype=float)
    for _ in range(MAX_CUT_ROUNDS):
        constraints = [
            {
                "type": "ineq",
                "fun": lambda q, s=s: _subset_terms(instance, q, s)[0] - float(np.sum(targets[list(s)])),
                "jac": lambda q, s=s: _subset_terms(instance, q, s)[1],
            }
            for s in subsets
        ]
        result = optimize.minimize(
            lambda q: float(np.sum(q)),
            p,
            jac=lambda q: np.ones_like(q),
            method="SLSQP",
            bounds=[(0.0, None)] * instance.num_users,
            constraints=constraints,
            options={"ftol": 1e-14, "maxiter": 500},
        )
        if not result.success:
            logger.warning(f"restricted primal program: {result.message}")
        p = np.maximum(result.x, 0.0)
        check = capacity_region_check(instance, p, targets, tol=settings.feasibility_tol)
        if check.feasible or check.violated_subset in subsets:
            break
        logger.debug(f"adding capacity cut for subset {check.violated_subset}")
        subsets.append(check.violated_subset)
    return p


def _warm_start(instance: ProblemInstance, groups: Sequence[Sequence[int]], fallback: np.ndarray) -> np.ndarray:
    """Average of the fixed-order solutions inside the groups (a feasible point)."""
    if _count_group_orders(groups) > MAX_WARM_START_ORDERS:
        return fallback
    solutions = [solve_fixed_order(instance, order).powers.powers for order in _group_orders(groups)]
    return np.mean(solutions, axis=0)


def _merge_at(groups: List[List[int]], index: int) -> List[List[int]]:
    """Merge groups[index - 1] and groups[index]."""
    merged = groups[: index - 1] + [groups[index - 1] + groups[index]] + groups[index + 1:]
    return merged


def _closest_boundary(groups: List[List[int]], prices: np.ndarray) -> int:
    gaps = []
    for k in range(1, len(groups)):
        low = prices[groups[k - 1]].max()
        high = prices[groups[k]].min()
        gaps.append((high - low) / max(abs(high), 1e-300))
    return int(np.argmin(gaps)) + 1


def _recover_primal(
    instance: ProblemInstance,
    prices: np.ndarray,
    inner_powers: np.ndarray,
    upper_bound: float,
    settings: SolverSettings,
) -> Tuple[np.ndarray, List[List[int]]]:
    """
    Primal powers from the converged prices.

    Distinct prices: the fixed-order solution of the price order, accepted
    when its certificate says Optimal. Otherwise the tied groups are solved
    as a restricted convex program; groups are merged until the recovered
    power is within the dual upper bound.
    """
    groups = tie_groups(prices, settings.time_sharing_tie_tol)
    slack = settings.dual_gap_tol * (1.0 + abs(upper_bound))
    while True:
        if all(len(g) == 1 for g in groups):
            order = PrecodingOrder(tuple(g[0] for g in groups))
            solution = solve_fixed_order(instance, order)
            certificate = certify(lagrange_multipliers(instance, solution), settings.certificate_tie_tol)
            p = solution.powers.powers
            if certificate.verdict == Verdict.OPTIMAL or len(groups) == 1:
                return p, groups
            differences = np.diff(certificate.multipliers)
            groups = _merge_at(groups, int(np.argmin(differences)) + 1)
            logger.debug(f"price order not certified ({certificate.verdict.value}), merging to {groups}")
            continue

        start = _warm_start(instance, groups, inner_powers)
        p = _restricted_primal(instance, groups, start, settings)
        if float(np.sum(p)) <= upper_bound + slack or len(groups) == 1:
            return p, groups
        groups = _merge_at(groups, _closest_boundary(groups, prices))
        logger.debug(f"recovered power above dual bound, merging to {groups}")


def _share_time(
    instance: ProblemInstance,
    powers: PowerAllocation,
    prices: np.ndarray,
    groups: List[List[int]],
    settings: SolverSettings,
) -> TimeSharing:
    """recover_time_sharing, merging adjacent groups while the program is infeasible."""
    while True:
        try:
            return recover_time_sharing(
                instance, powers, prices, tol=settings.feasibility_tol, groups=groups
            )
        except TimeSharingError:
            if len(groups) == 1:
                raise
            groups = _merge_at(groups, _closest_boundary(groups, prices))
            logger.debug(f"time sharing infeasible, retrying with groups {groups}")


def _run_ellipsoid(
    instance: ProblemInstance, upper: np.ndarray, settings: SolverSettings, iteration_budget: int
):
    targets = instance.rate_targets
    state = EllipsoidState.initial(upper)
    best = None
    best_value = -math.inf
    upper_value = math.inf
    warm = None
    trace = []
    converged = False

    while state.iteration < iteration_budget:
        prices = state.center
        if np.any(prices < 0.0):
            # feasibility cut on the most negative price
            k = int(np.argmin(prices))
            normal = np.zeros(prices.size)
            normal[k] = -1.0
            state = state.cut(normal)
            continue

        inner = dual_inner_maximize(
            instance, prices, settings.inner_grad_tol, settings.inner_max_iters, warm
        )
        warm = inner.powers.powers
        value = float(prices @ targets) - inner.objective
        nu = rate_subgradient(inner.rates, targets)
        width = state.width(nu)
        upper_value = min(upper_value, value + width)
        if value > best_value:
            best_value = value
            best = (prices.copy(), inner)
        trace.append(TraceEntry(iteration=state.iteration, dual_value=value, upper_bound=upper_value))
        logger.debug(f"ellipsoid {state.iteration}: g={value:.10g} width={width:.3e}")

        if width <= settings.dual_gap_tol * (1.0 + abs(value)):
            converged = True
            break
        state = state.cut(nu)

    return best, best_value, upper_value, state.iteration, converged, trace


def ellipsoid_solve(instance: ProblemInstance, settings: Optional[SolverSettings] = None) -> RelaxationSolution:
    """
    Solve the relaxed problem by maximizing its dual with the ellipsoid method.

    Users with a zero rate target keep price 0 and power 0 and are left out
    of the search. The initial ellipsoid contains the box [0, lambda_max];
    if the best prices end within 1% of the box's upper faces the bound is
    doubled and the search restarted.

    Args:
        instance: channels and rate targets
        settings: tolerances and caps (defaults from SolverSettings)

    Returns:
        RelaxationSolution; converged is False when max_iters was hit, in
        which case dual_gap_bound reports the remaining gap
    """
    settings = settings or SolverSettings()
    num_users = instance.num_users
    active = [int(u) for u in np.flatnonzero(instance.rate_targets > 0.0)]

    if not active:
        zeros = PowerAllocation.zeros(num_users)
        return RelaxationSolution(
            multipliers=np.zeros(num_users),
            powers=zeros,
            achieved_rates=np.zeros(num_users),
            order=PrecodingOrder.identity(num_users),
            time_sharing=None,
            iterations=0,
            dual_value=0.0,
            dual_gap_bound=0.0,
            converged=True,
        )

    reduced = instance.subset(active)
    upper = lambda_upper_bound(reduced) * settings.initial_bound_scale
    iterations = 0
    restarts = 0
    trace: List[TraceEntry] = []
    while True:
        best, best_value, upper_value, used, converged, run_trace = _run_ellipsoid(
            reduced, upper, settings, settings.max_iters
        )
        iterations += used
        trace.extend(TraceEntry(iterations - used + t.iteration, t.dual_value, t.upper_bound) for t in run_trace)
        prices, inner = best
        on_edge = np.any(prices >= BOUNDARY_FRACTION * upper)
        if on_edge and restarts < settings.max_bound_restarts:
            restarts += 1
            upper = 2.0 * upper
            logger.warning(f"rate prices reached the initial bound, restarting with doubled bound (restart {restarts})")
            continue
        break

    observe_ellipsoid_iterations(iterations)
    if not converged:
        logger.warning(
            f"ellipsoid stopped after {iterations} iterations with gap bound {upper_value - best_value:.3e}"
        )

    reduced_powers, groups = _recover_primal(reduced, prices, inner.powers.powers, upper_value, settings)
    reduced_allocation = PowerAllocation(reduced_powers)
    reduced_order = PrecodingOrder(tuple(u for g in groups for u in g))
    vertex = mac_rates(reduced, reduced_order, reduced_allocation)

    time_sharing = None
    time_sharing_error = None
    achieved = vertex
    if np.max(reduced.rate_targets - vertex) > settings.feasibility_tol:
        try:
            time_sharing = _share_time(reduced, reduced_allocation, prices, groups, settings)
            achieved = time_sharing.rates
        except (TimeSharingError, SizeLimitError) as e:
            time_sharing_error = str(e)
            logger.error(f"time-sharing recovery failed: {e}")

    # back to the full user set; zero-target users come first with price 0
    inactive = [u for u in range(num_users) if u not in active]

    def expand_order(order: PrecodingOrder) -> PrecodingOrder:
        return PrecodingOrder(tuple(inactive) + tuple(active[u] for u in order.perm))

    powers = np.zeros(num_users)
    powers[active] = reduced_powers
    multipliers = np.zeros(num_users)
    multipliers[active] = prices
    rates = np.zeros(num_users)
    rates[active] = achieved

    full_time_sharing = None
    if time_sharing is not None:
        vertex_rates = np.zeros((len(time_sharing.orders), num_users))
        vertex_rates[:, active] = time_sharing.vertex_rates
        full_time_sharing = TimeSharing(
            orders=[expand_order(o) for o in time_sharing.orders],
            weights=time_sharing.weights,
            vertex_rates=vertex_rates,
            rates=rates.copy(),
        )

    solution = RelaxationSolution(
        multipliers=multipliers,
        powers=PowerAllocation(powers),
        achieved_rates=rates,
        order=expand_order(reduced_order),
        time_sharing=full_time_sharing,
        iterations=iterations,
        dual_value=best_value,
        dual_gap_bound=max(upper_value - best_value, 0.0),
        converged=converged,
        restarts=restarts,
        trace=trace,
        time_sharing_error=time_sharing_error,
    )
    logger.info(
        f"relaxation: sum power {solution.sum_power:.6g} after {iterations} iterations"
        f"{' with time sharing' if full_time_sharing else ''}"
    )
    return solution
