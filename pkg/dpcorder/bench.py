"""
Runs the solvers on single instances and Monte Carlo sweeps, and turns
their results into reports and CSV rows.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dpcorder.certificate import DualCertificate, certify_solution
from dpcorder.config import METHODS, SolverSettings, SweepConfig
from dpcorder.duality import DownlinkSolution, mac_to_bc, time_sharing_downlink
from dpcorder.errors import ConvergenceError
from dpcorder.fixed_order import FixedOrderSolution, solve_fixed_order
from dpcorder.instance import PrecodingOrder, ProblemInstance, sample_rayleigh_instance
from dpcorder.metrics import track_solve
from dpcorder.ordering import exhaustive_search, heuristic_search, random_order
from dpcorder.relaxation import RelaxationSolution, ellipsoid_solve
from dpcorder.storage import (
    CertificateReport,
    CsvTableWriter,
    DownlinkReport,
    MethodReport,
    SolveReport,
    SummaryRow,
    SweepRow,
    TimeSharingReport,
    TraceReport,
    to_db,
)
from dpcorder.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

RANDOM_ORDER_KEY = 1


@dataclass
class MethodResult:
    """Outcome of one method on one instance."""

    method: str
    order: PrecodingOrder
    powers: np.ndarray
    rates: np.ndarray
    iterations: Optional[int] = None
    termination: Optional[str] = None
    time_sharing: Optional[bool] = None
    converged: Optional[bool] = None
    solution: Optional[FixedOrderSolution] = None
    certificate: Optional[DualCertificate] = None
    relaxation: Optional[RelaxationSolution] = None
    wall_time: Optional[float] = None

    @property
    def sum_power(self) -> float:
        return float(np.sum(self.powers))


def random_order_seed(trial_seed: int) -> int:
    """Seed of the random-order baseline for an instance seed."""
    return int(derive_seed(trial_seed, RANDOM_ORDER_KEY))


def _fixed_result(method: str, instance: ProblemInstance, solution: FixedOrderSolution, settings: SolverSettings, **extra) -> MethodResult:
    return MethodResult(
        method=method,
        order=solution.order,
        powers=solution.powers.powers,
        rates=solution.achieved_rates,
        solution=solution,
        certificate=certify_solution(instance, solution, settings.certificate_tie_tol),
        **extra,
    )


class BenchRunner:
    """
    Runs the order-search methods and the relaxation on instances.

    The random baseline and the heuristic share the seeded random order as
    starting point, so the heuristic's best visited order is never worse
    than the baseline on the same instance.
    """

    def __init__(self, settings: Optional[SolverSettings] = None, threads: int = 1, record_wall_time: bool = False):
        self.settings = settings or SolverSettings()
        self.threads = threads
        self.record_wall_time = record_wall_time

    @track_solve("random")
    def run_random(self, instance: ProblemInstance, seed: int) -> MethodResult:
        order = random_order(instance.num_users, random_order_seed(seed))
        return _fixed_result("random", instance, solve_fixed_order(instance, order), self.settings)

    @track_solve("heuristic")
    def run_heuristic(self, instance: ProblemInstance, seed: int) -> MethodResult:
        start = random_order(instance.num_users, random_order_seed(seed))
        order, solution, certificate, trace = heuristic_search(
            instance,
            start,
            self.settings.heuristic_cap(instance.num_users),
            self.settings.certificate_tie_tol,
        )
        return MethodResult(
            method="heuristic",
            order=order,
            powers=solution.powers.powers,
            rates=solution.achieved_rates,
            iterations=trace.iterations,
            termination=trace.termination.value,
            solution=solution,
            certificate=certificate,
        )

    @track_solve("exhaustive")
    def run_exhaustive(self, instance: ProblemInstance, seed: int) -> MethodResult:
        order, solution = exhaustive_search(instance, self.threads)
        return _fixed_result(
            "exhaustive", instance, solution, self.settings, iterations=math.factorial(instance.num_users)
        )

    @track_solve("relaxation")
    def run_relaxation(self, instance: ProblemInstance, seed: int) -> MethodResult:
        solution = ellipsoid_solve(instance, self.settings)
        return MethodResult(
            method="relaxation",
            order=solution.order,
            powers=solution.powers.powers,
            rates=solution.achieved_rates,
            iterations=solution.iterations,
            termination="Converged" if solution.converged else "MaxIters",
            time_sharing=solution.time_sharing is not None,
            converged=solution.converged,
            relaxation=solution,
        )

    def run_method(self, instance: ProblemInstance, method: str, seed: int = 0) -> MethodResult:
        """Run one method; seed only matters for the random and heuristic methods."""
        runners = {
            "random": self.run_random,
            "heuristic": self.run_heuristic,
            "exhaustive": self.run_exhaustive,
            "relaxation": self.run_relaxation,
        }
        if method not in runners:
            raise ValueError(f"unknown method {method!r}; choose from {list(METHODS)}")
        start = time.perf_counter()
        result = runners[method](instance, seed)
        if self.record_wall_time:
            result.wall_time = time.perf_counter() - start
        return result

    def solve(
        self, instance: ProblemInstance, methods: Sequence[str], seed: int = 0, trace: bool = False
    ) -> SolveReport:
        """
        Run the methods on one instance and build the JSON report.

        Raises:
            ConvergenceError: if the relaxation hit its iteration cap
        """
        report = SolveReport(
            num_users=instance.num_users,
            num_tx_antennas=instance.num_tx_antennas,
            rate_targets=[float(r) for r in instance.rate_targets],
        )
        for method in methods:
            logger.info(f"Running {method} on M={instance.num_users}, nT={instance.num_tx_antennas}")
            result = self.run_method(instance, method, seed)
            if result.converged is False:
                gap = result.relaxation.dual_gap_bound
                raise ConvergenceError(
                    f"relaxation did not converge in {result.iterations} iterations (dual gap bound {gap:.3e})"
                )
            report.results.append(self.method_report(instance, result, trace))
        return report

    def method_report(self, instance: ProblemInstance, result: MethodResult, trace: bool = False) -> MethodReport:
        report = MethodReport(
            method=result.method,
            sum_power=result.sum_power,
            sum_power_db=to_db(result.sum_power),
            powers=[float(p) for p in result.powers],
            rates=[float(r) for r in result.rates],
            order=result.order.to_one_based(),
            iterations=result.iterations,
            termination=result.termination,
            converged=result.converged,
        )
        if result.certificate is not None:
            report.certificate = certificate_report(result.solution, result.certificate)
            report.downlink = [downlink_report(mac_to_bc(instance, result.order, result.solution.powers))]

        relaxation = result.relaxation
        if relaxation is not None:
            report.multipliers = [float(x) for x in relaxation.multipliers]
            report.dual_gap_bound = relaxation.dual_gap_bound
            report.time_sharing_error = relaxation.time_sharing_error
            if relaxation.time_sharing is not None:
                sharing = relaxation.time_sharing
                report.time_sharing = TimeSharingReport(
                    orders=[o.to_one_based() for o in sharing.orders],
                    weights=[float(w) for w in sharing.weights],
                    vertex_rates=sharing.vertex_rates.tolist(),
                )
                phases = time_sharing_downlink(instance, sharing.orders, relaxation.powers)
                report.downlink = [downlink_report(d) for d in phases]
            else:
                report.downlink = [downlink_report(mac_to_bc(instance, relaxation.order, relaxation.powers))]
            if trace:
                report.trace = [
                    TraceReport(iteration=t.iteration, dual_value=t.dual_value, upper_bound=t.upper_bound)
                    for t in relaxation.trace
                ]
        return report

    def certify(self, instance: ProblemInstance, order: PrecodingOrder) -> CertificateReport:
        solution = solve_fixed_order(instance, order)
        certificate = certify_solution(instance, solution, self.settings.certificate_tie_tol)
        logger.info(f"Order {order.to_one_based()}: {certificate.verdict.value}")
        return certificate_report(solution, certificate)

    def run_trial(
        self, config: SweepConfig, grid_index: int, trial: int
    ) -> List[SweepRow]:
        """All selected methods on the instance of one (grid point, trial)."""
        rate = config.rate_grid[grid_index]
        seed = int(derive_seed(config.seed, grid_index, trial))
        instance = sample_rayleigh_instance(config.num_users, config.num_tx_antennas, rate, seed)
        rows = []
        for method in config.methods:
            result = self.run_method(instance, method, seed)
            if result.converged is False:
                logger.warning(f"relaxation hit the iteration cap at rate {rate}, trial {trial}")
            rows.append(
                SweepRow(
                    rate_target=float(rate),
                    method=method,
                    trial=trial,
                    seed=seed,
                    sum_power=result.sum_power,
                    sum_power_db=to_db(result.sum_power),
                    iterations=result.iterations,
                    termination=result.termination,
                    time_sharing=result.time_sharing,
                    wall_time=result.wall_time,
                )
            )
        return rows

    def sweep(self, config: SweepConfig, rows_out: CsvTableWriter, summary_out: CsvTableWriter) -> int:
        """
        Monte Carlo sweep; rows are written in (grid, trial, method) order.

        Trials may run on several threads; results are consumed in trial
        order so the output does not depend on the thread count. The
        summary covers every completed trial, also when interrupted.
        """
        totals: Dict[Tuple[int, str], List[float]] = {}
        try:
            for grid_index, rate in enumerate(config.rate_grid):
                logger.info(f"Sweep grid point {grid_index + 1}/{len(config.rate_grid)}: rate {rate} bits")
                for rows in self._trials(config, grid_index):
                    for row in rows:
                        rows_out.write(row)
                        totals.setdefault((grid_index, row.method), []).append(row.sum_power)
        finally:
            for row in summarize(config, totals):
                summary_out.write(row)
        return rows_out.rows_written

    def _trials(self, config: SweepConfig, grid_index: int) -> Iterable[List[SweepRow]]:
        trials = range(config.trials)
        if self.threads <= 1:
            for trial in trials:
                yield self.run_trial(config, grid_index, trial)
            return
        # exhaustive search stays single-threaded inside a parallel sweep
        worker = BenchRunner(self.settings, threads=1, record_wall_time=self.record_wall_time)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            yield from pool.map(lambda trial: worker.run_trial(config, grid_index, trial), trials)


def summarize(config: SweepConfig, totals: Dict[Tuple[int, str], List[float]]) -> List[SummaryRow]:
    """Mean linear power per grid point and method, and its dB value."""
    summary = []
    for grid_index, rate in enumerate(config.rate_grid):
        for method in config.methods:
            powers = totals.get((grid_index, method))
            if not powers:
                continue
            mean = float(np.mean(powers))
            summary.append(
                SummaryRow(
                    rate_target=float(rate),
                    method=method,
                    trials=len(powers),
                    mean_sum_power=mean,
                    mean_sum_power_db=to_db(mean),
                )
            )
    return summary


def certificate_report(solution: FixedOrderSolution, certificate: DualCertificate) -> CertificateReport:
    return CertificateReport(
        order=solution.order.to_one_based(),
        multipliers=[float(x) for x in certificate.multipliers],
        verdict=certificate.verdict.value,
        tie_positions=sorted(m + 1 for m in certificate.tie_positions),
        sum_power=solution.sum_power,
    )


def downlink_report(downlink: DownlinkSolution) -> DownlinkReport:
    beams = downlink.beams.beamformers
    return DownlinkReport(
        beamformers=[[[float(z.real), float(z.imag)] for z in row] for row in beams],
        downlink_powers=[float(p) for p in downlink.beams.downlink_powers],
        sinrs=[float(s) for s in downlink.sinrs],
    )
