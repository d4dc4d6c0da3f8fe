"""
Prometheus metrics for solver runs, written to a textfile on exit.
"""

import functools
import logging
import time

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

logger = logging.getLogger(__name__)

REGISTRY = CollectorRegistry()

# Initialize metrics
SOLVES_TOTAL = Counter(
    "dpcorder_solves_total",
    "Total number of solver runs",
    ["method", "status"],
    registry=REGISTRY,
)

HEURISTIC_TERMINATIONS_TOTAL = Counter(
    "dpcorder_heuristic_terminations_total",
    "Termination reasons of the multiplier-sorting heuristic",
    ["reason"],
    registry=REGISTRY,
)

SOLVE_SECONDS = Histogram(
    "dpcorder_solve_seconds",
    "Wall time per solver run",
    ["method"],
    registry=REGISTRY,
)

ELLIPSOID_ITERATIONS = Histogram(
    "dpcorder_ellipsoid_iterations",
    "Ellipsoid iterations per relaxation solve",
    buckets=(10, 25, 50, 100, 200, 500, 1000, 2000, 5000),
    registry=REGISTRY,
)


def record_solve(method: str, success: bool):
    """Increment solve counter."""
    status = "success" if success else "failure"
    SOLVES_TOTAL.labels(method=method, status=status).inc()


def record_heuristic_termination(reason: str):
    HEURISTIC_TERMINATIONS_TOTAL.labels(reason=reason).inc()


def observe_ellipsoid_iterations(iterations: int):
    ELLIPSOID_ITERATIONS.observe(iterations)


def track_solve(method: str):
    """Decorator to count and time solver runs of one method."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception:
                record_solve(method, False)
                raise
            finally:
                SOLVE_SECONDS.labels(method=method).observe(time.perf_counter() - start)
            record_solve(method, True)
            return result

        return wrapper

    return decorator


def write_metrics(path: str):
    """Write the registry in the Prometheus text format."""
    write_to_textfile(path, REGISTRY)
    logger.info(f"Metrics written to {path}")
