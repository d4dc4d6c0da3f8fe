"""
Command-line interface: solve, certify and sweep.
"""

import functools
import logging
import sys
from typing import List, Optional, Tuple

import click
from pydantic import ValidationError

from dpcorder.bench import BenchRunner
from dpcorder.config import METHODS, SolverSettings, get_config, load_sweep_config
from dpcorder.errors import ConfigError, DpcError, InstanceValidationError
from dpcorder.instance import PrecodingOrder, ProblemInstance, sample_rayleigh_instance
from dpcorder.metrics import write_metrics
from dpcorder.storage import (
    CsvTableWriter,
    ErrorReport,
    SummaryRow,
    SweepRow,
    load_instance,
    open_output,
    save_instance,
    summary_path,
)

logger = logging.getLogger(__name__)

EXIT_VALIDATION = 2
EXIT_IO = 4
EXIT_INTERRUPTED = 130


def _setup_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _parse_sample(value: Optional[str]) -> Optional[Tuple[int, int, float, int]]:
    if value is None:
        return None
    parts = value.split(",")
    if len(parts) != 4:
        raise click.BadParameter("expected M,NT,RATE,SEED", param_hint="--sample")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise click.BadParameter(f"cannot parse {value!r} as M,NT,RATE,SEED", param_hint="--sample")


def _parse_methods(value: str) -> List[str]:
    methods = [m.strip() for m in value.split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise click.BadParameter(f"unknown methods {unknown}; choose from {','.join(METHODS)}", param_hint="--method")
    return methods


def _parse_order(value: str) -> PrecodingOrder:
    try:
        users = [int(u) for u in value.split(",")]
    except ValueError:
        raise InstanceValidationError(f"order {value!r} must be comma-separated 1-based user labels")
    if sorted(users) != list(range(1, len(users) + 1)):
        raise InstanceValidationError(f"order {users} is not a permutation of 1..{len(users)}")
    return PrecodingOrder.from_one_based(users)


def _settings(base: SolverSettings, tol: Optional[float], max_iters: Optional[int]) -> SolverSettings:
    overrides = {}
    if tol is not None:
        overrides["dual_gap_tol"] = tol
    if max_iters is not None:
        overrides["max_iters"] = max_iters
    try:
        return SolverSettings(**{**base.model_dump(), **overrides})
    except ValidationError as e:
        raise ConfigError(f"Invalid solver options: {e.errors()[0]['msg']}")


def _load_problem(instance_path: Optional[str], sample: Optional[str]) -> Tuple[ProblemInstance, int]:
    """The instance and the seed used for the random order."""
    parsed = _parse_sample(sample)
    if (instance_path is None) == (parsed is None):
        raise click.UsageError("give exactly one of --instance and --sample")
    if instance_path is not None:
        return load_instance(instance_path), 0
    num_users, num_tx, rate, seed = parsed
    return sample_rayleigh_instance(num_users, num_tx, rate, seed), seed


def _emit_error(e: Exception):
    click.echo(ErrorReport(error=type(e).__name__, message=str(e)).model_dump_json(indent=2))


def handle_errors(json_errors: bool):
    """Map exceptions to exit codes; solve and certify also print them as JSON."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except DpcError as e:
                logger.error(f"{type(e).__name__}: {str(e)}")
                if json_errors:
                    _emit_error(e)
                sys.exit(e.exit_code)
            except OSError as e:
                logger.error(f"I/O error: {str(e)}")
                if json_errors:
                    _emit_error(e)
                sys.exit(EXIT_IO)
            except KeyboardInterrupt:
                logger.warning("Interrupted, partial results were flushed")
                sys.exit(EXIT_INTERRUPTED)

        return wrapper

    return decorator


@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR or CRITICAL (overrides LOG_LEVEL).")
@click.option("--metrics-file", default=None, type=click.Path(dir_okay=False), help="Write Prometheus metrics here on exit.")
@click.pass_context
def cli(ctx, log_level: Optional[str], metrics_file: Optional[str]):
    """Minimum sum power and precoding order search for the DPC downlink.

    Powers are noise-normalized, so sum power in dB is the average transmit
    SNR; sweep summaries take the mean of the linear powers before dB.
    """
    try:
        config = get_config()
    except ConfigError as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(EXIT_VALIDATION)

    level = (log_level or config.log_level).upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise click.BadParameter(f"unknown log level {log_level!r}", param_hint="--log-level")
    _setup_logging(level)

    ctx.obj = config
    metrics_file = metrics_file or config.metrics_file
    if metrics_file:
        ctx.call_on_close(lambda: write_metrics(metrics_file))


@cli.command()
@click.option("--instance", "instance_path", type=click.Path(dir_okay=False), help="Instance JSON file.")
@click.option("--sample", default=None, help="Sample a Rayleigh instance: M,NT,RATE,SEED.")
@click.option("--method", "methods", default=",".join(METHODS), show_default=True, help="Comma-separated methods.")
@click.option("--tol", type=float, default=None, help="Relative dual gap tolerance.")
@click.option("--max-iters", type=int, default=None, help="Ellipsoid iteration cap.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--trace", is_flag=True, help="Include the ellipsoid convergence trace.")
@click.option("--save-instance", "save_path", type=click.Path(dir_okay=False), default=None, help="Also write the instance.")
@click.pass_obj
@handle_errors(json_errors=True)
def solve(config, instance_path, sample, methods, tol, max_iters, threads, trace, save_path):
    """Solve one instance with one or more methods and print a JSON report."""
    method_list = _parse_methods(methods)
    instance, seed = _load_problem(instance_path, sample)
    if save_path:
        save_instance(instance, save_path)
    runner = BenchRunner(_settings(config.solver, tol, max_iters), threads=threads)
    report = runner.solve(instance, method_list, seed=seed, trace=trace)
    click.echo(report.model_dump_json(indent=2))


@cli.command()
@click.option("--instance", "instance_path", type=click.Path(dir_okay=False), help="Instance JSON file.")
@click.option("--sample", default=None, help="Sample a Rayleigh instance: M,NT,RATE,SEED.")
@click.option("--order", "order_text", required=True, help="1-based order, e.g. 2,1,3 (first entry decoded first).")
@click.pass_obj
@handle_errors(json_errors=True)
def certify(config, instance_path, sample, order_text):
    """Certify a fixed precoding order with its Lagrange multipliers."""
    instance, _ = _load_problem(instance_path, sample)
    order = _parse_order(order_text)
    if order.num_users != instance.num_users:
        raise InstanceValidationError(f"order has {order.num_users} users, instance has {instance.num_users}")
    report = BenchRunner(config.solver).certify(instance, order)
    click.echo(report.model_dump_json(indent=2))


@cli.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False), help="Sweep config (YAML or JSON).")
@click.option("--out", default=None, type=click.Path(dir_okay=False), help="Results CSV (overrides the config).")
@click.option("--tol", type=float, default=None, help="Relative dual gap tolerance.")
@click.option("--max-iters", type=int, default=None, help="Ellipsoid iteration cap.")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Parallel trials (overrides the config).")
@handle_errors(json_errors=False)
def sweep(config_path, out, tol, max_iters, threads):
    """Monte Carlo sweep over the rate grid, written as CSV.

    A summary with the mean sum power per grid point and method goes to
    <out>_summary.csv.
    """
    sweep_config = load_sweep_config(config_path)
    settings = _settings(sweep_config.solver, tol, max_iters)
    output = out or sweep_config.output
    runner = BenchRunner(
        settings,
        threads=threads or sweep_config.threads,
        record_wall_time=sweep_config.record_wall_time,
    )

    with open_output(output) as rows_stream, open_output(summary_path(output)) as summary_stream:
        rows_out = CsvTableWriter(rows_stream, SweepRow)
        summary_out = CsvTableWriter(summary_stream, SummaryRow)
        count = runner.sweep(sweep_config, rows_out, summary_out)
    logger.info(f"Wrote {count} rows to {output}")
