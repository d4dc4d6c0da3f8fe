"""
Files read and written by the command-line tools: instance JSON, JSON
reports and the sweep CSV.
"""

import csv
import json
import logging
import math
import os
from typing import Dict, IO, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from dpcorder.errors import InstanceFileError, InstanceValidationError
from dpcorder.instance import ProblemInstance

logger = logging.getLogger(__name__)

MISSING = "NA"


class InstanceFile(BaseModel):
    """
    On-disk instance: channels are rows of [re, im] pairs, one row per user.
    """
    num_users: int
    num_tx_antennas: int
    rate_targets: List[float]
    channels: List[List[List[float]]]

    @field_validator("num_users", "num_tx_antennas")
    @classmethod
    def validate_positive(cls, v: int, info) -> int:
        if v < 1:
            raise ValueError(f"{info.field_name} must be at least 1")
        return v

    @field_validator("channels")
    @classmethod
    def validate_pairs(cls, v: List[List[List[float]]]) -> List[List[List[float]]]:
        for row in v:
            for entry in row:
                if len(entry) != 2:
                    raise ValueError("every channel entry must be a [re, im] pair")
        return v

    @model_validator(mode="after")
    def validate_shapes(self) -> "InstanceFile":
        if len(self.rate_targets) != self.num_users:
            raise ValueError(f"expected {self.num_users} rate targets, got {len(self.rate_targets)}")
        if len(self.channels) != self.num_users:
            raise ValueError(f"expected {self.num_users} channel rows, got {len(self.channels)}")
        for m, row in enumerate(self.channels):
            if len(row) != self.num_tx_antennas:
                raise ValueError(
                    f"channel row {m} has {len(row)} entries, expected {self.num_tx_antennas}"
                )
        return self

    def to_instance(self) -> ProblemInstance:
        pairs = np.asarray(self.channels, dtype=float)
        return ProblemInstance(channels=pairs[..., 0] + 1j * pairs[..., 1], rate_targets=self.rate_targets)

    @classmethod
    def from_instance(cls, instance: ProblemInstance) -> "InstanceFile":
        channels = [[[float(z.real), float(z.imag)] for z in row] for row in instance.channels]
        return cls(
            num_users=instance.num_users,
            num_tx_antennas=instance.num_tx_antennas,
            rate_targets=[float(r) for r in instance.rate_targets],
            channels=channels,
        )


def load_instance(path: str) -> ProblemInstance:
    """
    Read and validate an instance file.

    Raises:
        InstanceFileError: malformed JSON (with line and column) or schema
            violations (with the field location)
        OSError: if the file cannot be read
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceFileError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}")

    try:
        model = InstanceFile.model_validate(data)
    except ValidationError as e:
        messages = []
        for error in e.errors():
            loc = ".".join(str(x) for x in error["loc"]) or "<root>"
            logger.error(f"  - {loc}: {error['msg']}")
            messages.append(f"{loc}: {error['msg']}")
        raise InstanceFileError(f"{path}: " + "; ".join(messages))

    try:
        instance = model.to_instance()
    except InstanceValidationError as e:
        raise InstanceFileError(f"{path}: {e}")
    logger.debug(f"Loaded instance with M={instance.num_users}, nT={instance.num_tx_antennas} from {path}")
    return instance


def save_instance(instance: ProblemInstance, path: str) -> None:
    """Write an instance; floats use the shortest round-trip representation."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(InstanceFile.from_instance(instance).model_dump_json(indent=2))
        f.write("\n")
    logger.info(f"Instance saved to {path}")


class CertificateReport(BaseModel):
    order: List[int]  # 1-based
    multipliers: List[float]  # by position
    verdict: str
    tie_positions: List[int]  # 1-based positions
    sum_power: float


class TimeSharingReport(BaseModel):
    orders: List[List[int]]
    weights: List[float]
    vertex_rates: List[List[float]]


class DownlinkReport(BaseModel):
    beamformers: List[List[List[float]]]  # [re, im] pairs by user
    downlink_powers: List[float]
    sinrs: List[float]


class TraceReport(BaseModel):
    iteration: int
    dual_value: float
    upper_bound: float


class MethodReport(BaseModel):
    method: str
    sum_power: float
    sum_power_db: float
    powers: List[float]
    rates: List[float]
    order: List[int]
    iterations: Optional[int] = None
    termination: Optional[str] = None
    converged: Optional[bool] = None
    multipliers: Optional[List[float]] = None
    dual_gap_bound: Optional[float] = None
    certificate: Optional[CertificateReport] = None
    time_sharing: Optional[TimeSharingReport] = None
    time_sharing_error: Optional[str] = None
    downlink: Optional[List[DownlinkReport]] = None  # one per order
    trace: Optional[List[TraceReport]] = None


class SolveReport(BaseModel):
    status: str = "ok"
    num_users: int
    num_tx_antennas: int
    rate_targets: List[float]
    results: List[MethodReport] = Field(default_factory=list)


class ErrorReport(BaseModel):
    status: str = "error"
    error: str
    message: str


class SweepRow(BaseModel):
    rate_target: float
    method: str
    trial: int
    seed: int
    sum_power: float
    sum_power_db: float
    iterations: Optional[int] = None
    termination: Optional[str] = None
    time_sharing: Optional[bool] = None
    wall_time: Optional[float] = None

    @model_validator(mode="after")
    def validate_db(self) -> "SweepRow":
        if self.sum_power > 0 and abs(self.sum_power_db - to_db(self.sum_power)) > 1e-12 * max(1.0, abs(self.sum_power_db)):
            raise ValueError("sum_power_db does not match sum_power")
        return self


class SummaryRow(BaseModel):
    rate_target: float
    method: str
    trials: int
    mean_sum_power: float
    mean_sum_power_db: float


def to_db(power: float) -> float:
    """10 log10 of a linear power; -inf for zero power."""
    return 10.0 * math.log10(power) if power > 0 else -math.inf


def _render(value) -> str:
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class CsvTableWriter:
    """
    CSV writer with a fixed header; missing values are written as NA.

    Rows are flushed as they are written so an interrupted sweep keeps
    every completed row.
    """

    def __init__(self, stream: IO[str], model: type):
        self.fields = list(model.model_fields)
        self.stream = stream
        self.writer = csv.DictWriter(stream, fieldnames=self.fields, lineterminator="\n")
        self.rows_written = 0
        self.writer.writeheader()

    def write(self, row: BaseModel) -> None:
        record: Dict[str, str] = {name: _render(value) for name, value in row.model_dump().items()}
        self.writer.writerow(record)
        self.rows_written += 1
        self.stream.flush()


def summary_path(output: str) -> str:
    """The summary file sits next to the results: out.csv -> out_summary.csv."""
    stem, ext = os.path.splitext(output)
    return f"{stem}_summary{ext or '.csv'}"


def open_output(path: str) -> IO[str]:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    return open(path, "w", encoding="utf-8", newline="")
