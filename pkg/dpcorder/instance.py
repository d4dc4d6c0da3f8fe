"""
Problem instances for the dirty-paper-coded downlink and its dual uplink.

Order convention used by every module: a PrecodingOrder stores the list
[pi(1), ..., pi(M)] (0-based user indices). In the downlink, user pi(M) is
encoded first; in the dual uplink, user pi(1) is decoded first. Position m
therefore sees interference from the users at positions m+1..M in the
uplink and from positions 1..m-1 in the downlink.

All powers are noise-normalized (unit noise variance at every receiver) and
all externally visible rates are in bits per channel use.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from dpcorder.errors import InstanceValidationError, SizeLimitError
from dpcorder.utils.linalg import (
    CholeskyFactor,
    hermitian_factor,
    identity_plus_outer,
    logdet_from_factor,
    quadratic_form,
)
from dpcorder.utils.seeding import to_uint64

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
MAX_REGION_USERS = 20
# 2^R - 1 overflows float64 near 1024 bits
MAX_RATE_BITS = 1000.0


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """
    Per-user channel vectors h_m and rate targets (bits per channel use).

    channels is an (M, nT) complex array whose row m is h_m.
    """

    channels: np.ndarray
    rate_targets: np.ndarray

    def __post_init__(self):
        channels = np.array(self.channels, dtype=complex)
        if channels.ndim == 1:
            channels = channels.reshape(1, -1)
        targets = np.array(self.rate_targets, dtype=float).reshape(-1)

        if channels.ndim != 2 or channels.shape[0] < 1 or channels.shape[1] < 1:
            raise InstanceValidationError(
                f"channels must be a non-empty (M, nT) array, got shape {channels.shape}"
            )
        if targets.shape[0] != channels.shape[0]:
            raise InstanceValidationError(
                f"expected {channels.shape[0]} rate targets, got {targets.shape[0]}"
            )
        if not np.all(np.isfinite(channels)):
            raise InstanceValidationError("channel entries must be finite")
        norms = np.linalg.norm(channels, axis=1)
        if np.any(norms <= 0.0):
            zero_users = [int(i) for i in np.flatnonzero(norms <= 0.0)]
            raise InstanceValidationError(f"users {zero_users} have an all-zero channel")
        if not np.all(np.isfinite(targets)) or np.any(targets < 0.0):
            raise InstanceValidationError("rate targets must be finite and nonnegative")
        if np.any(targets > MAX_RATE_BITS):
            raise InstanceValidationError(f"rate targets above {MAX_RATE_BITS:g} bits are not representable")

        object.__setattr__(self, "channels", _frozen(channels))
        object.__setattr__(self, "rate_targets", _frozen(targets))

    @property
    def num_users(self) -> int:
        return self.channels.shape[0]

    @property
    def num_tx_antennas(self) -> int:
        return self.channels.shape[1]

    @property
    def sinr_targets(self) -> np.ndarray:
        """SINR targets 2^R - 1 matching the rate targets."""
        return sinr_from_rate(self.rate_targets)

    def channel_norms_squared(self) -> np.ndarray:
        return np.sum(np.abs(self.channels) ** 2, axis=1)

    def with_targets(self, rate_targets: Sequence[float]) -> "ProblemInstance":
        """Return a copy with different rate targets."""
        return ProblemInstance(channels=self.channels, rate_targets=np.asarray(rate_targets, dtype=float))

    def subset(self, users: Sequence[int]) -> "ProblemInstance":
        """Restrict the instance to the given users (in the given order)."""
        users = list(users)
        return ProblemInstance(channels=self.channels[users], rate_targets=self.rate_targets[users])


@dataclass(frozen=True)
class PrecodingOrder:
    """
    A permutation [pi(1), ..., pi(M)] of the 0-based user indices.

    pi(1) is decoded first in the uplink, pi(M) is encoded first in the
    downlink.
    """

    perm: Tuple[int, ...]

    def __post_init__(self):
        perm = tuple(int(u) for u in self.perm)
        if sorted(perm) != list(range(len(perm))) or not perm:
            raise InstanceValidationError(f"order {list(perm)} is not a permutation of 0..{len(perm) - 1}")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def identity(cls, num_users: int) -> "PrecodingOrder":
        return cls(tuple(range(num_users)))

    @classmethod
    def from_one_based(cls, users: Iterable[int]) -> "PrecodingOrder":
        """Build an order from 1-based user labels (CLI and report format)."""
        return cls(tuple(int(u) - 1 for u in users))

    def to_one_based(self) -> List[int]:
        return [u + 1 for u in self.perm]

    @property
    def num_users(self) -> int:
        return len(self.perm)

    def positions(self) -> np.ndarray:
        """positions()[u] is the 0-based position of user u in the order."""
        inverse = np.empty(len(self.perm), dtype=int)
        inverse[list(self.perm)] = np.arange(len(self.perm))
        return inverse

    def __iter__(self):
        return iter(self.perm)

    def __len__(self):
        return len(self.perm)


@dataclass(frozen=True, eq=False)
class PowerAllocation:
    """Nonnegative dual-uplink powers p_m, indexed by user."""

    powers: np.ndarray

    def __post_init__(self):
        powers = np.array(self.powers, dtype=float).reshape(-1)
        if not np.all(np.isfinite(powers)):
            raise InstanceValidationError("powers must be finite")
        if np.any(powers < 0.0):
            raise InstanceValidationError(f"powers must be nonnegative, got {powers.tolist()}")
        object.__setattr__(self, "powers", _frozen(powers))

    @classmethod
    def zeros(cls, num_users: int) -> "PowerAllocation":
        return cls(np.zeros(num_users))

    @property
    def sum_power(self) -> float:
        return float(np.sum(self.powers))

    def __len__(self):
        return len(self.powers)


@dataclass(frozen=True, eq=False)
class InterferenceMatrix:
    """
    Z = I + sum of p h h^H over a set of users, with its Cholesky factor.

    The factor is computed once at construction and reused for every
    solve, gain and log-determinant evaluation.
    """

    matrix: np.ndarray
    factor: CholeskyFactor = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InstanceValidationError(f"interference matrix must be square, got {matrix.shape}")
        if self.factor is None:
            object.__setattr__(self, "factor", hermitian_factor(matrix))
        object.__setattr__(self, "matrix", _frozen(matrix))

    @classmethod
    def identity(cls, dim: int) -> "InterferenceMatrix":
        return cls(np.eye(dim, dtype=complex))

    @classmethod
    def from_users(
        cls, instance: ProblemInstance, powers: Union[PowerAllocation, np.ndarray], users: Sequence[int]
    ) -> "InterferenceMatrix":
        """Build I + sum_{u in users} p_u h_u h_u^H."""
        p = powers.powers if isinstance(powers, PowerAllocation) else np.asarray(powers, dtype=float)
        users = list(users)
        return cls(identity_plus_outer(instance.channels[users], p[users], instance.num_tx_antennas))

    def gain(self, h: np.ndarray) -> float:
        return quadratic_form(self.factor, h)

    @property
    def logdet(self) -> float:
        """Natural log-determinant."""
        return logdet_from_factor(self.factor)


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    """Unit-norm downlink beamformers (rows) and downlink powers, by user."""

    beamformers: np.ndarray
    downlink_powers: np.ndarray

    def __post_init__(self):
        beams = np.array(self.beamformers, dtype=complex)
        powers = np.array(self.downlink_powers, dtype=float).reshape(-1)
        norms = np.linalg.norm(beams, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise InstanceValidationError(f"beamformers must have unit norm, got norms {norms.tolist()}")
        if np.any(powers < 0.0):
            raise InstanceValidationError("downlink powers must be nonnegative")
        object.__setattr__(self, "beamformers", _frozen(beams))
        object.__setattr__(self, "downlink_powers", _frozen(powers))

    @property
    def sum_power(self) -> float:
        return float(np.sum(self.downlink_powers))


@dataclass(frozen=True)
class CapacityRegionCheck:
    """Outcome of capacity_region_check; violated_subset is None when feasible."""

    feasible: bool
    violated_subset: Optional[Tuple[int, ...]] = None
    slack: Optional[float] = None


def sample_rayleigh_instance(
    num_users: int, num_tx_antennas: int, rate_target: float, seed: int
) -> ProblemInstance:
    """
    Draw an i.i.d. Rayleigh instance with equal rate targets.

    Every channel entry is circular-symmetric complex Gaussian with unit
    variance (real and imaginary parts N(0, 1/2)).
    """
    if num_users < 1 or num_tx_antennas < 1:
        raise InstanceValidationError(
            f"need at least one user and one antenna, got M={num_users}, nT={num_tx_antennas}"
        )
    rng = np.random.default_rng(to_uint64(seed))
    real = rng.standard_normal((num_users, num_tx_antennas))
    imag = rng.standard_normal((num_users, num_tx_antennas))
    channels = (real + 1j * imag) / math.sqrt(2.0)
    return ProblemInstance(channels=channels, rate_targets=np.full(num_users, float(rate_target)))


def rate_from_sinr(sinr):
    """R = log2(1 + SINR); accepts scalars or arrays."""
    if np.ndim(sinr) == 0:
        return float(math.log2(1.0 + float(sinr)))
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def sinr_from_rate(rate):
    """SINR = 2^R - 1; accepts scalars or arrays."""
    if np.ndim(rate) == 0:
        return float(math.expm1(float(rate) * LN2))
    return np.expm1(np.asarray(rate, dtype=float) * LN2)


def rate_targets_from_sinr(sinr_targets: Sequence[float]) -> np.ndarray:
    """Rate targets for the SINR-constrained formulation of the problem."""
    sinr = np.asarray(sinr_targets, dtype=float)
    if np.any(sinr < 0.0):
        raise InstanceValidationError("SINR targets must be nonnegative")
    return rate_from_sinr(sinr)


def effective_gain(h: np.ndarray, z: Union[InterferenceMatrix, np.ndarray]) -> float:
    """
    Return h^H Z^{-1} h via a Cholesky solve.

    Raises:
        NotPositiveDefiniteError: if Z is not positive definite
    """
    h = np.asarray(h, dtype=complex).reshape(-1)
    if not isinstance(z, InterferenceMatrix):
        z = InterferenceMatrix(np.asarray(z, dtype=complex))
    if z.matrix.shape[0] != h.shape[0]:
        raise InstanceValidationError(
            f"dimension mismatch: h has {h.shape[0]} entries, Z is {z.matrix.shape}"
        )
    return z.gain(h)


def interference_chain(
    instance: ProblemInstance, order: PrecodingOrder, powers: Union[PowerAllocation, np.ndarray]
) -> List[InterferenceMatrix]:
    """
    Return [Z_1, ..., Z_M, Z_{M+1}] (index 0 is Z_1, the last entry is I).

    Z_m = I + sum_{i=m}^{M} p_{pi(i)} h_{pi(i)} h_{pi(i)}^H, built by
    rank-one accumulation from the last position backwards.
    """
    p = powers.powers if isinstance(powers, PowerAllocation) else np.asarray(powers, dtype=float)
    dim = instance.num_tx_antennas
    current = np.eye(dim, dtype=complex)
    chain = [InterferenceMatrix.identity(dim)]
    for user in reversed(order.perm):
        h = instance.channels[user]
        if p[user] > 0.0:
            current = current + p[user] * np.outer(h, h.conj())
            current = 0.5 * (current + current.conj().T)
            chain.append(InterferenceMatrix(current.copy()))
        else:
            chain.append(chain[-1])
    chain.reverse()
    return chain


def mac_rates(
    instance: ProblemInstance, order: PrecodingOrder, powers: Union[PowerAllocation, np.ndarray]
) -> np.ndarray:
    """
    Successive-decoding rates of the dual uplink, reported by user index.

    R_{pi(m)} = log2(|Z_m| / |Z_{m+1}|).
    """
    chain = interference_chain(instance, order, powers)
    rates = np.zeros(instance.num_users)
    for position, user in enumerate(order.perm):
        rate = (chain[position].logdet - chain[position + 1].logdet) / LN2
        rates[user] = max(rate, 0.0)
    return rates


def subset_capacity(
    instance: ProblemInstance, powers: Union[PowerAllocation, np.ndarray], users: Sequence[int]
) -> float:
    """log2 |I + sum_{m in users} p_m h_m h_m^H| in bits."""
    if not len(users):
        return 0.0
    return InterferenceMatrix.from_users(instance, powers, users).logdet / LN2


def iter_subsets(num_users: int):
    """All nonempty subsets of range(num_users), by increasing size."""
    users = range(num_users)
    for size in range(1, num_users + 1):
        yield from itertools.combinations(users, size)


def capacity_slacks(
    instance: ProblemInstance,
    powers: Union[PowerAllocation, np.ndarray],
    targets: Sequence[float],
) -> dict:
    """
    Slack of every subset constraint of the uplink capacity region.

    Returns a mapping subset -> capacity(subset) - sum of targets in subset.
    """
    if instance.num_users > MAX_REGION_USERS:
        raise SizeLimitError(
            f"capacity region enumeration is limited to {MAX_REGION_USERS} users, got {instance.num_users}"
        )
    targets = np.asarray(targets, dtype=float)
    return {
        subset: subset_capacity(instance, powers, subset) - float(np.sum(targets[list(subset)]))
        for subset in iter_subsets(instance.num_users)
    }


def capacity_region_check(
    instance: ProblemInstance,
    powers: Union[PowerAllocation, np.ndarray],
    targets: Sequence[float],
    tol: float = 1e-9,
) -> CapacityRegionCheck:
    """
    Check that the targets lie in the uplink capacity region at these powers.

    Every nonempty subset S must satisfy
    log2|I + sum_{m in S} p_m h_m h_m^H| >= sum_{m in S} targets_m - tol.
    The most violated subset is returned when the check fails.
    """
    slacks = capacity_slacks(instance, powers, targets)
    worst_subset = min(slacks, key=lambda s: slacks[s])
    worst = slacks[worst_subset]
    if worst >= -tol:
        return CapacityRegionCheck(feasible=True, slack=worst)
    logger.debug(f"capacity region violated on subset {worst_subset} by {-worst:.3e} bits")
    return CapacityRegionCheck(feasible=False, violated_subset=worst_subset, slack=worst)


def tight_subsets(
    instance: ProblemInstance,
    powers: Union[PowerAllocation, np.ndarray],
    targets: Sequence[float],
    tol: float = 1e-9,
) -> List[Tuple[int, ...]]:
    """Subsets whose capacity constraint holds with equality (|slack| <= tol)."""
    slacks = capacity_slacks(instance, powers, targets)
    return [subset for subset, slack in slacks.items() if abs(slack) <= tol]


def nested_suffix_sets(order: PrecodingOrder) -> List[Tuple[int, ...]]:
    """The sets {pi(M)}, {pi(M-1), pi(M)}, ..., {pi(1), ..., pi(M)}, sorted."""
    return [tuple(sorted(order.perm[m:])) for m in range(len(order) - 1, -1, -1)]
