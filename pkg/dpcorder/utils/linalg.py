"""
Small dense Hermitian helpers.

All matrices handled here are of the form I + sum of positive semidefinite
rank-one terms, so a Cholesky factorization always exists for valid inputs.
A failed factorization means the inputs were corrupted (NaN, negative
powers) and is reported as NotPositiveDefiniteError.
"""

import logging
from typing import Tuple

import numpy as np
from scipy import linalg as sla

from dpcorder.errors import NotPositiveDefiniteError

logger = logging.getLogger(__name__)

CholeskyFactor = Tuple[np.ndarray, bool]


def hermitian_factor(matrix: np.ndarray) -> CholeskyFactor:
    """
    Cholesky-factor a Hermitian positive-definite matrix.

    Args:
        matrix: square complex or real array

    Returns:
        The (factor, lower) pair accepted by scipy.linalg.cho_solve

    Raises:
        NotPositiveDefiniteError: if the factorization breaks down
    """
    try:
        return sla.cho_factor(matrix, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.debug(f"Cholesky factorization failed: {e}")
        raise NotPositiveDefiniteError(
            f"matrix is not Hermitian positive definite: {e}"
        ) from e


def hermitian_solve(factor: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    """Solve Z x = rhs given the Cholesky factor of Z."""
    return sla.cho_solve(factor, rhs, check_finite=False)


def logdet_from_factor(factor: CholeskyFactor) -> float:
    """Natural log-determinant of Z from its Cholesky factor."""
    diagonal = np.real(np.diag(factor[0]))
    return float(2.0 * np.sum(np.log(diagonal)))


def quadratic_form(factor: CholeskyFactor, vector: np.ndarray) -> float:
    """Return v^H Z^{-1} v as a real number."""
    solved = hermitian_solve(factor, vector)
    return float(np.real(np.vdot(vector, solved)))


def identity_plus_outer(
    channels: np.ndarray, powers: np.ndarray, dim: int
) -> np.ndarray:
    """
    Build I + sum_k powers[k] h_k h_k^H.

    Args:
        channels: (K, nT) array whose rows are the vectors h_k
        powers: (K,) nonnegative weights
        dim: nT, used when K == 0
    """
    matrix = np.eye(dim, dtype=complex)
    if len(powers):
        weighted = channels.T * powers
        matrix = matrix + weighted @ channels.conj()
    # keep exactly Hermitian
    return 0.5 * (matrix + matrix.conj().T)
