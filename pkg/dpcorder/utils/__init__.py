"""Numerical and seeding helpers shared by the solvers."""

from dpcorder.utils.linalg import (
    hermitian_factor,
    hermitian_solve,
    logdet_from_factor,
    quadratic_form,
    identity_plus_outer,
)
from dpcorder.utils.seeding import derive_seed

__all__ = [
    "hermitian_factor",
    "hermitian_solve",
    "logdet_from_factor",
    "quadratic_form",
    "identity_plus_outer",
    "derive_seed",
]
