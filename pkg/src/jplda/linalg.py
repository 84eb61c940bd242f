"""Small Cholesky-based helpers used by the posterior, trainer and scorer.

All symmetric positive definite solves in the package go through these
functions so that failures surface as :class:`NumericalError` with context.
"""

import numpy as np
from scipy.linalg import cho_solve

from .exceptions import NumericalError


def chol_logdet(mat, context="matrix"):
    """Cholesky factor and log-determinant of one SPD matrix."""
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{context} is not positive definite") from exc
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol)))
    return chol, float(logdet)


def chol_solve(chol, rhs):
    """Solve A x = rhs given the lower Cholesky factor of A."""
    return cho_solve((chol, True), rhs)


def chol_logdet_stack(mats, context="matrix stack"):
    """Batched Cholesky factors and log-determinants for a (..., k, k) stack."""
    try:
        chols = np.linalg.cholesky(mats)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"{context} has a non-positive-definite entry") from exc
    logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=-2, axis2=-1)), axis=-1)
    return chols, logdets


def chol_solve_stack(chols, rhs):
    """Batched SPD solve given lower Cholesky factors.

    ``chols`` is (..., k, k), ``rhs`` is (..., k) or (..., k, m); the two
    triangular systems are solved with LAPACK through ``np.linalg.solve``,
    which is exact for triangular inputs.
    """
    squeeze = rhs.ndim == chols.ndim - 1
    if squeeze:
        rhs = rhs[..., None]
    half = np.linalg.solve(chols, rhs)
    out = np.linalg.solve(np.swapaxes(chols, -2, -1), half)
    return out[..., 0] if squeeze else out


def inv_stack(mats, context="matrix stack"):
    """Batched SPD inverse via Cholesky, symmetrized against roundoff."""
    chols, _ = chol_logdet_stack(mats, context)
    eye = np.broadcast_to(np.eye(mats.shape[-1]), mats.shape)
    inv = chol_solve_stack(chols, np.ascontiguousarray(eye))
    return 0.5 * (inv + np.swapaxes(inv, -2, -1))
