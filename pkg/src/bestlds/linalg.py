"""Small linear-algebra helpers used throughout the package."""

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError

# Relative cutoff for rank-revealing pseudo-inverses and least squares.
PINV_RTOL = 1e-10

# Eigenvalue floor used when repairing nearly-PSD matrices.
PSD_FLOOR = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def spectral_radius(a: np.ndarray) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def chol_lower(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Lower Cholesky factor, raising NumericalError with the offending eigenvalue."""
    try:
        return np.linalg.cholesky(symmetrize(a))
    except np.linalg.LinAlgError:
        evals = np.linalg.eigvalsh(symmetrize(a))
        raise NumericalError(
            f"{name} is not positive definite (min eigenvalue {evals[0]:.3e})"
        ) from None


def repair_psd(a: np.ndarray, floor: float = PSD_FLOOR) -> tuple[np.ndarray, bool]:
    """Clip eigenvalues of a symmetric matrix at ``floor``.

    Returns the (possibly) repaired matrix and a flag saying whether any
    clipping happened. Matrices already at or above the floor pass through
    untouched so exact results stay exact.
    """
    a = symmetrize(a)
    evals, evecs = np.linalg.eigh(a)
    if evals[0] >= floor:
        return a, False
    clipped = np.maximum(evals, floor)
    return symmetrize((evecs * clipped) @ evecs.T), True


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Tiny negative eigenvalues from roundoff are treated as zero.
    """
    a = symmetrize(a)
    evals, evecs = np.linalg.eigh(a)
    if evals[0] < -1e-8 * max(1.0, abs(evals[-1])):
        raise NumericalError(
            f"matrix is not PSD (min eigenvalue {evals[0]:.3e}), cannot take square root"
        )
    return (evecs * np.sqrt(np.maximum(evals, 0.0))) @ evecs.T


def pinv_truncated(a: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with singular values below
    PINV_RTOL * sigma_max treated as exactly zero."""
    return np.linalg.pinv(a, rcond=PINV_RTOL)


def lstsq_truncated(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solve of a @ x = b with the same
    truncation rule as pinv_truncated."""
    x, _, _, _ = np.linalg.lstsq(a, b, rcond=PINV_RTOL)
    return x


def solve_stationary_cov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Solve P = A P A' + Q for a strictly stable A."""
    p = sla.solve_discrete_lyapunov(a, symmetrize(q))
    return symmetrize(p)
