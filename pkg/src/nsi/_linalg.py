import logging

import numpy as np
from scipy import linalg

from .exceptions import NumericalError

logger = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def spd_solve(A, b, what="system"):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Tries a Cholesky solve first and escalates a relative diagonal jitter
    (scaled by the mean diagonal) when the factorization fails.
    """
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    scale = max(float(np.mean(np.abs(np.diag(A)))), 1e-300)
    eye = np.eye(A.shape[0])
    for jitter in JITTER_LADDER:
        try:
            cho = linalg.cho_factor(A + jitter * scale * eye, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if jitter > 0:
            logger.warning("%s: added jitter %.0e to reach positive definiteness", what, jitter)
        return linalg.cho_solve(cho, b)
    raise NumericalError(f"{what} is singular even after jitter {JITTER_LADDER[-1]:.0e}; "
                         "try larger penalties")


def pinv_sqrt_psd(A, rtol=1e-10):
    """Pseudo-inverse symmetric square root of a PSD matrix.

    Eigen-directions below ``rtol * max eigenvalue`` are dropped, so exact
    duplicates among the generating columns do not change the result.
    """
    A = np.asarray(A, dtype=float)
    w, V = linalg.eigh(0.5 * (A + A.T))
    if w.max() <= 0:
        raise NumericalError("matrix has no positive eigenvalues")
    keep = w > rtol * w.max()
    return (V[:, keep] / np.sqrt(w[keep])) @ V[:, keep].T
