"""Dense linear algebra helpers: triangular square roots, conditioning, solves.

LAPACK (through numpy/scipy) does the arithmetic; this module adds the
input checks and the triangular conventions the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .exceptions import NotPositiveDefinite, NotSymmetric, SingularDiagonal

EPS = np.finfo(float).eps
SYMMETRY_RTOL = 1e-12


def _as_square(a, name="A"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _check_symmetric(a):
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_RTOL * max(scale, EPS):
        raise NotSymmetric("matrix is not symmetric within relative tolerance 1e-12")
    return 0.5 * (a + a.T)


def cholesky_lower(a) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == a`` and a positive diagonal.

    Raises
    ------
    NotSymmetric
        If ``a`` is asymmetric beyond a relative tolerance of 1e-12.
    NotPositiveDefinite
        If any pivot is at or below ``eps * trace(a)``.
    """
    a = _check_symmetric(_as_square(a))
    if a.shape[0] == 0:
        return a.copy()
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    threshold = EPS * np.trace(a)
    pivots = np.diag(low) ** 2
    if np.any(pivots <= threshold):
        k = int(np.argmin(pivots))
        raise NotPositiveDefinite(
            f"pivot {k} equals {pivots[k]:.3e}, below eps*trace = {threshold:.3e}"
        )
    return low


def cholesky_upper(a) -> np.ndarray:
    """Upper-triangular ``U`` with ``U @ U.T == a``.

    Computed by reversing the row and column order, taking the lower factor
    and reversing back, so there is a single factorization path.
    """
    a = _as_square(a)
    rev = a[::-1, ::-1]
    return cholesky_lower(rev)[::-1, ::-1].copy()


def condition_number_2(a) -> float:
    """Spectral condition number ``sigma_max / sigma_min``.

    Returns ``inf`` when ``sigma_min < eps * sigma_max``.
    """
    a = _as_square(a)
    if a.shape[0] == 0:
        return 1.0
    s = np.linalg.svd(a, compute_uv=False)
    smax, smin = s[0], s[-1]
    if smax == 0.0 or smin < EPS * smax:
        return float("inf")
    return float(smax / smin)


def solve_triangular(t, b, side: str = "lower") -> np.ndarray:
    """Solve ``t @ x = b`` for triangular ``t`` by forward or back substitution.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    t = _as_square(t, "T")
    b = np.asarray(b, dtype=float)
    norm_t = np.max(np.sum(np.abs(t), axis=1), initial=0.0)
    diag = np.abs(np.diag(t))
    if np.any(diag < EPS * norm_t) or np.any(diag == 0.0):
        raise SingularDiagonal("triangular matrix has a (numerically) zero diagonal entry")
    return scipy.linalg.solve_triangular(t, b, lower=(side == "lower"), check_finite=False)


def triangular_inverse(t, side: str = "lower") -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return solve_triangular(t, np.eye(t.shape[0]), side=side)


def is_lower_triangular(a, atol: float = 0.0) -> bool:
    a = np.asarray(a)
    return bool(np.all(np.abs(np.triu(a, 1)) <= atol))


def is_upper_triangular(a, atol: float = 0.0) -> bool:
    a = np.asarray(a)
    return bool(np.all(np.abs(np.tril(a, -1)) <= atol))
