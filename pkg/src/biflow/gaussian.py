"""Closed-form linear-Gaussian inverse problem.

Prior ``u ~ N(0, sigma_u)``, likelihood ``f | u ~ N(K u, sigma_f)``. The joint
law is Gaussian, so both triangular transports and the bidirectional map are
plain matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .maps import AffineTriangularMap
from .sampling import write_matrix_csv

INVERSE_FORMULA_TOL = 1e-8


@dataclass(frozen=True)
class GaussianLinearProblem:
    K: np.ndarray
    sigma_u: np.ndarray
    sigma_f: np.ndarray

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        su = np.atleast_2d(np.asarray(self.sigma_u, dtype=float))
        sf = np.atleast_2d(np.asarray(self.sigma_f, dtype=float))
        m, n = K.shape
        if su.shape != (n, n) or sf.shape != (m, m):
            raise ValueError(
                f"inconsistent shapes: K {K.shape}, sigma_u {su.shape}, sigma_f {sf.shape}"
            )
        # both raise on asymmetric or indefinite input
        linalg.cholesky_lower(su)
        linalg.cholesky_lower(sf)
        for name, value in (("K", K), ("sigma_u", su), ("sigma_f", sf)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.K.shape[1]

    @property
    def m(self) -> int:
        return self.K.shape[0]

    def with_noise(self, sigma: float) -> "GaussianLinearProblem":
        """Copy with ``sigma_f = sigma**2 * I``."""
        return replace(self, sigma_f=sigma**2 * np.eye(self.m))


@dataclass(frozen=True)
class GaussianMaps:
    """Matrices of the lower/upper transports and of ``S`` and ``R = S^{-1}``."""

    f_check: np.ndarray
    f_hat: np.ndarray
    s: np.ndarray
    r: np.ndarray
    sigma_post: np.ndarray
    n: int
    m: int

    def lower_map(self) -> AffineTriangularMap:
        return AffineTriangularMap(self.f_check, orientation="lower")

    def upper_map(self) -> AffineTriangularMap:
        return AffineTriangularMap(self.f_hat, orientation="upper")

    def bidirectional(self):
        from .bidirectional import BidirectionalMap

        return BidirectionalMap(self.n, self.m, self.lower_map(), self.upper_map())


def joint_covariance(p: GaussianLinearProblem) -> np.ndarray:
    """Covariance of the stacked vector ``(u, f)``."""
    su_kt = p.sigma_u @ p.K.T
    top = np.hstack([p.sigma_u, su_kt])
    bottom = np.hstack([su_kt.T, p.K @ su_kt + p.sigma_f])
    joint = np.vstack([top, bottom])
    return 0.5 * (joint + joint.T)


def _spd_inverse(a):
    low = linalg.cholesky_lower(a)
    inv_low = linalg.triangular_inverse(low, "lower")
    out = inv_low.T @ inv_low
    return 0.5 * (out + out.T)


def posterior_covariance(p: GaussianLinearProblem) -> np.ndarray:
    precision = p.K.T @ _spd_inverse(p.sigma_f) @ p.K + _spd_inverse(p.sigma_u)
    return _spd_inverse(0.5 * (precision + precision.T))


def posterior_moments(p: GaussianLinearProblem, f):
    """Posterior mean and covariance of ``u`` given the measurement ``f``."""
    f = np.asarray(f, dtype=float)
    cov = posterior_covariance(p)
    mean = cov @ p.K.T @ np.linalg.solve(p.sigma_f, f)
    return mean, cov


def build_maps(p: GaussianLinearProblem) -> GaussianMaps:
    """Triangular square roots of the joint covariance and the matrices of ``S``, ``R``.

    The posterior block ``P`` of the upper map is the upper Cholesky factor
    of the posterior covariance; the matrix of ``S`` then carries ``P.T``
    (lower triangular, ``P.T.T @ P.T`` equals the posterior covariance) so
    that ``S`` coincides with the composition of the two conditional maps.
    """
    n, m, K = p.n, p.m, p.K
    low_u = linalg.cholesky_lower(p.sigma_u)
    low_f = linalg.cholesky_lower(p.sigma_f)
    f_check = np.block([[low_u, np.zeros((n, m))], [K @ low_u, low_f]])

    marginal_f = K @ p.sigma_u @ K.T + p.sigma_f
    up_f = linalg.cholesky_upper(0.5 * (marginal_f + marginal_f.T))
    sigma_post = posterior_covariance(p)
    up_post = linalg.cholesky_upper(sigma_post)
    # cross block B solves B @ up_f.T = sigma_u K^T, i.e. up_f @ B.T = K sigma_u
    cross = linalg.solve_triangular(up_f, K @ p.sigma_u, side="upper").T
    f_hat = np.block([[up_post, cross], [np.zeros((m, n)), up_f]])

    sigma_u_inv = _spd_inverse(p.sigma_u)
    inv_low_f = linalg.triangular_inverse(low_f, "lower")
    s = np.block(
        [
            [up_post.T @ sigma_u_inv, -up_post.T @ K.T @ inv_low_f.T],
            [K, low_f],
        ]
    )
    r_formula = np.block(
        [
            [up_post, sigma_post @ K.T @ inv_low_f.T @ inv_low_f],
            [-inv_low_f @ K @ up_post, low_f.T @ _spd_inverse(marginal_f)],
        ]
    )
    r_numeric = np.linalg.inv(s)
    gap = np.max(np.abs(r_formula - r_numeric)) / max(1.0, np.max(np.abs(r_numeric)))
    if gap > INVERSE_FORMULA_TOL:
        warnings.warn(
            f"closed-form inverse differs from numerical inverse by {gap:.2e}; using the numerical one",
            RuntimeWarning,
            stacklevel=2,
        )
        r = r_numeric
    else:
        r = r_formula
    return GaussianMaps(f_check, f_hat, s, r, sigma_post, n, m)


SWEEP_HEADER = ["sigma", "kappa_lower", "kappa_upper", "kappa_s"]


def condition_sweep(template: GaussianLinearProblem, sigmas) -> np.ndarray:
    """Rows ``(sigma, kappa(F_check), kappa(F_hat), kappa(S))`` with ``sigma_f = sigma^2 I``."""
    sigmas = np.asarray(sigmas, dtype=float).ravel()
    if np.any(sigmas <= 0):
        raise ValueError("noise levels must be positive")
    rows = []
    for sigma in sigmas:
        maps = build_maps(template.with_noise(sigma))
        rows.append(
            (
                sigma,
                linalg.condition_number_2(maps.f_check),
                linalg.condition_number_2(maps.f_hat),
                linalg.condition_number_2(maps.s),
            )
        )
    return np.array(rows, dtype=float).reshape(-1, 4)


def write_sweep_csv(path, table) -> None:
    write_matrix_csv(path, table, SWEEP_HEADER)


def benchmark_problem(sigma: float = 1.0) -> GaussianLinearProblem:
    """The 2x2 example: ``K = [[2, 1], [1, 2]]``, identity prior, ``sigma^2 I`` noise."""
    return GaussianLinearProblem(
        np.array([[2.0, 1.0], [1.0, 2.0]]), np.eye(2), sigma**2 * np.eye(2)
    )
