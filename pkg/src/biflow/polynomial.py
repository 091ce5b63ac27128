"""Hermite bases and the integrated-rectifier monotone map component.

A component with ``k`` inputs evaluates

    c(z) = g(z_1..z_{k-1}) + integral_0^{z_k} softplus(h(z_1..z_{k-1}, t)) dt

where ``g`` and ``h`` are expansions in products of probabilists' Hermite
polynomials. The softplus keeps the integrand positive, so ``c`` is strictly
increasing in its last argument whatever the coefficients are.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# softplus(IDENTITY_LEVEL) == 1, so a constant h at this level gives c(z) = z_k.
IDENTITY_LEVEL = float(np.log(np.expm1(1.0)))
RECTIFIER_CLAMP = 30.0


def hermite_table(x, max_degree: int) -> np.ndarray:
    """He_0..He_p at every entry of ``x``; the degree is the trailing axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = x
    for k in range(1, max_degree):
        out[..., k + 1] = x * out[..., k] - k * out[..., k - 1]
    return out


def softplus(t):
    """``log(1 + e^t)`` with the exponent clamped to [-30, 30].

    Below -30 the value is held at ``softplus(-30) > 0``, so the rectified
    integrand never underflows to zero; above 30 it equals ``t``.
    """
    t = np.asarray(t, dtype=float)
    return np.where(t > RECTIFIER_CLAMP, t, np.log1p(np.exp(np.clip(t, -RECTIFIER_CLAMP, RECTIFIER_CLAMP))))


def softplus_slope(t):
    """Derivative of ``softplus``; zero on the clamped lower branch."""
    t = np.asarray(t, dtype=float)
    return np.where(t < -RECTIFIER_CLAMP, 0.0, expit(t))


def log_softplus(t):
    return np.log(softplus(t))


def logistic_over_softplus(t):
    """Derivative of ``log_softplus``."""
    return softplus_slope(t) / softplus(t)


@dataclass(frozen=True)
class MultiIndexSet:
    """Exponent tuples of a total-order polynomial space."""

    dimension: int
    indices: np.ndarray
    max_total_order: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, self.dimension)
        if idx.shape[0] == 0 or not np.any(np.all(idx == 0, axis=1)):
            raise ValueError("multi-index set must contain the zero tuple")
        if np.any(idx < 0) or np.any(idx.sum(axis=1) > self.max_total_order):
            raise ValueError("multi-index exceeds the declared total order")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @classmethod
    def total_order(cls, dimension: int, order: int) -> "MultiIndexSet":
        tuples = [
            t for t in itertools.product(range(order + 1), repeat=dimension) if sum(t) <= order
        ]
        tuples.sort(key=lambda t: (sum(t), t[::-1]))
        return cls(dimension, np.array(tuples, dtype=np.int64).reshape(-1, dimension), order)

    def __len__(self):
        return self.indices.shape[0]

    def evaluate(self, z) -> np.ndarray:
        """Basis matrix of shape ``(N, len(self))`` for points ``z`` of shape ``(N, dimension)``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        tables = hermite_table(z, self.max_total_order)
        out = np.ones((z.shape[0], len(self)))
        for j in range(self.dimension):
            out *= tables[:, j, self.indices[:, j]]
        return out


@dataclass
class MonotoneComponent:
    """One integrated-rectifier component ``c(z_1, ..., z_k)``.

    ``coeffs_nonmonotone`` multiply the basis terms whose last exponent is zero
    (the ``g`` part); ``coeffs_monotone`` multiply every term of ``basis``
    inside the rectifier (the ``h`` part).
    """

    basis: MultiIndexSet
    coeffs_nonmonotone: np.ndarray
    coeffs_monotone: np.ndarray
    quadrature_nodes: int = 32
    _nodes: np.ndarray = field(init=False, repr=False)
    _weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.coeffs_nonmonotone = np.array(self.coeffs_nonmonotone, dtype=float)
        self.coeffs_monotone = np.array(self.coeffs_monotone, dtype=float)
        if self.coeffs_nonmonotone.shape != (len(self.g_rows),):
            raise ValueError(
                f"expected {len(self.g_rows)} non-monotone coefficients, "
                f"got {self.coeffs_nonmonotone.shape}"
            )
        if self.coeffs_monotone.shape != (len(self.basis),):
            raise ValueError(
                f"expected {len(self.basis)} monotone coefficients, got {self.coeffs_monotone.shape}"
            )
        nodes, weights = np.polynomial.legendre.leggauss(int(self.quadrature_nodes))
        # map [-1, 1] onto [0, 1]
        self._nodes = 0.5 * (nodes + 1.0)
        self._weights = 0.5 * weights

    @classmethod
    def identity(cls, input_dim: int, order: int, quadrature_nodes: int = 32):
        basis = MultiIndexSet.total_order(input_dim, order)
        comp = cls(
            basis,
            np.zeros(int(np.sum(basis.indices[:, -1] == 0))),
            np.zeros(len(basis)),
            quadrature_nodes,
        )
        comp.coeffs_monotone[0] = IDENTITY_LEVEL
        return comp

    @property
    def input_dim(self) -> int:
        return self.basis.dimension

    @property
    def max_total_order(self) -> int:
        return self.basis.max_total_order

    @property
    def g_rows(self) -> np.ndarray:
        return np.flatnonzero(self.basis.indices[:, -1] == 0)

    @property
    def n_coeffs(self) -> int:
        return self.coeffs_nonmonotone.size + self.coeffs_monotone.size

    def get_coeffs(self) -> np.ndarray:
        return np.concatenate([self.coeffs_nonmonotone, self.coeffs_monotone])

    def set_coeffs(self, c) -> None:
        c = np.asarray(c, dtype=float)
        ng = self.coeffs_nonmonotone.size
        self.coeffs_nonmonotone = c[:ng].copy()
        self.coeffs_monotone = c[ng:].copy()

    # -- evaluation ------------------------------------------------------

    def prefix(self, z_prev):
        """Basis factors that depend only on the first ``k - 1`` inputs.

        Returns ``(g_basis, h_prefix)``: the full ``g`` basis matrix and the
        product over the leading variables for every ``h`` term.
        """
        z_prev = np.asarray(z_prev, dtype=float)
        n = z_prev.shape[0]
        idx = self.basis.indices
        h_prefix = np.ones((n, len(self.basis)))
        if self.input_dim > 1:
            tables = hermite_table(z_prev, self.max_total_order)
            for j in range(self.input_dim - 1):
                h_prefix *= tables[:, j, idx[:, j]]
        return h_prefix[:, self.g_rows], h_prefix

    def _h_at(self, h_prefix, t):
        """``h`` evaluated at last-coordinate values ``t`` (shape ``(N,)`` or ``(N, Q)``)."""
        last = hermite_table(t, self.max_total_order)[..., self.basis.indices[:, -1]]
        if last.ndim == 3:
            return np.einsum("nqi,ni,i->nq", last, h_prefix, self.coeffs_monotone)
        return np.einsum("ni,ni,i->n", last, h_prefix, self.coeffs_monotone)

    def _integral(self, h_prefix, t):
        pts = t[:, None] * self._nodes[None, :]
        h = self._h_at(h_prefix, pts)
        return t * (softplus(h) @ self._weights)

    def evaluate_with_prefix(self, g_basis, h_prefix, t) -> np.ndarray:
        return g_basis @ self.coeffs_nonmonotone + self._integral(h_prefix, t)

    def evaluate(self, z) -> np.ndarray:
        """Component value at points ``z`` of shape ``(N, k)``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        g_basis, h_prefix = self.prefix(z[:, :-1])
        return self.evaluate_with_prefix(g_basis, h_prefix, z[:, -1])

    def diagonal_derivative(self, z) -> np.ndarray:
        """Partial derivative in the last input, ``softplus(h(z))``."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        _, h_prefix = self.prefix(z[:, :-1])
        return softplus(self._h_at(h_prefix, z[:, -1]))

    def log_diagonal_derivative(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        _, h_prefix = self.prefix(z[:, :-1])
        return log_softplus(self._h_at(h_prefix, z[:, -1]))

    # -- gradients -------------------------------------------------------

    def objective_and_gradient(self, z):
        """Mean of ``0.5 c(z)^2 - log dc/dz_k`` over rows of ``z`` and its coefficient gradient."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        n = z.shape[0]
        g_basis, h_prefix = self.prefix(z[:, :-1])
        t = z[:, -1]
        idx_last = self.basis.indices[:, -1]

        pts = t[:, None] * self._nodes[None, :]
        last_q = hermite_table(pts, self.max_total_order)[..., idx_last]  # (N, Q, I)
        phi_q = last_q * h_prefix[:, None, :]
        h_q = phi_q @ self.coeffs_monotone
        value = g_basis @ self.coeffs_nonmonotone + t * (softplus(h_q) @ self._weights)

        phi_end = hermite_table(t, self.max_total_order)[:, idx_last] * h_prefix
        h_end = phi_end @ self.coeffs_monotone

        loss = 0.5 * value**2 - log_softplus(h_end)

        d_value_dmono = t[:, None] * np.einsum("nq,nqi->ni", softplus_slope(h_q) * self._weights, phi_q)
        grad_g = value @ g_basis / n
        grad_h = (value @ d_value_dmono - logistic_over_softplus(h_end) @ phi_end) / n
        return float(loss.mean()), np.concatenate([grad_g, grad_h])

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "max_total_order": self.max_total_order,
            "multi_indices": self.basis.indices.tolist(),
            "coeffs_nonmonotone": self.coeffs_nonmonotone.tolist(),
            "coeffs_monotone": self.coeffs_monotone.tolist(),
            "quadrature_nodes": int(self.quadrature_nodes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonotoneComponent":
        basis = MultiIndexSet(
            int(d["input_dim"]),
            np.array(d["multi_indices"], dtype=np.int64).reshape(-1, int(d["input_dim"])),
            int(d["max_total_order"]),
        )
        return cls(
            basis,
            np.array(d["coeffs_nonmonotone"], dtype=float),
            np.array(d["coeffs_monotone"], dtype=float),
            int(d["quadrature_nodes"]),
        )
