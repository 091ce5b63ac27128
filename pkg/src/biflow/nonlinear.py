"""Two-dimensional example with a discontinuous likelihood.

The joint law is the pushforward of N(0, I_2) under the lower-triangular map
``(x, y) -> (a x, sign(a x) + b y)``, so ``u ~ N(0, a^2)`` and
``f | u ~ N(sign(u), b^2)``. The lower transport is known exactly; the upper
one is fitted from samples.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import expit
from scipy.stats import norm

from . import linalg
from .bidirectional import BidirectionalMap
from .maps import InverseMap, MonotoneTriangularMap, jacobian_fd, like_inverse, register_map_kind
from .sampling import as_rng
from .training import TrainConfig, fit_map

ORACLE_RANGE = (-6.0, 6.0)
ORACLE_POINTS = 4001
TV_BIN_WIDTH = 0.25


def sign(t):
    """Sign with ``sign(0) = +1``."""
    return np.where(np.asarray(t) >= 0, 1.0, -1.0)


@register_map_kind
class SignTargetMap:
    """Exact lower transport ``(x, y) -> (a x, sign(a x) + b y)``."""

    kind = "sign_target"
    orientation = "lower"
    dimension = 2

    def __init__(self, a: float = 1.0, b: float = 0.5):
        if not (a > 0 and b > 0):
            raise ValueError("a and b must be positive")
        self.a = float(a)
        self.b = float(b)

    def forward(self, z):
        z = np.asarray(z, dtype=float)
        z2 = np.atleast_2d(z)
        u = self.a * z2[:, 0]
        out = np.column_stack([u, sign(u) + self.b * z2[:, 1]])
        return out[0] if z.ndim == 1 else out

    def inverse(self, w):
        w = np.asarray(w, dtype=float)
        w2 = np.atleast_2d(w)
        out = np.column_stack([w2[:, 0] / self.a, (w2[:, 1] - sign(w2[:, 0])) / self.b])
        return out[0] if w.ndim == 1 else out

    def log_det_jacobian(self, z, direction="forward"):
        value = np.log(self.a) + np.log(self.b)
        if direction == "inverse":
            value = -value
        z = np.asarray(z)
        return float(value) if z.ndim == 1 else np.full(z.shape[0], value)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["b"])


@register_map_kind
class ExactUpperMap:
    """Closed-form upper transport of the same joint law, used as an oracle.

    ``F_hat_2`` is the quantile map of the two-component marginal of ``f``;
    ``F_hat_1`` is the quantile map of ``u | f``, a pair of half-normals with
    weights ``expit(+-2 f / b^2)``.
    """

    kind = "sign_target_exact_upper"
    orientation = "upper"
    dimension = 2

    def __init__(self, a: float = 1.0, b: float = 0.5):
        if not (a > 0 and b > 0):
            raise ValueError("a and b must be positive")
        self.a = float(a)
        self.b = float(b)

    def _weights(self, f):
        return expit(-2.0 * f / self.b**2), expit(2.0 * f / self.b**2)

    def _marginal_cdf(self, f):
        return 0.5 * (norm.cdf((f - 1.0) / self.b) + norm.cdf((f + 1.0) / self.b))

    def _marginal_quantile(self, q):
        lo = np.full_like(q, -1.0 - 40.0 * self.b)
        hi = np.full_like(q, 1.0 + 40.0 * self.b)
        for _ in range(120):
            mid = 0.5 * (lo + hi)
            below = self._marginal_cdf(mid) < q
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def forward(self, z):
        z = np.asarray(z, dtype=float)
        z2 = np.atleast_2d(z)
        f = self._marginal_quantile(norm.cdf(z2[:, 1]))
        w_neg, w_pos = self._weights(f)
        q = norm.cdf(z2[:, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            left = norm.ppf(np.minimum(q / (2.0 * w_neg), 1.0))
            right = norm.ppf(np.clip(0.5 + (q - w_neg) / (2.0 * w_pos), 0.0, 1.0))
        out = np.column_stack([self.a * np.where(q < w_neg, left, right), f])
        return out[0] if z.ndim == 1 else out

    def inverse(self, w):
        w = np.asarray(w, dtype=float)
        w2 = np.atleast_2d(w)
        u, f = w2[:, 0] / self.a, w2[:, 1]
        w_neg, w_pos = self._weights(f)
        q = np.where(u < 0, 2.0 * w_neg * norm.cdf(u), w_neg + 2.0 * w_pos * (norm.cdf(u) - 0.5))
        out = np.column_stack([norm.ppf(q), norm.ppf(self._marginal_cdf(f))])
        return out[0] if w.ndim == 1 else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["b"])


def sample_target(a, b, n, seed=0) -> np.ndarray:
    z = as_rng(seed, stream_id=0x54415247).normal((n, 2))
    return SignTargetMap(a, b).forward(z)


def likelihood_cdf(u, b):
    """CDF of ``f | u``, the normal law N(sign(u), b^2)."""
    return lambda f: norm.cdf(f, loc=float(sign(u)), scale=b)


def posterior_grid(f, a, b, lo=ORACLE_RANGE[0], hi=ORACLE_RANGE[1], points=ORACLE_POINTS):
    """Normalised posterior density of ``u`` given ``f`` on a uniform grid."""
    u = np.linspace(lo, hi, points)
    dens = norm.pdf(u, scale=a) * norm.pdf(f, loc=sign(u), scale=b)
    dens /= trapezoid(dens, u)
    return u, dens


def posterior_bin_probabilities(f, a, b, edges):
    """Posterior mass of each bin, by trapezoidal quadrature on the oracle grid."""
    u, dens = posterior_grid(f, a, b)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(u))])
    return np.diff(np.interp(edges, u, cdf))


def posterior_tv(samples, f, a, b, bin_width=TV_BIN_WIDTH) -> float:
    """Total-variation distance between binned samples and the gridded posterior."""
    lo, hi = ORACLE_RANGE
    edges = np.linspace(lo, hi, int(round((hi - lo) / bin_width)) + 1)
    counts, _ = np.histogram(np.asarray(samples).ravel(), bins=edges)
    probs = posterior_bin_probabilities(f, a, b, edges)
    outside = 1.0 - counts.sum() / np.asarray(samples).size
    return 0.5 * float(np.abs(counts / np.asarray(samples).size - probs).sum() + outside)


def fit_upper_map(data, order=4, cfg: TrainConfig | None = None):
    """Fit the upper transport to joint samples; returns ``(pullback_map, report)``."""
    M = MonotoneTriangularMap.identity(2, order=order, orientation="upper")
    report = fit_map(M, data, cfg or TrainConfig())
    return M, report


def assemble(a, b, pullback_map) -> BidirectionalMap:
    return BidirectionalMap(1, 1, SignTargetMap(a, b), InverseMap(pullback_map))


CONDITION_HEADER = ["u", "f", "kappa_lower", "kappa_upper", "kappa_s"]


def condition_grid(S: BidirectionalMap, lo=-2.0, hi=2.0, points=41) -> np.ndarray:
    """Rows ``(u, f, kappa(grad F_check), kappa(grad F_hat), kappa(grad S))`` over a square grid.

    The grid lives in the data plane. Each map's Jacobian is taken at the
    point that corresponds to ``(u, f)``: ``F_check`` and ``F_hat`` at their
    preimages of ``(u, f)`` (the condition number of the inverse Jacobian there
    is the same), ``S`` at ``(u, y)`` with ``y`` the likelihood reference
    coordinate of ``f``.
    """
    axis = np.linspace(lo, hi, points)
    uu, ff = np.meshgrid(axis, axis, indexing="ij")
    w = np.column_stack([uu.ravel(), ff.ravel()])
    n = S.n
    y = like_inverse(S.f_check, w[:, :n], w[:, n:])
    rows = []
    for point, yk in zip(w, y):
        rows.append(
            (
                point[0],
                point[1],
                linalg.condition_number_2(jacobian_fd(S.f_check.inverse, point)),
                linalg.condition_number_2(jacobian_fd(S.f_hat.inverse, point)),
                linalg.condition_number_2(jacobian_fd(S.forward, np.concatenate([point[:n], yk]))),
            )
        )
    return np.array(rows)
