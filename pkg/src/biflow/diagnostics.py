"""Maximum mean discrepancy and the J-loss diagnostics of a bidirectional map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .exceptions import DimensionMismatch, InsufficientSamples
from .sampling import Rng, as_rng

DEFAULT_PERMUTATIONS = 200


@dataclass(frozen=True)
class MmdEstimate:
    """Unbiased MMD^2 estimate; ``value`` is clamped at zero, ``raw`` is not."""

    raw: float
    kernel_bandwidth: float
    n_a: int
    n_b: int
    permutation_p: Optional[float] = None

    @property
    def value(self) -> float:
        return max(self.raw, 0.0)

    def passes(self, level: float) -> bool:
        return self.permutation_p is not None and self.permutation_p > level

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "raw": self.raw,
            "kernel_bandwidth": self.kernel_bandwidth,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "permutation_p": self.permutation_p,
        }


def median_bandwidth(pooled) -> float:
    dists = pdist(pooled)
    med = float(np.median(dists)) if dists.size else 0.0
    return med if med > 0 else 1.0


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def _block_sums(kernel, assign, n_a):
    """Unbiased MMD^2 for each row of the 0/1 assignment matrix ``assign``."""
    n_b = kernel.shape[0] - n_a
    b_assign = 1.0 - assign
    ka = assign @ kernel
    kb = b_assign @ kernel
    diag = np.diag(kernel)
    s_aa = np.einsum("pi,pi->p", ka, assign) - assign @ diag
    s_bb = np.einsum("pi,pi->p", kb, b_assign) - b_assign @ diag
    s_ab = np.einsum("pi,pi->p", ka, b_assign)
    return s_aa / (n_a * (n_a - 1)) + s_bb / (n_b * (n_b - 1)) - 2.0 * s_ab / (n_a * n_b)


def mmd(a, b, bandwidth="auto", permutations: int = 0, seed=0) -> MmdEstimate:
    """Unbiased MMD^2 between two samples with a Gaussian kernel.

    ``bandwidth="auto"`` uses the median pairwise distance of the pooled
    sample. With ``permutations > 0`` a permutation p-value
    ``(1 + #{perm >= observed}) / (1 + permutations)`` is attached.
    """
    a = _as_2d(a)
    b = _as_2d(b)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch("MMD samples must have the same dimension")
    n_a, n_b = a.shape[0], b.shape[0]
    if n_a < 2 or n_b < 2:
        raise InsufficientSamples("MMD needs at least two samples on each side")
    pooled = np.vstack([a, b])
    h = median_bandwidth(pooled) if bandwidth == "auto" else float(bandwidth)
    kernel = np.exp(-cdist(pooled, pooled, "sqeuclidean") / (2.0 * h * h))

    observed = np.zeros((1, n_a + n_b))
    observed[0, :n_a] = 1.0
    raw = float(_block_sums(kernel, observed, n_a)[0])

    p_value = None
    if permutations > 0:
        rng = as_rng(seed, stream_id=0x4D4D44)
        exceed = 0
        for start in range(0, permutations, 50):
            count = min(50, permutations - start)
            assign = np.zeros((count, n_a + n_b))
            for row in range(count):
                assign[row, rng.permutation(n_a + n_b)[:n_a]] = 1.0
            stats = _block_sums(kernel, assign, n_a)
            exceed += int(np.sum(stats >= raw))
        p_value = (1 + exceed) / (1 + permutations)
    return MmdEstimate(raw, h, n_a, n_b, p_value)


def mmd_test(a, b, permutations: int = DEFAULT_PERMUTATIONS, seed=0) -> MmdEstimate:
    return mmd(a, b, "auto", permutations, seed)


def _halves(data, n, count):
    data = np.asarray(data, dtype=float)
    if count < 2 or data.shape[0] < 2 * count:
        raise InsufficientSamples(
            f"need {2 * count} joint samples for two disjoint halves of {count}, got {data.shape[0]}"
        )
    first, second = data[:count], data[count : 2 * count]
    return (first[:, :n], first[:, n:]), (second[:, :n], second[:, n:])


def j_losses(S, data, n_latent: int, seed=0, permutations: int = DEFAULT_PERMUTATIONS):
    """MMD estimates of the four pushforward discrepancies of ``S``.

    ``S`` needs ``n``, ``m``, ``apply_s`` and ``apply_r``. The joint data are
    split into two disjoint halves of ``n_latent`` rows: the first half is
    pushed through the map, the second serves as the comparison sample.

    * J1: ``(u, S2(u, y))`` vs ``(u, f)``
    * J2: ``(R1(x, f), f)`` vs ``(u, f)``
    * J3: ``S(u, y)`` vs ``(x, f)``
    * J4: ``R(x, f)`` vs ``(u, y)``
    """
    n, m = S.n, S.m
    (u_a, f_a), (u_b, f_b) = _halves(data, n, n_latent)
    rng = as_rng(seed, stream_id=0x4A)
    y = rng.normal((n_latent, m))
    x = rng.normal((n_latent, n))
    x_ref = rng.normal((n_latent, n))
    y_ref = rng.normal((n_latent, m))
    joint_b = np.hstack([u_b, f_b])

    x_s, f_s = S.apply_s(u_a, y)
    u_r, y_r = S.apply_r(x, f_a)

    def test(lhs, rhs, salt):
        return mmd(lhs, rhs, "auto", permutations, _salted(seed, salt))

    return (
        test(np.hstack([u_a, f_s]), joint_b, 1),
        test(np.hstack([u_r, f_a]), joint_b, 2),
        test(np.hstack([x_s, f_s]), np.hstack([x_ref, f_b]), 3),
        test(np.hstack([u_r, y_r]), np.hstack([u_b, y_ref]), 4),
    )


def _salted(seed, salt):
    base = seed.seed if isinstance(seed, Rng) else int(seed)
    return Rng(base, 0x5A17 + salt)
