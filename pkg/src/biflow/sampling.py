"""Seeded sampling, sample containers and the summary statistics used in checks."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np

from .exceptions import DimensionMismatch, InsufficientSamples

_MASK64 = (1 << 64) - 1


class Rng:
    """Counter-based (Philox 4x64) generator keyed by ``(seed, stream_id)``.

    Separate stages of an experiment draw from separate streams, so adding
    draws in one stage never shifts the numbers seen by another.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def stream(self, stream_id: int) -> "Rng":
        return Rng(self.seed, stream_id)

    def uniform(self, size) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws by the Box-Muller transform."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        total = int(np.prod(shape))
        pairs = (total + 1) // 2
        u = self._gen.random((2, pairs))
        radius = np.sqrt(-2.0 * np.log1p(-u[0]))  # 1 - u in (0, 1]
        angle = 2.0 * np.pi * u[1]
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return z[:total].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream_id={self.stream_id})"


def as_rng(seed_or_rng, stream_id: int = 0) -> Rng:
    if isinstance(seed_or_rng, Rng):
        return seed_or_rng
    if seed_or_rng is None:
        seed_or_rng = 0
    return Rng(int(seed_or_rng), stream_id)


@dataclass(frozen=True)
class SampleBatch:
    """``N`` samples of a ``d``-vector, optionally labelled as a ``(u, f)`` split."""

    values: np.ndarray
    block_split: Optional[Tuple[int, int]] = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise DimensionMismatch(f"sample values must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sample values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.block_split is not None:
            n, m = (int(s) for s in self.block_split)
            if n < 0 or m < 0 or n + m != v.shape[1]:
                raise DimensionMismatch(
                    f"block split {(n, m)} inconsistent with dimension {v.shape[1]}"
                )
            object.__setattr__(self, "block_split", (n, m))

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return self.count

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    @property
    def u(self) -> np.ndarray:
        return self.values[:, : self._split()[0]]

    @property
    def f(self) -> np.ndarray:
        return self.values[:, self._split()[0] :]

    def _split(self):
        if self.block_split is None:
            raise ValueError("batch has no (n, m) block split")
        return self.block_split

    def to_csv(self, path) -> None:
        write_matrix_csv(path, self.values, [f"dim_{i}" for i in range(self.dimension)])

    @classmethod
    def from_csv(cls, path, block_split=None) -> "SampleBatch":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(x) for x in row] for row in reader]
        values = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return cls(values, block_split)


def write_matrix_csv(path, values, header) -> None:
    """Write rows at full double precision (17 significant digits)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(Path(path), "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in values:
            fh.write(",".join(format(x, ".17g") for x in row) + "\n")


def standard_normal(rng, n: int, d: int, block_split=None) -> SampleBatch:
    """``n`` i.i.d. draws from N(0, I_d)."""
    if d < 1:
        raise ValueError("dimension must be at least 1")
    if n < 1:
        raise ValueError("sample count must be at least 1")
    return SampleBatch(as_rng(rng).normal((n, d)), block_split)


def empirical_moments(batch):
    """Sample mean and unbiased (N - 1) covariance."""
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise InsufficientSamples("need at least two samples for a covariance")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return mean, cov


def moment_standard_errors(batch):
    """Monte-Carlo standard errors of the sample mean and sample covariance entries.

    The covariance error uses the fourth-moment estimate
    ``Var(x_i x_j) / N`` on centred data.
    """
    x = np.asarray(batch, dtype=float)
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    se_mean = centered.std(axis=0, ddof=1) / np.sqrt(n)
    prods = centered[:, :, None] * centered[:, None, :]
    se_cov = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return se_mean, se_cov


def ks_statistic(samples, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and ``cdf``."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise InsufficientSamples("KS statistic of an empty sample")
    ref = np.asarray(cdf(x), dtype=float)
    upper = np.arange(1, n + 1) / n - ref
    lower = ref - np.arange(0, n) / n
    return float(np.clip(max(upper.max(), lower.max()), 0.0, 1.0))


def histogram(samples, bins: int, range: Tuple[float, float]):
    """Fixed-width histogram; samples outside ``range`` are dropped."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise ValueError("histogram range is empty")
    x = np.asarray(samples, dtype=float).ravel()
    return np.histogram(x, bins=int(bins), range=(lo, hi))


def write_histogram_csv(path, counts, edges) -> None:
    with open(Path(path), "w", newline="") as fh:
        fh.write("bin_left,bin_right,count\n")
        for left, right, c in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{format(left, '.17g')},{format(right, '.17g')},{int(c)}\n")


def total_variation(p, q) -> float:
    """Half the L1 distance between two probability vectors (each normalised)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())
