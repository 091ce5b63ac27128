"""The bidirectional map ``S`` and its inverse ``R``.

``S(u, y) = (F_post^{-1}(u; F_like(y; u)), F_like(y; u))`` runs a simulation
in forward mode (``y`` is reference noise, the second output a measurement)
and ``R(x, f) = (F_post(x; f), F_like^{-1}(f; F_post(x; f)))`` runs inference
in reverse mode (the first output is a posterior draw).
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .diagnostics import DEFAULT_PERMUTATIONS, mmd
from .exceptions import DimensionMismatch, InsufficientSamples
from .maps import jacobian_fd, like_forward, like_inverse, map_from_dict, post_forward, post_inverse
from .sampling import SampleBatch, as_rng


def _split_args(a, b, n, m):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != n or b.shape[1] != m:
        raise DimensionMismatch(f"expected blocks of size ({n}, {m}), got ({a.shape[1]}, {b.shape[1]})")
    count = max(a.shape[0], b.shape[0])
    if a.shape[0] == 1:
        a = np.repeat(a, count, axis=0)
    if b.shape[0] == 1:
        b = np.repeat(b, count, axis=0)
    return a, b


class BidirectionalMap:
    """``S`` assembled from a lower (likelihood) and an upper (posterior) transport."""

    def __init__(self, n: int, m: int, f_check, f_hat):
        self.n = int(n)
        self.m = int(m)
        for tmap, orient in ((f_check, "lower"), (f_hat, "upper")):
            if tmap.dimension != self.n + self.m:
                raise DimensionMismatch(f"factor map has dimension {tmap.dimension}, expected {self.n + self.m}")
            if tmap.orientation != orient:
                raise ValueError(f"factor map must be {orient}-triangular, got {tmap.orientation}")
        self.f_check = f_check
        self.f_hat = f_hat

    @property
    def dimension(self) -> int:
        return self.n + self.m

    def apply_s(self, u, y):
        """Forward (simulation) mode: returns ``(x', f)``."""
        u, y = _split_args(u, y, self.n, self.m)
        f = like_forward(self.f_check, u, y)
        x = post_inverse(self.f_hat, u, f)
        return x, f

    def apply_r(self, x, f):
        """Reverse (inference) mode: returns ``(u, y')``."""
        x, f = _split_args(x, f, self.n, self.m)
        u = post_forward(self.f_hat, x, f)
        y = like_inverse(self.f_check, u, f)
        return u, y

    def forward(self, z):
        z = np.asarray(z, dtype=float)
        out = np.hstack(self.apply_s(np.atleast_2d(z)[:, : self.n], np.atleast_2d(z)[:, self.n :]))
        return out[0] if z.ndim == 1 else out

    def inverse(self, w):
        w = np.asarray(w, dtype=float)
        out = np.hstack(self.apply_r(np.atleast_2d(w)[:, : self.n], np.atleast_2d(w)[:, self.n :]))
        return out[0] if w.ndim == 1 else out

    def simulate(self, u, n_samples: int, seed=0) -> SampleBatch:
        """Draws from the likelihood at ``u``: ``S2(u, y)`` with ``y ~ N(0, I_m)``."""
        if n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        y = as_rng(seed, stream_id=0x53494D).normal((n_samples, self.m))
        _, f = self.apply_s(np.asarray(u, dtype=float).reshape(1, self.n), y)
        return SampleBatch(f)

    def infer(self, f, n_samples: int, seed=0) -> SampleBatch:
        """Draws from the posterior at ``f``: ``R1(x, f)`` with ``x ~ N(0, I_n)``."""
        if n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        x = as_rng(seed, stream_id=0x494E46).normal((n_samples, self.n))
        u, _ = self.apply_r(x, np.asarray(f, dtype=float).reshape(1, self.m))
        return SampleBatch(u)

    def s_condition_number(self, point) -> float:
        """2-norm condition number of the central-difference Jacobian of ``S`` at ``point``."""
        return linalg.condition_number_2(jacobian_fd(self.forward, np.asarray(point, dtype=float)))

    def latent_marginal_check(self, data, n_latent: int, seed=0, permutations=DEFAULT_PERMUTATIONS):
        """MMD tests of ``R2(x, f)`` against N(0, I_m) and ``S1(u, y)`` against N(0, I_n).

        ``u`` and ``f`` come from the first ``n_latent`` rows of the joint data;
        ``x`` and ``y`` are fresh reference draws.
        """
        data = np.asarray(data, dtype=float)
        if n_latent < 2 or data.shape[0] < n_latent:
            raise InsufficientSamples("latent marginal check needs at least two joint samples")
        rng = as_rng(seed, stream_id=0x4C4D)
        u, f = data[:n_latent, : self.n], data[:n_latent, self.n :]
        x = rng.normal((n_latent, self.n))
        y = rng.normal((n_latent, self.m))
        _, y_pushed = self.apply_r(x, f)
        x_pushed, _ = self.apply_s(u, y)
        ref_y = rng.normal((n_latent, self.m))
        ref_x = rng.normal((n_latent, self.n))
        return (
            mmd(y_pushed, ref_y, "auto", permutations, seed),
            mmd(x_pushed, ref_x, "auto", permutations, seed),
        )

    def to_dict(self) -> dict:
        return {
            "kind": "bidirectional",
            "n": self.n,
            "m": self.m,
            "f_check": self.f_check.to_dict(),
            "f_hat": self.f_hat.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["n"], d["m"], map_from_dict(d["f_check"]), map_from_dict(d["f_hat"]))


class DecoupledMap:
    """``S(u, y) = (F_check_1^{-1}(u), F_hat_2(y))``.

    Pushes the joint ``(u, y)`` law to ``(x, f)`` and back correctly while
    ignoring every coupling between ``u`` and ``f``; used to show that the
    joint pushforward checks alone do not pin down the conditionals.
    """

    def __init__(self, n, m, f_check, f_hat):
        self.n, self.m = int(n), int(m)
        self.f_check = f_check
        self.f_hat = f_hat

    def apply_s(self, u, y):
        u, y = _split_args(u, y, self.n, self.m)
        x = self.f_check.inverse(np.hstack([u, np.zeros_like(y)]))[:, : self.n]
        f = self.f_hat.forward(np.hstack([np.zeros_like(u), y]))[:, self.n :]
        return x, f

    def apply_r(self, x, f):
        x, f = _split_args(x, f, self.n, self.m)
        u = self.f_check.forward(np.hstack([x, np.zeros_like(f)]))[:, : self.n]
        y = self.f_hat.inverse(np.hstack([np.zeros_like(x), f]))[:, self.n :]
        return u, y
