"""Triangular transport maps and the conditional maps extracted from them.

Every map here works on batches: ``forward`` and ``inverse`` take an array of
shape ``(N, d)`` (or a single ``d``-vector) and return the same shape.
A lower map's ``k``-th output depends on inputs ``1..k``; an upper map's on
inputs ``k..d``. Upper monotone maps are stored as lower maps acting on
reversed coordinates.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import linalg
from .exceptions import BracketNotFound, DataError, DimensionMismatch
from .polynomial import MonotoneComponent

BRACKET_LIMIT = 1e8
BISECTION_STEPS = 80
NEWTON_STEPS = 5
ROOT_TOL = 1e-12
CHUNK_ROWS = 4096

ORIENTATIONS = ("lower", "upper")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BIFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _batched(fn, z):
    """Apply ``fn`` to fixed-size row chunks, optionally on a thread pool.

    Chunk boundaries do not depend on the thread count, so results are
    bit-identical for any ``BIFLOW_THREADS``.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.shape[0] <= CHUNK_ROWS:
        out = fn(z2)
    else:
        chunks = [z2[i : i + CHUNK_ROWS] for i in range(0, z2.shape[0], CHUNK_ROWS)]
        workers = min(_threads(), len(chunks))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(fn, chunks))
        else:
            parts = [fn(c) for c in chunks]
        out = np.concatenate(parts, axis=0)
    return out[0] if single else out


def _check_dim(z, d):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != d:
        raise DimensionMismatch(f"expected trailing dimension {d}, got {z.shape[-1]}")
    return z


class MonotoneTriangularMap:
    """Knothe-Rosenblatt map built from integrated-rectifier components.

    Inputs are standardised with ``(z - shift) / scale`` before the
    components are applied; the components output reference coordinates.
    """

    kind = "monotone"

    def __init__(self, components, orientation="lower", shift=None, scale=None):
        if orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        self.components = list(components)
        self.orientation = orientation
        d = len(self.components)
        for k, comp in enumerate(self.components):
            if comp.input_dim != k + 1:
                raise ValueError(f"component {k} must take {k + 1} inputs, takes {comp.input_dim}")
        self.shift = np.zeros(d) if shift is None else np.array(shift, dtype=float)
        self.scale = np.ones(d) if scale is None else np.array(scale, dtype=float)
        if self.shift.shape != (d,) or self.scale.shape != (d,) or np.any(self.scale <= 0):
            raise ValueError("shift/scale must be length-d with positive scale")

    @classmethod
    def identity(cls, dimension, order=1, orientation="lower", quadrature_nodes=32):
        comps = [MonotoneComponent.identity(k + 1, order, quadrature_nodes) for k in range(dimension)]
        return cls(comps, orientation)

    @property
    def dimension(self) -> int:
        return len(self.components)

    # internal coordinates: standardised, and reversed for upper maps
    def _to_internal(self, z):
        s = (z - self.shift) / self.scale
        return s[:, ::-1] if self.orientation == "upper" else s

    def _from_internal(self, s):
        s = s[:, ::-1] if self.orientation == "upper" else s
        return s * self.scale + self.shift

    def _flip(self, w):
        return w[:, ::-1] if self.orientation == "upper" else w

    def _forward(self, z):
        s = self._to_internal(z)
        out = np.empty_like(s)
        for k, comp in enumerate(self.components):
            out[:, k] = comp.evaluate(s[:, : k + 1])
        return self._flip(out)

    def forward(self, z):
        z = _check_dim(z, self.dimension)
        return _batched(self._forward, z)

    def _inverse(self, w):
        target = self._flip(w)
        s = np.empty_like(target)
        for k, comp in enumerate(self.components):
            s[:, k] = invert_component(comp, s[:, :k], target[:, k])
        return self._from_internal(s)

    def inverse(self, w):
        w = _check_dim(w, self.dimension)
        return _batched(self._inverse, w)

    def diagonal_jacobian(self, z):
        """Diagonal partials ``d output_k / d z_k`` in the original coordinate order."""
        z = np.atleast_2d(_check_dim(z, self.dimension))
        s = self._to_internal(z)
        diag = np.column_stack(
            [comp.diagonal_derivative(s[:, : k + 1]) for k, comp in enumerate(self.components)]
        )
        return self._flip(diag) / self.scale

    def _log_det_forward(self, z):
        s = self._to_internal(z)
        total = np.zeros(s.shape[0])
        for k, comp in enumerate(self.components):
            total += comp.log_diagonal_derivative(s[:, : k + 1])
        return total - np.sum(np.log(self.scale))

    def log_det_jacobian(self, z, direction="forward"):
        z = _check_dim(z, self.dimension)
        if direction == "forward":
            return _batched(self._log_det_forward, z)
        if direction == "inverse":
            return -_batched(self._log_det_forward, self.inverse(z))
        raise ValueError("direction must be 'forward' or 'inverse'")

    def n_coeffs(self) -> int:
        return sum(c.n_coeffs for c in self.components)

    def get_coeffs(self) -> np.ndarray:
        return np.concatenate([c.get_coeffs() for c in self.components])

    def set_coeffs(self, coeffs) -> None:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.size != self.n_coeffs():
            raise ValueError("coefficient vector has the wrong length")
        start = 0
        for c in self.components:
            c.set_coeffs(coeffs[start : start + c.n_coeffs])
            start += c.n_coeffs

    def copy(self) -> "MonotoneTriangularMap":
        return map_from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "orientation": self.orientation,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d):
        comps = [MonotoneComponent.from_dict(c) for c in d["components"]]
        if len(comps) != int(d["dimension"]):
            raise DataError("map JSON: component count does not match dimension")
        return cls(comps, d["orientation"], d.get("shift"), d.get("scale"))


def invert_component(comp: MonotoneComponent, s_prev, target):
    """Solve ``comp(s_prev, t) = target`` for ``t``, row by row.

    Bracket by doubling out from [-1, 1], bisect, then polish with Newton steps
    that are only accepted inside the bracket.
    """
    target = np.asarray(target, dtype=float)
    g_basis, h_prefix = comp.prefix(s_prev)

    def resid(t):
        return comp.evaluate_with_prefix(g_basis, h_prefix, t) - target

    n = target.shape[0]
    lo = -np.ones(n)
    hi = np.ones(n)
    r_lo = resid(lo)
    r_hi = resid(hi)
    while np.any(r_lo > 0):
        bad = r_lo > 0
        if np.any(np.abs(lo[bad]) >= BRACKET_LIMIT):
            raise BracketNotFound("root lies below -1e8; component is degenerate")
        hi = np.where(bad, lo, hi)
        r_hi = np.where(bad, r_lo, r_hi)
        lo = np.where(bad, 2.0 * lo, lo)
        r_lo = resid(lo)
    while np.any(r_hi < 0):
        bad = r_hi < 0
        if np.any(np.abs(hi[bad]) >= BRACKET_LIMIT):
            raise BracketNotFound("root lies above 1e8; component is degenerate")
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, 2.0 * hi, hi)
        r_hi = resid(hi)

    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        r_mid = resid(mid)
        right = r_mid > 0
        hi = np.where(right, mid, hi)
        lo = np.where(right, lo, mid)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * (1.0 + np.abs(mid))):
            break

    t = 0.5 * (lo + hi)
    for _ in range(NEWTON_STEPS):
        r = resid(t)
        if np.all(np.abs(r) <= ROOT_TOL):
            break
        slope = comp.diagonal_derivative(np.column_stack([s_prev, t]))
        step = t - r / slope
        inside = (step >= lo) & (step <= hi) & np.isfinite(step)
        t = np.where(inside, step, t)
    return t


class AffineTriangularMap:
    """``z -> A z + b`` with ``A`` triangular and a positive diagonal."""

    kind = "affine"

    def __init__(self, matrix, shift=None, orientation=None):
        a = np.array(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("affine map needs a square matrix")
        if orientation is None:
            orientation = "lower" if linalg.is_lower_triangular(a) else "upper"
        if orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        ok = linalg.is_lower_triangular(a) if orientation == "lower" else linalg.is_upper_triangular(a)
        if not ok:
            raise ValueError(f"matrix is not {orientation}-triangular")
        if np.any(np.diag(a) <= 0):
            raise ValueError("affine triangular map needs a positive diagonal")
        self.matrix = a
        self.shift = np.zeros(a.shape[0]) if shift is None else np.array(shift, dtype=float)
        self.orientation = orientation

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def forward(self, z):
        z = _check_dim(z, self.dimension)
        return z @ self.matrix.T + self.shift

    def inverse(self, w):
        w = _check_dim(w, self.dimension)
        rhs = np.atleast_2d(w - self.shift).T
        out = linalg.solve_triangular(self.matrix, rhs, side=self.orientation).T
        return out[0] if np.asarray(w).ndim == 1 else out

    def log_det_jacobian(self, z, direction="forward"):
        z = np.asarray(_check_dim(z, self.dimension))
        value = float(np.sum(np.log(np.diag(self.matrix))))
        if direction == "inverse":
            value = -value
        elif direction != "forward":
            raise ValueError("direction must be 'forward' or 'inverse'")
        return value if z.ndim == 1 else np.full(z.shape[0], value)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "orientation": self.orientation,
            "matrix": self.matrix.tolist(),
            "shift": self.shift.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["matrix"], dtype=float), np.array(d["shift"], dtype=float), d["orientation"])


class InverseMap:
    """View of ``base`` with forward and inverse swapped.

    Trained maps are parametrised in the data-to-reference direction; wrapping
    one in ``InverseMap`` gives the generative (reference-to-data) map.
    The inverse of a triangular map has the same orientation.
    """

    kind = "inverse"

    def __init__(self, base):
        self.base = base

    @property
    def dimension(self) -> int:
        return self.base.dimension

    @property
    def orientation(self) -> str:
        return self.base.orientation

    def forward(self, z):
        return self.base.inverse(z)

    def inverse(self, w):
        return self.base.forward(w)

    def log_det_jacobian(self, z, direction="forward"):
        flipped = {"forward": "inverse", "inverse": "forward"}[direction]
        return self.base.log_det_jacobian(z, flipped)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(map_from_dict(d["base"]))


class IdentityMap:
    kind = "identity"

    def __init__(self, dimension, orientation="lower"):
        self._dimension = int(dimension)
        self.orientation = orientation

    @property
    def dimension(self) -> int:
        return self._dimension

    def forward(self, z):
        return np.array(_check_dim(z, self.dimension), dtype=float)

    inverse = forward

    def log_det_jacobian(self, z, direction="forward"):
        z = np.asarray(z)
        return 0.0 if z.ndim == 1 else np.zeros(z.shape[0])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension, "orientation": self.orientation}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dimension"], d["orientation"])


MAP_KINDS = {
    cls.kind: cls for cls in (MonotoneTriangularMap, AffineTriangularMap, InverseMap, IdentityMap)
}


def register_map_kind(cls):
    MAP_KINDS[cls.kind] = cls
    return cls


def map_from_dict(d: dict):
    try:
        kind = d.get("kind", "monotone")
        return MAP_KINDS[kind].from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid map document: {exc!r}") from None


def save_map(tmap, path) -> None:
    Path(path).write_text(json.dumps(tmap.to_dict(), indent=1))


def load_map(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    return map_from_dict(doc)


def jacobian_fd(fn, z, rel_step=1e-6):
    """Central-difference Jacobian of ``fn`` at a single point ``z``."""
    z = np.asarray(z, dtype=float)
    d = z.size
    steps = rel_step * (1.0 + np.abs(z))
    pts = np.concatenate([z + np.diag(steps), z - np.diag(steps)])
    vals = np.asarray(fn(pts))
    return (vals[:d] - vals[d:]).T / (2.0 * steps)


# -- conditional maps ---------------------------------------------------------


def _pair(a, b):
    """Promote two blocks to 2-D and broadcast a single row against a batch."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    count = max(a.shape[0], b.shape[0])
    if a.shape[0] == 1:
        a = np.repeat(a, count, axis=0)
    if b.shape[0] == 1:
        b = np.repeat(b, count, axis=0)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch("conditioning and argument batches differ in length")
    return a, b


def like_forward(f_check, u, y):
    """``F_like(y; u) = F2(F1^{-1}(u), y)`` for a lower-triangular ``f_check``."""
    u, y = _pair(u, y)
    n = u.shape[1]
    x = f_check.inverse(np.hstack([u, np.zeros_like(y)]))[:, :n]
    return f_check.forward(np.hstack([x, y]))[:, n:]


def like_inverse(f_check, u, f):
    """``F_like^{-1}(f; u) = G2(u, f)``."""
    u, f = _pair(u, f)
    return f_check.inverse(np.hstack([u, f]))[:, u.shape[1] :]


def post_forward(f_hat, x, f):
    """``F_post(x; f) = F1(x, F2^{-1}(f))`` for an upper-triangular ``f_hat``."""
    x, f = _pair(x, f)
    n = x.shape[1]
    y = f_hat.inverse(np.hstack([np.zeros_like(x), f]))[:, n:]
    return f_hat.forward(np.hstack([x, y]))[:, :n]


def post_inverse(f_hat, u, f):
    """``F_post^{-1}(u; f) = G1(u, f)``."""
    u, f = _pair(u, f)
    return f_hat.inverse(np.hstack([u, f]))[:, : u.shape[1]]


class ConditionalMap:
    """One-argument map obtained by fixing the conditioning block."""

    def __init__(self, fwd, inv, condition):
        self._fwd = fwd
        self._inv = inv
        self.condition = np.asarray(condition, dtype=float)

    def forward(self, v):
        v = np.asarray(v, dtype=float)
        out = self._fwd(self.condition, v)
        return out[0] if v.ndim == 1 else out

    def inverse(self, w):
        w = np.asarray(w, dtype=float)
        out = self._inv(self.condition, w)
        return out[0] if w.ndim == 1 else out


def _require(tmap, orientation):
    if getattr(tmap, "orientation", None) != orientation:
        raise ValueError(f"expected a {orientation}-triangular map")


def conditional_like(f_check, u) -> ConditionalMap:
    """Map pushing the reference on ``y`` to the likelihood given ``u``."""
    _require(f_check, "lower")
    return ConditionalMap(
        lambda cond, y: like_forward(f_check, cond, y),
        lambda cond, f: like_inverse(f_check, cond, f),
        u,
    )


def conditional_post(f_hat, f) -> ConditionalMap:
    """Map pushing the reference on ``x`` to the posterior given ``f``."""
    _require(f_hat, "upper")
    return ConditionalMap(
        lambda cond, x: post_forward(f_hat, x, cond),
        lambda cond, u: post_inverse(f_hat, u, cond),
        f,
    )
