"""MNIST ingestion and the inpainting problem built on it.

IDX files are big-endian: a 4-byte magic (two zero bytes, a type code, the
number of dimensions), one 4-byte size per dimension, then the raw data.
Only unsigned-byte payloads are supported, as in the MNIST distribution.
"""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import linalg
from .bidirectional import BidirectionalMap
from .exceptions import BadMagic, DimensionMismatch, InsufficientSamples, TruncatedFile
from .maps import AffineTriangularMap
from .sampling import SampleBatch, as_rng, write_matrix_csv

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True)
class ImageBatch:
    """``count`` greyscale images of ``height x width`` pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3:
            raise DimensionMismatch(f"images must be a 3-D array, got shape {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def __len__(self):
        return self.count

    def __getitem__(self, idx) -> "ImageBatch":
        return ImageBatch(self.pixels[idx] if not isinstance(idx, int) else self.pixels[idx : idx + 1])

    def flatten(self) -> np.ndarray:
        """Row-major pixel vectors, one row per image."""
        return self.pixels.reshape(self.count, -1)


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedFile(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def load_idx(path):
    """Decode an IDX file: images as an ``ImageBatch``, labels as an int array."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise TruncatedFile(f"{path}: file shorter than the IDX magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise BadMagic(f"{path}: magic 0x{magic:08x} is neither 0x00000803 nor 0x00000801")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFile(f"{path}: header declares {ndim} dimensions but is cut short")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(shape))
    payload = len(raw) - header
    if payload < expected:
        raise TruncatedFile(f"{path}: expected {expected} data bytes, found {payload}")
    if payload > expected:
        raise DimensionMismatch(f"{path}: {payload - expected} bytes beyond the declared shape {shape}")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(shape)
    if magic == LABEL_MAGIC:
        return data.astype(np.int64)
    return ImageBatch(data / 255.0)


def save_idx(path, data) -> None:
    """Write images (``ImageBatch`` or a [0, 1] array) or integer labels as IDX.

    Paths ending in ``.gz`` are gzip-compressed with a zero timestamp so the
    output is reproducible.
    """
    if isinstance(data, ImageBatch):
        payload = np.rint(data.pixels * 255.0).astype(np.uint8)
        magic = IMAGE_MAGIC
    else:
        arr = np.asarray(data)
        if arr.ndim == 1:
            if np.any(arr < 0) or np.any(arr > 255):
                raise ValueError("labels must fit in an unsigned byte")
            payload = arr.astype(np.uint8)
            magic = LABEL_MAGIC
        elif arr.ndim == 3:
            payload = np.rint(ImageBatch(arr).pixels * 255.0).astype(np.uint8)
            magic = IMAGE_MAGIC
        else:
            raise DimensionMismatch("IDX data must be 1-D labels or 3-D images")
    blob = struct.pack(">I", magic) + struct.pack(f">{payload.ndim}I", *payload.shape) + payload.tobytes()
    if str(path).endswith(".gz"):
        blob = gzip.compress(blob, mtime=0)
    Path(path).write_bytes(blob)


def downscale(batch: ImageBatch, factor: int = 2) -> ImageBatch:
    """Average non-overlapping ``factor x factor`` blocks."""
    if factor < 1:
        raise ValueError("factor must be positive")
    n, h, w = batch.pixels.shape
    if h % factor or w % factor:
        raise DimensionMismatch(f"{h}x{w} images are not divisible by {factor}")
    blocks = batch.pixels.reshape(n, h // factor, factor, w // factor, factor)
    return ImageBatch(np.clip(blocks.mean(axis=(2, 4)), 0.0, 1.0))


@dataclass(frozen=True)
class MaskOperator:
    """Pixel selection ``f_j = u[keep_indices[j]]``."""

    keep_indices: np.ndarray
    total_pixels: int

    def __post_init__(self):
        keep = np.asarray(self.keep_indices, dtype=np.int64).ravel()
        if keep.size and (keep[0] < 0 or keep[-1] >= self.total_pixels):
            raise ValueError("keep indices out of range")
        if np.any(np.diff(keep) <= 0):
            raise ValueError("keep indices must be strictly increasing")
        keep.setflags(write=False)
        object.__setattr__(self, "keep_indices", keep)
        object.__setattr__(self, "total_pixels", int(self.total_pixels))

    @classmethod
    def bottom_half(cls, height: int, width: int) -> "MaskOperator":
        """Keep the top ``height // 2`` rows; the rest is hidden from the measurement."""
        return cls(np.arange((height // 2) * width), height * width)

    @classmethod
    def from_name(cls, name: str, height: int, width: int) -> "MaskOperator":
        if name == "bottom-half":
            return cls.bottom_half(height, width)
        raise ValueError(f"unknown mask {name!r}")

    @property
    def n_observed(self) -> int:
        return self.keep_indices.size

    @property
    def hidden_indices(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.total_pixels), self.keep_indices)

    def matrix(self) -> np.ndarray:
        k = np.zeros((self.n_observed, self.total_pixels))
        k[np.arange(self.n_observed), self.keep_indices] = 1.0
        return k

    def to_dict(self) -> dict:
        return {"keep_indices": self.keep_indices.tolist(), "total_pixels": self.total_pixels}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["keep_indices"], dtype=np.int64), d["total_pixels"])


def apply_mask(op: MaskOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != op.total_pixels:
        raise DimensionMismatch(f"image has {u.shape[-1]} pixels, mask expects {op.total_pixels}")
    return u[..., op.keep_indices]


def embed(op: MaskOperator, f, fill: float = 0.0) -> np.ndarray:
    """Place measurements back on the pixel grid, ``fill`` elsewhere."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != op.n_observed:
        raise DimensionMismatch(f"measurement has {f.shape[-1]} entries, mask keeps {op.n_observed}")
    out = np.full(f.shape[:-1] + (op.total_pixels,), fill, dtype=float)
    out[..., op.keep_indices] = f
    return out


def build_pairs(images, op: MaskOperator, noise_sigma: float, rng=0) -> SampleBatch:
    """Stacked ``(u, f)`` rows with ``f = mask(u) + noise_sigma * N(0, I)``."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    u = images.flatten() if isinstance(images, ImageBatch) else np.asarray(images, dtype=float)
    u = u.reshape(len(u), -1) if len(u) else np.zeros((0, op.total_pixels))
    f = apply_mask(op, u)
    if noise_sigma > 0 and len(u):
        f = f + noise_sigma * as_rng(rng, stream_id=0x504149).normal(f.shape)
    return SampleBatch(np.hstack([u, f]), (op.total_pixels, op.n_observed))


@dataclass(frozen=True)
class EmpiricalGaussian:
    """Mean and ridge-regularised covariance of stacked ``(u, f)`` samples.

    ``scale`` is the mean sample variance; the ridge is added on the
    correlation scale, ``covariance = Cov + ridge * scale * I``.
    """

    mean: np.ndarray
    covariance: np.ndarray
    n: int
    m: int
    ridge: float = 0.0
    scale: float = 1.0

    def blocks(self):
        """``(Cov(u), Cov(u, f), Cov(f))``."""
        c, n = self.covariance, self.n
        return c[:n, :n], c[:n, n:], c[n:, n:]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "ridge": self.ridge,
            "scale": self.scale,
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["covariance"]), d["n"], d["m"], d["ridge"], d["scale"])


def fit_empirical_gaussian(pairs: SampleBatch, ridge: float = 1e-3) -> EmpiricalGaussian:
    """Sample mean and ``Cov + ridge * scale * I`` of the stacked pairs.

    ``scale`` is the mean variance, so ``covariance / scale`` has unit average
    variance and smallest eigenvalue at least ``ridge``. With ``ridge=0`` the
    constant border pixels of MNIST leave the covariance singular and the
    Cholesky factorisation downstream fails.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    if pairs.block_split is None:
        raise ValueError("pairs need an (n, m) block split")
    values = pairs.values
    if values.shape[0] < 2:
        raise InsufficientSamples("an empirical covariance needs at least two pairs")
    mean = values.mean(axis=0)
    centred = values - mean
    cov = centred.T @ centred / (values.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    scale = float(np.mean(np.diag(cov)))
    if not scale > 0:
        scale = 1.0
    cov = cov + ridge * scale * np.eye(cov.shape[0])
    n, m = pairs.block_split
    return EmpiricalGaussian(mean, cov, n, m, float(ridge), scale)


def affine_bidirectional(model: EmpiricalGaussian) -> BidirectionalMap:
    """Affine ``S`` from lower and upper Cholesky factors of the fitted joint covariance."""
    low = linalg.cholesky_lower(model.covariance)
    up = linalg.cholesky_upper(model.covariance)
    return BidirectionalMap(
        model.n,
        model.m,
        AffineTriangularMap(low, model.mean, orientation="lower"),
        AffineTriangularMap(up, model.mean, orientation="upper"),
    )


def write_pgm(path, image, height=None, width=None) -> None:
    """Binary greyscale PGM (P5, maxval 255); values are clipped to [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim == 1:
        if height is None or width is None:
            raise ValueError("flat images need height and width")
        img = img.reshape(height, width)
    if img.ndim != 2:
        raise DimensionMismatch("PGM output takes a single 2-D image")
    data = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    match = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if match is None:
        raise BadMagic(f"{path}: not a binary PGM")
    width, height, maxval = (int(g) for g in match.groups())
    data = np.frombuffer(raw, dtype=np.uint8, offset=match.end())
    if data.size < width * height:
        raise TruncatedFile(f"{path}: pixel data cut short")
    return data[: width * height].reshape(height, width) / float(maxval)


def write_images_csv(path, images) -> None:
    """One flattened image per row, columns ``pixel_0..pixel_{d-1}``."""
    rows = np.atleast_2d(np.asarray(images, dtype=float))
    write_matrix_csv(path, rows, [f"pixel_{i}" for i in range(rows.shape[1])])
