"""Invariant checks run by ``biflow selftest`` at reduced sample counts."""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import datasets, gaussian, linalg, nonlinear
from .bidirectional import BidirectionalMap
from .diagnostics import mmd
from .exceptions import DataError
from .maps import MonotoneTriangularMap, jacobian_fd, load_map, save_map
from .sampling import Rng, empirical_moments
from .training import gradient


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_map(rng, dim, order, orientation):
    M = MonotoneTriangularMap.identity(dim, order, orientation)
    c = M.get_coeffs()
    M.set_coeffs(c + 0.1 * rng.normal(c.size))
    return M


def check_cholesky(rng, fast):
    a = rng.normal((6, 6))
    spd = a @ a.T + 6 * np.eye(6)
    low = linalg.cholesky_lower(spd)
    err = np.max(np.abs(low @ low.T - spd)) / np.max(np.abs(spd))
    return err < 1e-13, f"relative reconstruction error {err:.1e}"


def check_gaussian_inverse_pair(rng, fast):
    maps = gaussian.build_maps(gaussian.benchmark_problem(0.1))
    err = np.max(np.abs(maps.s @ maps.r - np.eye(4)))
    k_low, k_up = linalg.condition_number_2(maps.f_check), linalg.condition_number_2(maps.f_hat)
    rel = abs(k_low - k_up) / k_low
    return err < 1e-10 and rel < 1e-8, f"|SR - I| {err:.1e}, kappa gap {rel:.1e}"


def check_gaussian_small_noise(rng, fast):
    table = gaussian.condition_sweep(gaussian.benchmark_problem(), [1e-6, 1e-4, 1e-2])
    dev = np.max(np.abs(table[:, 3] - 3.0) / table[:, 0])
    return dev <= 10.0, f"max |kappa(S) - 3| / sigma = {dev:.2e}"


def check_posterior_moments(rng, fast):
    p = gaussian.benchmark_problem(0.5)
    bimap = gaussian.build_maps(p).bidirectional()
    n = 5000 if fast else 50000
    batch = bimap.infer([1.0, 1.0], n, seed=rng)
    mean, cov = empirical_moments(batch)
    m_ref, c_ref = gaussian.posterior_moments(p, np.array([1.0, 1.0]))
    se = np.sqrt(np.diag(c_ref) / n)
    z = np.max(np.abs(mean - m_ref) / se)
    return z < 4.0, f"max mean z-score {z:.2f}"


def check_monotone_round_trip(rng, fast):
    worst = 0.0
    for orientation in ("lower", "upper"):
        M = _random_map(rng, 3, 3, orientation)
        z = rng.normal((200, 3))
        worst = max(worst, float(np.max(np.abs(M.inverse(M.forward(z)) - z))))
    return worst < 1e-9, f"round-trip error {worst:.1e}"


def check_log_det(rng, fast):
    M = _random_map(rng, 2, 3, "lower")
    z = rng.normal(2)
    fd = np.log(abs(np.linalg.det(jacobian_fd(M.forward, z))))
    err = abs(fd - float(M.log_det_jacobian(z)))
    return err < 1e-6, f"log-det error vs finite differences {err:.1e}"


def check_gradient(rng, fast):
    M = _random_map(rng, 2, 2, "lower")
    batch = rng.normal((64, 2))
    ga = gradient(M, batch)
    gf = gradient(M, batch, "finite_difference")
    err = float(np.max(np.abs(ga - gf) / np.maximum(np.abs(gf), 1e-6)))
    return err < 1e-4, f"gradient relative error {err:.1e}"


def check_mmd_null(rng, fast):
    n = 200 if fast else 500
    est = mmd(rng.normal((n, 2)), rng.normal((n, 2)), permutations=100, seed=rng)
    return est.permutation_p > 0.01, f"p = {est.permutation_p:.3f}"


def check_exact_sign_posterior(rng, fast):
    a, b = 1.0, 0.5
    bimap = BidirectionalMap(1, 1, nonlinear.SignTargetMap(a, b), nonlinear.ExactUpperMap(a, b))
    n = 5000 if fast else 20000
    tv = nonlinear.posterior_tv(bimap.infer([1.0], n, seed=rng).values, 1.0, a, b)
    return tv < 0.05, f"TV vs grid oracle {tv:.3f}"


def check_idx_round_trip(rng, fast):
    images = datasets.ImageBatch(np.round(rng.uniform((3, 4, 4)) * 255) / 255)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "img.idx.gz"
        datasets.save_idx(path, images)
        back = datasets.load_idx(path)
    same = np.array_equal(back.pixels, images.pixels)
    return same, "bit-identical" if same else "pixels differ after round trip"


def check_mask_projection(rng, fast):
    op = datasets.MaskOperator.bottom_half(4, 4)
    u = rng.normal(16)
    once = datasets.apply_mask(op, u)
    again = datasets.apply_mask(op, datasets.embed(op, once))
    ok = np.array_equal(once, again) and np.array_equal(once, u[:8])
    return ok, "mask o embed o mask = mask"


def check_map_persistence(rng, fast):
    M = _random_map(rng, 2, 3, "upper")
    z = rng.normal((20, 2))
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "map.json"
        save_map(M, path)
        same = np.array_equal(load_map(path).forward(z), M.forward(z))
        path.write_text(json.dumps({"kind": "monotone", "components": "garbage"}))
        try:
            load_map(path)
            surfaced = False
        except DataError:
            surfaced = True
    return same and surfaced, f"bit-identical reload: {same}; corrupted file rejected: {surfaced}"


CHECKS = [
    check_cholesky,
    check_gaussian_inverse_pair,
    check_gaussian_small_noise,
    check_posterior_moments,
    check_monotone_round_trip,
    check_log_det,
    check_gradient,
    check_mmd_null,
    check_exact_sign_posterior,
    check_idx_round_trip,
    check_mask_projection,
    check_map_persistence,
]


def run_selftest(fast: bool = False, seed: int = 0):
    results = []
    for i, check in enumerate(CHECKS):
        name = check.__name__.removeprefix("check_")
        try:
            passed, detail = check(Rng(seed, 0x5E1F + i), fast)
        except Exception as exc:  # a crash is a failed check, reported with its cause
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(passed), detail))
    return results
