"""Fitting monotone triangular maps to samples by maximum likelihood.

The objective for a generative map ``T`` on data ``w`` is the mean of
``0.5 * |T^{-1}(w)|^2 - log |det grad T^{-1}(w)|``: the KL divergence from the
data law to ``T`` pushing a standard normal, up to a constant.

Fitting works on the data-to-reference map ``M = T^{-1}`` directly, so the
loop never needs a root find. The fitted generative map is ``InverseMap(M)``.
Because ``M`` is triangular, the objective is a sum of per-component terms
and each component is optimised on its own.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .exceptions import DivergedLoss
from .maps import InverseMap, MonotoneTriangularMap
from .sampling import as_rng

GRAD_MODES = ("analytic", "finite_difference")
CONVERGENCE_WINDOW = 10
CONVERGENCE_RTOL = 1e-5


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 256
    epochs: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_mode: str = "analytic"
    standardize: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")


@dataclass
class TrainReport:
    loss_trace: List[float] = field(default_factory=list)
    final_loss: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "loss_trace": list(self.loss_trace),
            "final_loss": self.final_loss,
            "converged": self.converged,
            "wall_time_s": self.wall_time,
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def save_loss_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,loss\n")
            for epoch, loss in enumerate(self.loss_trace):
                fh.write(f"{epoch},{format(loss, '.17g')}\n")


class Adam:
    def __init__(self, size, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def kl_objective(T, batch) -> float:
    """Mean of ``0.5 |T^{-1}(w)|^2 - log|det grad T^{-1}(w)|`` over the batch."""
    w = np.atleast_2d(np.asarray(batch, dtype=float))
    if w.shape[1] != T.dimension:
        raise ValueError("batch dimension does not match the map")
    z = T.inverse(w)
    log_det = T.log_det_jacobian(w, direction="inverse")
    return float(np.mean(0.5 * np.sum(z * z, axis=1) - log_det))


def pullback_objective(M: MonotoneTriangularMap, batch) -> float:
    """``kl_objective`` of the generative map ``InverseMap(M)``, without root finds."""
    return kl_objective(InverseMap(M), batch)


def _component_inputs(M, batch):
    w = np.atleast_2d(np.asarray(batch, dtype=float))
    return M._to_internal(w)


def _fd_component_gradient(comp, z, rel_step=1e-5):
    c0 = comp.get_coeffs()
    grad = np.empty_like(c0)
    try:
        for i in range(c0.size):
            h = rel_step * (1.0 + abs(c0[i]))
            cp = c0.copy()
            cp[i] += h
            comp.set_coeffs(cp)
            up, _ = comp.objective_and_gradient(z)
            cp[i] -= 2 * h
            comp.set_coeffs(cp)
            down, _ = comp.objective_and_gradient(z)
            grad[i] = (up - down) / (2 * h)
    finally:
        comp.set_coeffs(c0)
    return grad


def gradient(M: MonotoneTriangularMap, batch, grad_mode: str = "analytic") -> np.ndarray:
    """Gradient of ``pullback_objective(M, batch)`` with respect to ``M.get_coeffs()``."""
    s = _component_inputs(M, batch)
    parts = []
    for k, comp in enumerate(M.components):
        zk = s[:, : k + 1]
        if grad_mode == "analytic":
            parts.append(comp.objective_and_gradient(zk)[1])
        elif grad_mode == "finite_difference":
            parts.append(_fd_component_gradient(comp, zk))
        else:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
    return np.concatenate(parts)


def standardize_map(M: MonotoneTriangularMap, data) -> None:
    data = np.asarray(data, dtype=float)
    M.shift = data.mean(axis=0)
    scale = data.std(axis=0)
    M.scale = np.where(scale > 0, scale, 1.0)


def _converged(trace) -> bool:
    if len(trace) <= CONVERGENCE_WINDOW:
        return False
    old, new = trace[-CONVERGENCE_WINDOW - 1], trace[-1]
    return abs(old - new) <= CONVERGENCE_RTOL * max(abs(new), 1e-12)


def fit_map(M: MonotoneTriangularMap, data, cfg: TrainConfig | None = None) -> TrainReport:
    """Train the data-to-reference map ``M`` in place with Adam.

    ``M`` may be lower or upper; its orientation decides which conditional
    the fitted transport exposes. Components are trained independently,
    each from its own random stream, so a component's result does not depend
    on the others.
    """
    cfg = cfg or TrainConfig()
    start = time.perf_counter()
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != M.dimension:
        raise ValueError("data dimension does not match the map")
    if not np.all(np.isfinite(data)):
        raise ValueError("training data must be finite")
    report = TrainReport()
    if cfg.epochs == 0:
        report.wall_time = time.perf_counter() - start
        return report
    if cfg.standardize:
        standardize_map(M, data)
    s = _component_inputs(M, data)
    n = s.shape[0]
    batch = min(cfg.batch_size, n)
    traces = np.zeros((len(M.components), cfg.epochs))

    for k, comp in enumerate(M.components):
        zk = s[:, : k + 1]
        rng = as_rng(cfg.seed, stream_id=1000 + k)
        opt = Adam(comp.n_coeffs, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        coeffs = comp.get_coeffs()
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            total = 0.0
            steps = 0
            for lo in range(0, n, batch):
                rows = zk[order[lo : lo + batch]]
                loss, grad = comp.objective_and_gradient(rows)
                if cfg.grad_mode == "finite_difference":
                    grad = _fd_component_gradient(comp, rows)
                if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                    raise DivergedLoss(
                        f"non-finite objective in component {k} at epoch {epoch}; "
                        "lower the learning rate"
                    )
                coeffs = opt.step(coeffs, grad)
                comp.set_coeffs(coeffs)
                total += loss
                steps += 1
            traces[k, epoch] = total / steps

    constant = float(np.sum(np.log(M.scale)))
    report.loss_trace = (traces.sum(axis=0) + constant).tolist()
    report.final_loss = report.loss_trace[-1]
    report.converged = _converged(report.loss_trace)
    report.wall_time = time.perf_counter() - start
    return report


def train_report_from_dict(d: dict) -> TrainReport:
    return TrainReport(d["loss_trace"], d["final_loss"], d["converged"], d.get("wall_time_s", 0.0))


__all__ = [
    "Adam",
    "TrainConfig",
    "TrainReport",
    "fit_map",
    "gradient",
    "kl_objective",
    "pullback_objective",
]
