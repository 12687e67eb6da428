"""Non-learned reconstructions and the pre-trained-registration ablation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import mri
from .losses import RegLossConfig
from .models import RegNetParams, init_reg
from .mri import MeasurementModel, MeasurementPair
from .optim import AdamState

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = (0.003, 0.006, 0.01, 0.02, 0.04, 0.08)


@dataclass
class TVConfig:
    tau: float = 0.02
    step: float = 1.0
    iterations: int = 200
    inner_iterations: int = 30
    tolerance: float = 1e-6
    tau_grid: tuple = DEFAULT_TAU_GRID

    def validate(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if self.iterations < 1 or self.inner_iterations < 1:
            raise ValueError("iteration counts must be >= 1")
        if not 0 < self.step <= 1.0:
            raise ValueError(f"step must be in (0, 1] for a unit-norm operator, got {self.step}")


def zero_filled(y: np.ndarray, model: MeasurementModel) -> np.ndarray:
    """The pseudoinverse (adjoint) image."""
    return mri.zero_fill(model, y)


# total variation ------------------------------------------------------------

def _grad(x):
    gy = np.zeros_like(x)
    gx = np.zeros_like(x)
    gy[:-1] = x[1:] - x[:-1]
    gx[:, :-1] = x[:, 1:] - x[:, :-1]
    return gy, gx


def _grad_adj(py, px):
    """Transpose of the forward-difference operator."""
    out = np.zeros_like(py)
    out[:-1] -= py[:-1]
    out[1:] += py[:-1]
    out[:, :-1] -= px[:, :-1]
    out[:, 1:] += px[:, :-1]
    return out


def tv_norm(x) -> float:
    gy, gx = _grad(x)
    return float(np.abs(gy).sum() + np.abs(gx).sum())


def _project(p):
    mag = np.abs(p)
    return p / np.maximum(mag, 1.0)


def tv_prox(z, lam: float, iterations: int, dual=None):
    """argmin_x 1/2 ||x - z||^2 + lam ||Dx||_1 by accelerated dual projection.

    Returns the primal solution and the dual pair for warm starts.
    """
    if dual is None:
        py, px = np.zeros_like(z), np.zeros_like(z)
    else:
        py, px = dual
    ry, rx = py, px
    t = 1.0
    for _ in range(iterations):
        gy, gx = _grad(z - lam * _grad_adj(ry, rx))
        ny = _project(ry + gy / (8.0 * lam))
        nx = _project(rx + gx / (8.0 * lam))
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        ry = ny + (t - 1.0) / t_next * (ny - py)
        rx = nx + (t - 1.0) / t_next * (nx - px)
        py, px, t = ny, nx, t_next
    return z - lam * _grad_adj(py, px), (py, px)


def tv_objective(x, y, model: MeasurementModel, tau: float) -> float:
    r = mri.measure(model, x) - y
    return float(0.5 * np.sum(np.abs(r) ** 2) + tau * tv_norm(x))


def tv_reconstruct(y: np.ndarray, model: MeasurementModel, cfg: TVConfig | None = None,
                   x0: np.ndarray | None = None, return_trace: bool = False):
    """Proximal gradient on 1/2 ||Hx - y||^2 + tau ||Dx||_1 (complex-modulus TV).

    Stops when the relative objective change drops below ``cfg.tolerance`` or
    after ``cfg.iterations`` outer steps.  Each accepted step must not
    increase the objective; an increase first triggers a more accurate prox
    solve and, if it persists, ends the iteration at the previous iterate.
    """
    cfg = cfg or TVConfig()
    cfg.validate()
    y = np.asarray(y, dtype=np.complex128)
    x = zero_filled(y, model) if x0 is None else np.asarray(x0, dtype=np.complex128)
    obj = tv_objective(x, y, model, cfg.tau)
    if not np.isfinite(obj):
        raise FloatingPointError("TV objective is not finite at the starting point")
    trace = [obj]
    dual = None
    lam = cfg.step * cfg.tau
    for _ in range(cfg.iterations):
        z = x - cfg.step * zero_filled(mri.measure(model, x) - y, model)
        inner = cfg.inner_iterations
        while True:
            x_new, dual_new = tv_prox(z, lam, inner, dual)
            obj_new = tv_objective(x_new, y, model, cfg.tau)
            if not np.isfinite(obj_new):
                raise FloatingPointError("TV objective became non-finite")
            if obj_new <= obj or inner >= 16 * cfg.inner_iterations:
                break
            inner *= 2
        if obj_new > obj:
            log.debug("TV: prox accuracy limit reached at objective %.6g", obj)
            break
        rel = (obj - obj_new) / max(abs(obj), 1e-300)
        x, dual, obj = x_new, dual_new, obj_new
        trace.append(obj)
        if rel < cfg.tolerance:
            break
    assert all(b <= a for a, b in zip(trace, trace[1:])), "TV objective increased"
    return (x, trace) if return_trace else x


def select_tau(pairs: list[MeasurementPair], cfg: TVConfig, grid=None) -> tuple[float, dict]:
    """Pick tau by mean PSNR on pairs with oracle images (the validation split)."""
    from .metrics import psnr
    grid = tuple(grid or cfg.tau_grid)
    pairs = [p for p in pairs if p.has_oracle]
    if not pairs:
        raise ValueError("tau selection needs pairs with oracle images")
    scores = {}
    for tau in grid:
        c = TVConfig(tau=tau, step=cfg.step, iterations=cfg.iterations,
                     inner_iterations=cfg.inner_iterations, tolerance=cfg.tolerance)
        scores[tau] = float(np.mean([psnr(tv_reconstruct(p.y_r, p.model_r, c), p.oracle_x_r) for p in pairs]))
    best = max(scores, key=scores.get)
    return best, scores


# registration pre-training ------------------------------------------------------

def pretrain_registration(pairs: list[MeasurementPair], reg_cfg: RegLossConfig | None = None,
                          levels: int = 3, width: int = 16, iterations: int = 300,
                          batch_size: int = 4, lr: float = 5e-4, seed: int = 0,
                          init_seed: int = 1, log_fn=None) -> RegNetParams:
    """Train the registration network alone on zero-filled (artifact-corrupted) pairs."""
    from .trainer import ModelState, make_batch, next_indices, reg_step
    if not pairs:
        raise ValueError("pre-training dataset is empty")
    reg_cfg = reg_cfg or RegLossConfig()
    reg_cfg.validate()
    reg = init_reg(levels, width, seed=init_seed)
    adam = AdamState(lr=lr)
    cursor = ModelState(None, reg, None, adam, rng_state=np.random.default_rng(seed).bit_generator.state)
    for k in range(iterations):
        idx = next_indices(cursor, len(pairs), batch_size)
        loss = reg_step(make_batch([pairs[i] for i in idx]), reg, adam, reg_cfg)
        if log_fn is not None:
            log_fn({"step": k + 1, "l_reg": loss})
    return reg
