"""Training objectives.

Measurement-domain distances are averaged over *sampled* k-space entries
only (both real planes); everything off the mask is identically zero in
``y`` and would only dilute the loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mri
from . import tensor as T
from .tensor import Tensor

DISTANCES = ("l1", "l2", "huber")
LCC_EPS = 1e-5


@dataclass
class RecLossConfig:
    gamma: float = 1.0
    distance: str = "huber"
    huber_delta: float = 1.0

    def validate(self) -> None:
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.huber_delta <= 0:
            raise ValueError(f"huber_delta must be > 0, got {self.huber_delta}")


@dataclass
class RegLossConfig:
    lam: float = 0.1
    lcc_window: int = 9

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.lcc_window < 3 or self.lcc_window % 2 == 0:
            raise ValueError(f"lcc_window must be odd and >= 3, got {self.lcc_window}")


def _penalty(r: Tensor, kind: str, delta: float) -> Tensor:
    if kind == "l1":
        return T.abs_(r)
    if kind == "l2":
        return T.square(r)
    if kind == "huber":
        return T.huber(r, delta)
    raise ValueError(f"unknown distance {kind!r}")


def distance(a, b, kind: str = "l2", delta: float = 1.0) -> Tensor:
    """Mean-reduced l1 / squared-l2 / Huber distance over every stored real entry."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"distance: shapes {a.shape} and {b.shape} differ")
    return T.mean(_penalty(T.as_real(a) - T.as_real(b), kind, delta))


def masked_distance(pred: Tensor, y: Tensor, mask: np.ndarray, kind: str, delta: float = 1.0) -> Tensor:
    """Distance averaged over the sampled entries of ``mask`` (broadcast to ``pred``)."""
    if pred.shape != y.shape:
        raise ValueError(f"masked_distance: shapes {pred.shape} and {y.shape} differ")
    sampled = np.broadcast_to(np.asarray(mask) > 0.5, pred.shape)
    count = int(sampled.sum())
    if count == 0:
        raise ValueError("masked_distance: empty mask")
    resid = T.mul(T.as_real(pred) - T.as_real(y), sampled.astype(np.float64))
    return T.mul(T.sum_(_penalty(resid, kind, delta)), 1.0 / count)


def finite_diff(x: Tensor) -> Tensor:
    """Forward differences (d/dy, d/dx) stacked on a new axis -3; zero on the trailing edge."""
    x = T.as_tensor(x)
    if x.ndim < 2:
        raise ValueError(f"finite_diff needs at least 2 dims, got {x.shape}")
    lead = [(0, 0)] * (x.ndim - 2)
    dy = T.pad(x[..., 1:, :] - x[..., :-1, :], lead + [(0, 1), (0, 0)])
    dx = T.pad(x[..., :, 1:] - x[..., :, :-1], lead + [(0, 0), (0, 1)])
    shape = x.shape[:-2] + (1,) + x.shape[-2:]
    return T.concat([T.reshape(T.as_real(dy), shape), T.reshape(T.as_real(dx), shape)], axis=-3)


def _to_nchw(x: Tensor) -> Tensor:
    if x.ndim == 2:
        return T.reshape(x, (1, 1) + x.shape)
    if x.ndim == 3:
        return T.reshape(x, (x.shape[0], 1) + x.shape[1:])
    if x.ndim == 4 and x.shape[1] == 1:
        return x
    raise ValueError(f"lcc expects single-channel images, got {x.shape}")


def lcc(a, b, window: int = 9, eps: float = LCC_EPS) -> Tensor:
    """Mean squared local normalised cross-correlation (zero-padded windows).

    Per pixel::

        cc = cross^2 / (var_a * var_b + eps)

    where ``cross``, ``var_a``, ``var_b`` are window sums of centred products.
    """
    a, b = _to_nchw(T.as_tensor(a)), _to_nchw(T.as_tensor(b))
    if a.shape != b.shape:
        raise ValueError(f"lcc: shapes {a.shape} and {b.shape} differ")
    if window > min(a.shape[-2:]):
        raise ValueError(f"lcc: window {window} larger than image {a.shape[-2:]}")
    n = float(window * window)
    box = T.Tensor(np.ones((1, 1, window, window)))
    pad = window // 2

    def wsum(x):
        return T.conv2d(x, box, padding=pad)

    sa, sb = wsum(a), wsum(b)
    saa, sbb, sab = wsum(T.square(a)), wsum(T.square(b)), wsum(a * b)
    cross = sab - sa * sb * (1.0 / n)
    var_a = saa - T.square(sa) * (1.0 / n)
    var_b = sbb - T.square(sb) * (1.0 / n)
    cc = T.square(cross) / (var_a * var_b + eps)
    return T.mean(cc)


def smoothness_loss(v) -> Tensor:
    """Mean squared forward difference of every offset channel."""
    return T.mean(T.square(finite_diff(T.as_tensor(v))))


def rec_loss_terms(y_r: Tensor, y_m: Tensor, models_r, models_m,
                   x_r: Tensor, x_m: Tensor, tx_r: Tensor, tx_m: Tensor,
                   cfg: RecLossConfig) -> tuple[Tensor, Tensor]:
    """(L_cross, L_self) for a batch.  ``tx_*`` are the warped reconstructions."""
    if tx_r is None or tx_m is None:
        raise ValueError("rec_loss needs both warped reconstructions (pass the unwarped ones for T = identity)")
    for t in (x_r, x_m, tx_r, tx_m):
        if t.shape != x_r.shape:
            raise ValueError(f"rec_loss: image shapes differ ({t.shape} vs {x_r.shape})")
    mr, mm = mri._stack_masks(models_r), mri._stack_masks(models_m)
    kind, delta = cfg.distance, cfg.huber_delta
    cross = (masked_distance(mri.forward(models_r, tx_m), y_r, mr, kind, delta)
             + masked_distance(mri.forward(models_m, tx_r), y_m, mm, kind, delta))
    if cfg.gamma == 0:
        return cross, T.Tensor(0.0)
    self_ = (masked_distance(mri.forward(models_r, x_r), y_r, mr, kind, delta)
             + masked_distance(mri.forward(models_m, x_m), y_m, mm, kind, delta))
    return cross, self_


def rec_loss(y_r, y_m, models_r, models_m, x_r, x_m, tx_r, tx_m, cfg: RecLossConfig) -> Tensor:
    cross, self_ = rec_loss_terms(y_r, y_m, models_r, models_m, x_r, x_m, tx_r, tx_m, cfg)
    return cross if cfg.gamma == 0 else cross + self_ * cfg.gamma


def magnitude(x: Tensor) -> Tensor:
    return T.cabs(x) if x.is_complex else x


def reg_loss_terms(x_r: Tensor, x_m: Tensor, tx_r: Tensor, tx_m: Tensor,
                   v_rm: Tensor, v_mr: Tensor, cfg: RegLossConfig) -> tuple[Tensor, Tensor]:
    """(L_similarity, L_smooth): negated two-way LCC and summed field smoothness."""
    w = cfg.lcc_window
    sim = -(lcc(magnitude(tx_m), magnitude(x_r), w) + lcc(magnitude(tx_r), magnitude(x_m), w))
    smooth = smoothness_loss(v_mr) + smoothness_loss(v_rm)
    return sim, smooth


def reg_loss(x_r, x_m, tx_r, tx_m, v_rm, v_mr, cfg: RegLossConfig) -> Tensor:
    sim, smooth = reg_loss_terms(x_r, x_m, tx_r, tx_m, v_rm, v_mr, cfg)
    return sim if cfg.lam == 0 else sim + smooth * cfg.lam
