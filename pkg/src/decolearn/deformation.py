"""Displacement fields and differentiable bilinear warping.

A field ``v`` has shape ``(2, H, W)`` holding per-pixel ``(dy, dx)`` offsets
in pixels; the transform is ``phi = I + v`` and ``warp(x, v)(p)`` samples
``x`` at ``p + v(p)``.  Sample coordinates are clamped to the image
rectangle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

REFERENCE_GRID = 256  # image size the literature parameters (p, delta, sigma) refer to


@dataclass
class DisplacementField:
    v: np.ndarray  # (2, H, W)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.v.ndim != 3 or self.v.shape[0] != 2:
            raise ValueError(f"displacement field must be (2, H, W), got {self.v.shape}")
        if not np.all(np.isfinite(self.v)):
            raise ValueError("displacement field has non-finite values")

    @property
    def height(self) -> int:
        return self.v.shape[1]

    @property
    def width(self) -> int:
        return self.v.shape[2]

    @classmethod
    def zeros(cls, height: int, width: int) -> "DisplacementField":
        return cls(np.zeros((2, height, width)))


@dataclass
class SyntheticFieldConfig:
    """Random sparse impulses smoothed by a normalised Gaussian.

    ``amplitude_gain`` multiplies the final field; see ``desk_field_config``
    for the calibrated values used by the experiments.
    """
    n_points: int = 2000
    value_range: tuple[float, float] = (-10.0, 10.0)
    sigma: float = 10.0
    amplitude_gain: float = 1.0
    reference_size: int = REFERENCE_GRID

    def validate(self) -> None:
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        lo, hi = self.value_range
        if not lo <= hi:
            raise ValueError(f"value_range must satisfy lo <= hi, got {self.value_range}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def smooth_edge_clamped(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of the last two axes with edge replication."""
    k = gaussian_kernel1d(sigma)
    r = len(k) // 2
    out = np.asarray(img, dtype=np.float64)
    for axis in (-2, -1):
        widths = [(0, 0)] * out.ndim
        widths[axis] = (r, r)
        padded = np.pad(out, widths, mode="edge")
        win = np.lib.stride_tricks.sliding_window_view(padded, len(k), axis=axis)
        out = win @ k
    return out


def synthesize_field(config: SyntheticFieldConfig, height: int, width: int, seed: int) -> DisplacementField:
    config.validate()
    if config.n_points > height * width:
        raise ValueError(f"n_points={config.n_points} exceeds the {height * width} pixels")
    rng = np.random.default_rng(seed)
    sites = rng.choice(height * width, size=config.n_points, replace=False)
    lo, hi = config.value_range
    values = rng.uniform(lo, hi, size=(2, config.n_points)) if hi > lo else np.full((2, config.n_points), lo)
    v = np.zeros((2, height * width))
    v[:, sites] = values
    v = smooth_edge_clamped(v.reshape(2, height, width), config.sigma)
    scale = math.sqrt(height * width) / config.reference_size
    return DisplacementField(v * scale * config.amplitude_gain)


# warping ------------------------------------------------------------------

def _coords(v: np.ndarray, height: int, width: int):
    """Clamped sample positions plus the per-axis corner indices and weights."""
    yy = np.arange(height)[:, None] + v[:, 0]
    xx = np.arange(width)[None, :] + v[:, 1]
    yc = np.clip(yy, 0.0, height - 1.0)
    xc = np.clip(xx, 0.0, width - 1.0)
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(height - 2, 0))
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(width - 2, 0))
    y1 = np.minimum(y0 + 1, height - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    wy = yc - y0
    wx = xc - x0
    inside_y = (yy >= 0.0) & (yy <= height - 1.0)
    inside_x = (xx >= 0.0) & (xx <= width - 1.0)
    return y0, y1, x0, x1, wy, wx, inside_y, inside_x


def warp(image: Tensor, field) -> Tensor:
    """Bilinear resampling of ``image`` at ``p + v(p)``; differentiable in both arguments.

    ``image`` is ``(N, C, H, W)`` or ``(C, H, W)``; ``field`` is a Tensor,
    array or :class:`DisplacementField` of shape ``(N, 2, H, W)`` or
    ``(2, H, W)``.  All channels (and both planes of a complex image) share
    the field.
    """
    if isinstance(field, DisplacementField):
        field = field.v
    field = T.as_tensor(field)
    image = T.as_tensor(image)
    batched = image.ndim == 4
    if image.ndim not in (3, 4) or field.ndim != image.ndim or field.shape[-3] != 2:
        raise ValueError(f"warp: image {image.shape} and field {field.shape} are incompatible")
    if image.shape[-2:] != field.shape[-2:] or (batched and image.shape[0] != field.shape[0]):
        raise ValueError(f"warp: image {image.shape} and field {field.shape} differ in size")
    if np.isnan(field.data).any():
        raise ValueError("warp: field contains NaN")

    img = image.data if batched else image.data[None]
    v = field.data if batched else field.data[None]
    n, c, h, w = img.shape
    y0, y1, x0, x1, wy, wx, inside_y, inside_x = _coords(v, h, w)
    wy, wx = wy[:, None], wx[:, None]
    bidx = np.arange(n)[:, None, None, None]
    cidx = np.arange(c)[None, :, None, None]
    i00 = img[bidx, cidx, y0[:, None], x0[:, None]]
    i01 = img[bidx, cidx, y0[:, None], x1[:, None]]
    i10 = img[bidx, cidx, y1[:, None], x0[:, None]]
    i11 = img[bidx, cidx, y1[:, None], x1[:, None]]
    top = (1.0 - wx) * i00 + wx * i01
    bot = (1.0 - wx) * i10 + wx * i11
    out = (1.0 - wy) * top + wy * bot

    def backward(g):
        g4 = g if batched else g[None]
        gimg = gfield = None
        if image.requires_grad:
            base = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None, None] * (h * w)
            acc = np.zeros(n * c * h * w)
            for yi, xi, wgt in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
                                (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)):
                flat = base + (yi * w + xi)[:, None]
                acc += np.bincount(flat.ravel(), weights=(g4 * wgt).ravel(), minlength=acc.size)
            gimg = acc.reshape(n, c, h, w)
            gimg = gimg if batched else gimg[0]
        if field.requires_grad:
            dy = ((1.0 - wx) * (i10 - i00) + wx * (i11 - i01)) * g4
            dx = ((1.0 - wy) * (i01 - i00) + wy * (i11 - i10)) * g4
            gf = np.stack([dy.sum(axis=1) * inside_y, dx.sum(axis=1) * inside_x], axis=1)
            gfield = gf if batched else gf[0]
        return gimg, gfield

    out = out if batched else out[0]
    return T.make_node(out, (image, field), backward, image.dtype)


def warp_array(image: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Non-differentiable convenience wrapper for plain (…, H, W) arrays."""
    image = np.asarray(image)
    if np.iscomplexobj(image):
        return warp_array(image.real, v) + 1j * warp_array(image.imag, v)
    with T.no_grad():
        return warp(Tensor(image[None].astype(np.float64)), np.asarray(v)).data[0]


def invert_field(v: np.ndarray, iterations: int = 50) -> np.ndarray:
    """Approximate inverse displacement by fixed-point iteration u(q) = -v(q + u(q))."""
    v = np.asarray(v, dtype=np.float64)
    u = -v.copy()
    for _ in range(iterations):
        u = -np.stack([warp_array(v[0], u), warp_array(v[1], u)])
    return u


def endpoint_error(estimated, oracle) -> float:
    """Mean Euclidean norm of the per-pixel offset difference."""
    a = estimated.v if isinstance(estimated, DisplacementField) else np.asarray(estimated)
    b = oracle.v if isinstance(oracle, DisplacementField) else np.asarray(oracle)
    if a.shape != b.shape:
        raise ValueError(f"endpoint_error: shapes {a.shape} and {b.shape} differ")
    d = a - b
    return float(np.mean(np.sqrt(np.sum(d * d, axis=-3))))
