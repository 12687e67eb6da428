"""Procedural brain-like phantoms.

A head ellipse with a bright rim, grey/white-matter layers, dark ventricles,
a few small bright lesions and a low-amplitude smooth texture.  Values are
clipped to [0, 1].
"""
from __future__ import annotations

import numpy as np

from .deformation import smooth_edge_clamped


def _ellipse(yy, xx, cy, cx, ay, ax, angle):
    c, s = np.cos(angle), np.sin(angle)
    dy, dx = yy - cy, xx - cx
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def _layout(rng: np.random.Generator) -> dict:
    """Random shape parameters in unit coordinates (image spans [-1, 1])."""
    head = dict(cy=rng.uniform(-0.04, 0.04), cx=rng.uniform(-0.04, 0.04),
                ay=rng.uniform(0.78, 0.90), ax=rng.uniform(0.64, 0.76), angle=rng.uniform(-0.2, 0.2))
    rim = rng.uniform(0.06, 0.09)
    wm = dict(scale=rng.uniform(0.62, 0.74), level=rng.uniform(0.62, 0.72))
    gm_level = rng.uniform(0.40, 0.50)
    vents = []
    for side in (-1, 1):
        vents.append(dict(dy=rng.uniform(-0.12, 0.08), dx=side * rng.uniform(0.08, 0.14),
                          ay=rng.uniform(0.16, 0.26), ax=rng.uniform(0.04, 0.08),
                          angle=side * rng.uniform(0.1, 0.4)))
    lesions = []
    for _ in range(rng.integers(2, 6)):
        r = rng.uniform(0.0, 0.55)
        t = rng.uniform(0, 2 * np.pi)
        lesions.append(dict(dy=r * np.sin(t), dx=r * np.cos(t) * 0.8, ay=rng.uniform(0.03, 0.08),
                            ax=rng.uniform(0.03, 0.08), angle=rng.uniform(0, np.pi),
                            level=rng.uniform(0.8, 1.0)))
    return dict(head=head, rim=rim, wm=wm, gm_level=gm_level, vents=vents, lesions=lesions,
                texture_seed=int(rng.integers(0, 2**31)))


def _jitter(layout: dict, rng: np.random.Generator, amount: float) -> dict:
    """Small anatomical changes (shifted/resized structures) for related-pair mode."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in layout.items()}
    out["vents"] = [dict(v) for v in layout["vents"]]
    out["lesions"] = [dict(v) for v in layout["lesions"]]
    for v in out["vents"]:
        v["ay"] *= 1.0 + rng.uniform(-amount, amount)
        v["ax"] *= 1.0 + rng.uniform(-amount, amount)
        v["dy"] += rng.uniform(-amount, amount) * 0.1
    for les in out["lesions"]:
        les["dy"] += rng.uniform(-amount, amount) * 0.1
        les["dx"] += rng.uniform(-amount, amount) * 0.1
    out["wm"]["scale"] *= 1.0 + rng.uniform(-amount, amount) * 0.2
    return out


def _render(layout: dict, size: int) -> np.ndarray:
    g = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(g, g, indexing="ij")
    h = layout["head"]
    img = np.zeros((size, size))

    outer = _ellipse(yy, xx, h["cy"], h["cx"], h["ay"], h["ax"], h["angle"])
    r = layout["rim"]
    inner = _ellipse(yy, xx, h["cy"], h["cx"], h["ay"] - r, h["ax"] - r, h["angle"])
    img[outer] = 0.9
    img[inner] = layout["gm_level"]
    s = layout["wm"]["scale"]
    wm = _ellipse(yy, xx, h["cy"], h["cx"], (h["ay"] - r) * s, (h["ax"] - r) * s, h["angle"])
    img[wm] = layout["wm"]["level"]
    for v in layout["vents"]:
        img[_ellipse(yy, xx, h["cy"] + v["dy"], h["cx"] + v["dx"], v["ay"], v["ax"], v["angle"])] = 0.15
    for les in layout["lesions"]:
        m = _ellipse(yy, xx, h["cy"] + les["dy"], h["cx"] + les["dx"], les["ay"], les["ax"], les["angle"])
        img[m & inner] = les["level"]

    trng = np.random.default_rng(layout["texture_seed"])
    texture = smooth_edge_clamped(trng.standard_normal((size, size)), max(size / 64.0, 0.75))
    texture *= 0.04 / (texture.std() + 1e-12)
    img = np.where(inner, img + texture, img)
    return np.clip(img, 0.0, 1.0)


def make_phantom(seed: int, size: int = 64) -> np.ndarray:
    if size < 32:
        raise ValueError(f"phantom size must be >= 32, got {size}")
    return _render(_layout(np.random.default_rng(seed)), size)


def make_related_phantom(seed: int, size: int, variant_seed: int, amount: float = 0.15) -> np.ndarray:
    """Same anatomy as ``make_phantom(seed)`` with small structural changes."""
    if size < 32:
        raise ValueError(f"phantom size must be >= 32, got {size}")
    layout = _layout(np.random.default_rng(seed))
    return _render(_jitter(layout, np.random.default_rng(variant_seed), amount), size)


def foreground_fraction(img: np.ndarray, threshold: float = 0.05) -> float:
    return float(np.mean(img > threshold))
