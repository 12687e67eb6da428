"""PSNR and SSIM on magnitude images."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 300.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REPORT_COLUMNS = ("sample_id", "method", "acceleration", "sigma", "psnr_db", "ssim")


def _mag(x) -> np.ndarray:
    return np.abs(np.asarray(x))


def psnr(x, ref) -> float:
    """10 log10(peak^2 / MSE) with peak = max |ref|; exact matches give ``PSNR_CAP``."""
    x, ref = _mag(x), _mag(ref)
    if x.shape != ref.shape:
        raise ValueError(f"psnr: shapes {x.shape} and {ref.shape} differ")
    peak = ref.max()
    if peak == 0:
        raise ValueError("psnr: reference image is all zero")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def _gauss_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = np.lib.stride_tricks.sliding_window_view(img, len(g), axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, len(g), axis=1) @ g


def ssim(x, ref, data_range: float | None = None) -> float:
    """Mean SSIM over the valid region of an 11x11 Gaussian (sigma 1.5) window.

    ``data_range`` defaults to the dynamic range of ``ref``; pass it
    explicitly for a symmetric comparison.
    """
    x, ref = _mag(x).astype(np.float64), _mag(ref).astype(np.float64)
    if x.shape != ref.shape or x.ndim != 2:
        raise ValueError(f"ssim: expected two equal 2-D images, got {x.shape} and {ref.shape}")
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"ssim: image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    L = float(ref.max() - ref.min()) if data_range is None else float(data_range)
    if L <= 0:
        raise ValueError("ssim: zero dynamic range")
    c1, c2 = (SSIM_K1 * L) ** 2, (SSIM_K2 * L) ** 2
    g = _gauss_window()
    mx, my = _filter_valid(x, g), _filter_valid(ref, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(ref * ref, g) - my * my
    sxy = _filter_valid(x * ref, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    def add(self, sample_id: str, method: str, acceleration, sigma, x, ref) -> dict:
        row = {"sample_id": sample_id, "method": method, "acceleration": acceleration,
               "sigma": sigma, "psnr_db": psnr(x, ref), "ssim": ssim(x, ref)}
        self.rows.append(row)
        return row

    def summary(self) -> dict:
        """method -> {psnr_mean, psnr_std, ssim_mean, ssim_std, n}"""
        out = {}
        for method in dict.fromkeys(r["method"] for r in self.rows):
            p = np.array([r["psnr_db"] for r in self.rows if r["method"] == method])
            s = np.array([r["ssim"] for r in self.rows if r["method"] == method])
            out[method] = {"psnr_mean": float(p.mean()), "psnr_std": float(p.std()),
                           "ssim_mean": float(s.mean()), "ssim_std": float(s.std()), "n": int(p.size)}
        return out

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "psnr_db": f"{r['psnr_db']:.6f}", "ssim": f"{r['ssim']:.6f}"})

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "MetricReport":
        with open(path, newline="") as fh:
            rows = [{**r, "psnr_db": float(r["psnr_db"]), "ssim": float(r["ssim"])} for r in csv.DictReader(fh)]
        return cls(rows)
