"""Single-coil Cartesian MRI measurement operator.

``forward`` applies ``mask * FFT2(sensitivity * x)`` and ``adjoint`` its
conjugate transpose.  With an orthonormal FFT and a unit sensitivity the
pseudoinverse of the undersampled operator is exactly the adjoint (the
zero-filled reconstruction), so ``pseudoinverse`` simply calls ``adjoint``.

k-space is stored unshifted (DC at index 0), as ``np.fft.fft2`` returns it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class SamplingMask:
    height: int
    width: int
    kept_lines: tuple[int, ...]
    acceleration: float
    seed: int
    n_center_lines: int = 4

    @property
    def array(self) -> np.ndarray:
        m = np.zeros((self.height, self.width))
        m[list(self.kept_lines), :] = 1.0
        return m

    @property
    def fraction(self) -> float:
        return len(self.kept_lines) / self.height

    def metadata(self) -> dict:
        return {"acceleration": self.acceleration, "seed": self.seed,
                "n_center_lines": self.n_center_lines, "kept_lines": list(self.kept_lines)}

    @classmethod
    def from_array(cls, arr: np.ndarray, acceleration: float, seed: int, n_center_lines: int) -> "SamplingMask":
        rows = np.flatnonzero(np.asarray(arr).max(axis=1) > 0.5)
        return cls(arr.shape[0], arr.shape[1], tuple(int(r) for r in rows), acceleration, seed, n_center_lines)


def center_lines(height: int, n: int) -> list[int]:
    """The ``n`` ky rows nearest DC, in unshifted indexing."""
    shifted = np.arange(height // 2 - n // 2, height // 2 - n // 2 + n)
    return sorted(int(i) for i in np.mod(shifted - height // 2, height))


def make_cartesian_mask(height: int, width: int, acceleration: float,
                        n_center_lines: int = 4, seed: int = 0) -> SamplingMask:
    """Keep every kx sample of ``~height/acceleration`` ky lines.

    The centre band is always kept; the remaining lines are drawn uniformly
    without replacement from a generator seeded with ``seed``.
    """
    if height <= 0 or width <= 0:
        raise ValueError(f"mask size must be positive, got {height}x{width}")
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    n_keep = max(1, int(round(height / acceleration)))
    if acceleration > 1 and not n_center_lines < height / acceleration:
        raise ValueError(f"{n_center_lines} centre lines do not fit in {height / acceleration:.1f} kept lines")
    if n_keep >= height:
        return SamplingMask(height, width, tuple(range(height)), acceleration, seed, n_center_lines)
    center = center_lines(height, n_center_lines)
    rest = np.setdiff1d(np.arange(height), center)
    rng = np.random.default_rng(seed)
    extra = rng.choice(rest, size=n_keep - len(center), replace=False)
    kept = tuple(sorted(int(i) for i in np.concatenate([center, extra])))
    return SamplingMask(height, width, kept, acceleration, seed, n_center_lines)


@dataclass
class MeasurementModel:
    """H = P F S for one acquisition.  ``sensitivity=None`` is the unit map."""
    mask: SamplingMask
    sensitivity: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.mask.height, self.mask.width)


@dataclass
class MeasurementPair:
    y_r: np.ndarray  # complex (H, W), zero off-mask
    y_m: np.ndarray
    model_r: MeasurementModel
    model_m: MeasurementModel
    oracle_x_r: np.ndarray | None = None
    oracle_x_m: np.ndarray | None = None
    oracle_field: np.ndarray | None = None  # (2, H, W) offsets of phi^{r->m}
    sample_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def has_oracle(self) -> bool:
        return self.oracle_x_r is not None


def _stack_masks(models) -> np.ndarray:
    if isinstance(models, MeasurementModel):
        return models.mask.array
    return np.stack([m.mask.array for m in models])[:, None]  # (N, 1, H, W)


def _stack_sens(models):
    if isinstance(models, MeasurementModel):
        return models.sensitivity
    sens = [m.sensitivity for m in models]
    if all(s is None for s in sens):
        return None
    h, w = models[0].shape
    return np.stack([np.ones((h, w)) if s is None else s for s in sens])


def _check(op: str, models, x: Tensor) -> None:
    if not x.is_complex:
        raise TypeError(f"{op}: expects a complex tensor, got {x.dtype}")
    h, w = models.shape if isinstance(models, MeasurementModel) else models[0].shape
    if x.shape[-2:] != (h, w):
        raise ValueError(f"{op}: data {x.shape} does not match mask {h}x{w}")
    if not isinstance(models, MeasurementModel) and (x.ndim != 4 or x.shape[0] != len(models)):
        raise ValueError(f"{op}: batch of {len(models)} models needs (N, 2, H, W) data, got {x.shape}")


def forward(models: MeasurementModel | Sequence[MeasurementModel], image: Tensor) -> Tensor:
    """Masked orthonormal k-space of ``image``; a sequence of models maps over the batch axis."""
    _check("forward", models, image)
    sens = _stack_sens(models)
    x = T.cmul_const(image, sens) if sens is not None else image
    return T.mul(T.fft2(x), _stack_masks(models))


def adjoint(models: MeasurementModel | Sequence[MeasurementModel], kspace: Tensor) -> Tensor:
    _check("adjoint", models, kspace)
    img = T.ifft2(T.mul(kspace, _stack_masks(models)))
    sens = _stack_sens(models)
    return T.cmul_const(img, np.conj(sens)) if sens is not None else img


def pseudoinverse(models, kspace: Tensor) -> Tensor:
    """Zero-filled image.  Equal to ``adjoint`` for the unit-sensitivity Cartesian operator."""
    return adjoint(models, kspace)


def add_noise(kspace: np.ndarray, snr_db: float, seed: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Add circular complex Gaussian noise on sampled entries at the given input SNR.

    Signal power is measured over the sampled entries (``mask`` if given,
    otherwise the nonzero entries); the noise variance is set so that the
    expected SNR equals ``snr_db``.
    """
    kspace = np.asarray(kspace, dtype=np.complex128)
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    sampled = (np.asarray(mask) > 0.5) if mask is not None else (kspace != 0)
    sampled = np.broadcast_to(sampled, kspace.shape)
    n = int(sampled.sum())
    power = float(np.sum(np.abs(kspace[sampled]) ** 2)) / max(n, 1)
    if n == 0 or power == 0.0:
        raise ValueError("cannot set an SNR on all-zero k-space")
    noise_var = power / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(kspace.shape) + 1j * rng.standard_normal(kspace.shape)
    noise *= np.sqrt(noise_var / 2.0)
    return kspace + np.where(sampled, noise, 0.0)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray, mask: np.ndarray) -> float:
    sampled = np.broadcast_to(np.asarray(mask) > 0.5, clean.shape)
    sig = np.sum(np.abs(clean[sampled]) ** 2)
    err = np.sum(np.abs((noisy - clean)[sampled]) ** 2)
    return float(10.0 * np.log10(sig / err))


def image_tensor(x: np.ndarray) -> Tensor:
    """Real or complex (…, H, W) array -> complex plane tensor."""
    return Tensor.from_complex(np.asarray(x, dtype=np.complex128))


def measure(model: MeasurementModel, x: np.ndarray) -> np.ndarray:
    """Noise-free measurement of a plain array; convenience for synthesis and baselines."""
    with T.no_grad():
        return forward(model, image_tensor(x)).to_complex()


def zero_fill(model: MeasurementModel, y: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return pseudoinverse(model, image_tensor(y)).to_complex()
