"""Synthetic measurement-pair datasets and their on-disk layout.

A dataset directory holds ``manifest.json`` plus, per split, stacked DCLT
tensors::

    <split>/x_r.dclt  x_m.dclt      (N, H, W) real oracle images
    <split>/y_r.dclt  y_m.dclt      (N, H, W) complex masked k-space
    <split>/mask_r.dclt mask_m.dclt (N, H, W) 0/1 sampling masks
    <split>/field.dclt              (N, 2, H, W) oracle offsets (deformation mode only)
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dclt, mri
from .deformation import REFERENCE_GRID, SyntheticFieldConfig, synthesize_field, warp_array
from .mri import MeasurementModel, MeasurementPair, SamplingMask
from .phantom import make_phantom, make_related_phantom

SPLITS = ("train", "val", "test")
SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}
FORMAT_VERSION = 1

# Literature smoothing widths for the three deformation tiers, on a 256 grid.
TIER_SIGMAS = {"strong": 10.0, "medium": 18.0, "weak": 24.0}
TIER_POINTS = 2000
TIER_RANGE = (-10.0, 10.0)
# Normalised-kernel smoothing of sparse impulses leaves sub-pixel fields; this
# gain puts the strong tier at ~1.25 px RMS displacement on any grid size.
DESK_GAIN = 27.0


def desk_field_config(tier_or_sigma, size: int) -> SyntheticFieldConfig:
    """Field parameters for a grid of ``size`` equivalent to a 256-grid tier.

    Point density is matched (p scales with area) and sigma with the side length.
    """
    sigma = TIER_SIGMAS[tier_or_sigma] if isinstance(tier_or_sigma, str) else float(tier_or_sigma)
    ratio = size / REFERENCE_GRID
    return SyntheticFieldConfig(n_points=max(1, int(round(TIER_POINTS * ratio * ratio))),
                                value_range=TIER_RANGE, sigma=sigma * ratio,
                                amplitude_gain=DESK_GAIN)


@dataclass
class DatasetSpec:
    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    size: int = 64
    acceleration: float = 3.0
    n_center_lines: int = 4
    deformation: str = "strong"  # strong | medium | weak | none | real_pair
    sigma: float = 0.0  # > 0 overrides the tier's 256-grid sigma
    n_points: int = 0  # > 0 overrides the density-matched point count
    amplitude_gain: float = DESK_GAIN
    snr_db: float = 40.0
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train < 1:
            raise ValueError("need n_train >= 1 and nonnegative split sizes")
        if self.size < 32:
            raise ValueError(f"size must be >= 32, got {self.size}")
        if self.acceleration < 1:
            raise ValueError(f"acceleration must be >= 1, got {self.acceleration}")
        if self.deformation not in (*TIER_SIGMAS, "none", "real_pair"):
            raise ValueError(f"unknown deformation mode {self.deformation!r}")

    def field_config(self) -> SyntheticFieldConfig | None:
        if self.deformation in ("none", "real_pair"):
            return None
        cfg = desk_field_config(self.sigma if self.sigma > 0 else self.deformation, self.size)
        if self.n_points > 0:
            cfg.n_points = self.n_points
        cfg.amplitude_gain = self.amplitude_gain
        return cfg

    def n(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def sample_seed(self, split: str, index: int) -> int:
        # disjoint subranges per split
        return self.seed * 10_000_000 + SPLIT_OFFSETS[split] + index


def _child_seeds(sample_seed: int, n: int = 6) -> list[int]:
    return [int(s) for s in np.random.default_rng(sample_seed).integers(0, 2**62, size=n)]


def synthesize_pair(spec: DatasetSpec, sample_seed: int, sample_id: str = "") -> MeasurementPair:
    s_img, s_field, s_mask_r, s_mask_m, s_noise_r, s_noise_m = _child_seeds(sample_seed)
    n = spec.size
    x_r = make_phantom(s_img, n)
    v = None
    if spec.deformation == "real_pair":
        x_m = make_related_phantom(s_img, n, s_field)
    elif spec.deformation == "none":
        x_m = x_r.copy()
        v = np.zeros((2, n, n))
    else:
        v = synthesize_field(spec.field_config(), n, n, s_field).v
        x_m = warp_array(x_r, v)
    mask_r = mri.make_cartesian_mask(n, n, spec.acceleration, spec.n_center_lines, s_mask_r)
    mask_m = mri.make_cartesian_mask(n, n, spec.acceleration, spec.n_center_lines, s_mask_m)
    model_r, model_m = MeasurementModel(mask_r), MeasurementModel(mask_m)
    y_r = mri.add_noise(mri.measure(model_r, x_r), spec.snr_db, s_noise_r, mask_r.array)
    y_m = mri.add_noise(mri.measure(model_m, x_m), spec.snr_db, s_noise_m, mask_m.array)
    return MeasurementPair(y_r, y_m, model_r, model_m, oracle_x_r=x_r, oracle_x_m=x_m,
                           oracle_field=v, sample_id=sample_id,
                           meta={"sample_seed": sample_seed,
                                 "mask_r": mask_r.metadata(), "mask_m": mask_m.metadata()})


@dataclass
class Dataset:
    spec: DatasetSpec
    splits: dict = field(default_factory=dict)  # split -> list[MeasurementPair]

    def __getitem__(self, split: str) -> list[MeasurementPair]:
        return self.splits[split]


def synthesize_dataset(spec: DatasetSpec, splits=SPLITS) -> Dataset:
    spec.validate()
    out = Dataset(spec)
    for split in splits:
        out.splits[split] = [synthesize_pair(spec, spec.sample_seed(split, i), f"{split}-{i:04d}")
                             for i in range(spec.n(split))]
    return out


# persistence -------------------------------------------------------------

def save_dataset(ds: Dataset, root: str | os.PathLike, run_manifest: dict | None = None) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": FORMAT_VERSION, "kind": "dataset", "spec": asdict(ds.spec),
                "field_config": (asdict(ds.spec.field_config()) if ds.spec.field_config() else None),
                "run": run_manifest or {}, "splits": {}}
    for split, pairs in ds.splits.items():
        d = root / split
        d.mkdir(exist_ok=True)
        if not pairs:
            manifest["splits"][split] = {"count": 0, "samples": []}
            continue
        dclt.save(d / "x_r.dclt", np.stack([p.oracle_x_r for p in pairs]))
        dclt.save(d / "x_m.dclt", np.stack([p.oracle_x_m for p in pairs]))
        dclt.save(d / "y_r.dclt", np.stack([p.y_r for p in pairs]).astype(np.complex128))
        dclt.save(d / "y_m.dclt", np.stack([p.y_m for p in pairs]).astype(np.complex128))
        dclt.save(d / "mask_r.dclt", np.stack([p.model_r.mask.array for p in pairs]))
        dclt.save(d / "mask_m.dclt", np.stack([p.model_m.mask.array for p in pairs]))
        if all(p.oracle_field is not None for p in pairs):
            dclt.save(d / "field.dclt", np.stack([p.oracle_field for p in pairs]))
        manifest["splits"][split] = {"count": len(pairs), "samples": [
            {"id": p.sample_id, "seed": p.meta.get("sample_seed"),
             "mask_r": {k: v for k, v in p.meta["mask_r"].items() if k != "kept_lines"},
             "mask_m": {k: v for k, v in p.meta["mask_m"].items() if k != "kept_lines"}}
            for p in pairs]}
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return root


def read_manifest(root: str | os.PathLike) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def load_split(root: str | os.PathLike, split: str) -> list[MeasurementPair]:
    root = Path(root)
    manifest = read_manifest(root)
    info = manifest["splits"].get(split)
    if info is None:
        raise KeyError(f"dataset at {root} has no split {split!r}")
    if info["count"] == 0:
        return []
    d = root / split
    y_r, y_m = dclt.load_array(d / "y_r.dclt"), dclt.load_array(d / "y_m.dclt")
    m_r, m_m = dclt.load_array(d / "mask_r.dclt"), dclt.load_array(d / "mask_m.dclt")
    x_r = dclt.load_array(d / "x_r.dclt") if (d / "x_r.dclt").exists() else None
    x_m = dclt.load_array(d / "x_m.dclt") if (d / "x_m.dclt").exists() else None
    fld = dclt.load_array(d / "field.dclt") if (d / "field.dclt").exists() else None
    pairs = []
    for i, s in enumerate(info["samples"]):
        mr = SamplingMask.from_array(m_r[i], s["mask_r"]["acceleration"], s["mask_r"]["seed"],
                                     s["mask_r"]["n_center_lines"])
        mm = SamplingMask.from_array(m_m[i], s["mask_m"]["acceleration"], s["mask_m"]["seed"],
                                     s["mask_m"]["n_center_lines"])
        pairs.append(MeasurementPair(
            y_r[i], y_m[i], MeasurementModel(mr), MeasurementModel(mm),
            oracle_x_r=None if x_r is None else x_r[i], oracle_x_m=None if x_m is None else x_m[i],
            oracle_field=None if fld is None else fld[i], sample_id=s["id"],
            meta={"sample_seed": s.get("seed")}))
    return pairs


def spec_from_manifest(manifest: dict) -> DatasetSpec:
    return DatasetSpec(**manifest["spec"])


def write_pgm(path: str | os.PathLike, img: np.ndarray, vmax: float | None = None) -> None:
    """16-bit binary graymap (P5) of a magnitude image scaled to [0, vmax]."""
    mag = np.abs(np.asarray(img))
    top = float(vmax if vmax is not None else max(mag.max(), 1e-12))
    q = np.clip(np.round(mag / top * 65535.0), 0, 65535).astype(">u2")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError(f"{path} is not a binary graymap")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=w * h, offset=pos + 1)
    return data.reshape(h, w).astype(np.float64) / maxval
