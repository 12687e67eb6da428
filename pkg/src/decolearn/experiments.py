"""Ablation orchestration: every method on one dataset, one table."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .baselines import TVConfig, pretrain_registration, select_tau, tv_reconstruct, zero_filled
from .config import RunConfig, replace, run_manifest
from .data import TIER_SIGMAS, Dataset, DatasetSpec, save_dataset, synthesize_dataset
from .deformation import endpoint_error
from .metrics import MetricReport
from .models import RegNetParams, reg_forward
from .trainer import TrainConfig, make_batch, reconstruct, train

log = logging.getLogger(__name__)

METHODS = ("zero_filled", "tv", "a2a_unregistered", "a2a_pretrained_reg", "a2a_oracle", "decolearn")
LEARNED = ("a2a_unregistered", "a2a_pretrained_reg", "a2a_oracle", "decolearn")


def tier_sigma(spec: DatasetSpec) -> float:
    """The 256-grid smoothing width reported in tables (0 when there is no field)."""
    if spec.sigma > 0:
        return float(spec.sigma)
    return TIER_SIGMAS.get(spec.deformation, 0.0)


def column_name(spec: DatasetSpec) -> str:
    return f"x{spec.acceleration:g}_sigma{tier_sigma(spec):g}"


def registration_fields(reg: RegNetParams, moving: np.ndarray, reference: np.ndarray,
                        batch_size: int = 8) -> np.ndarray:
    """Fields v with warp(moving, v) ~ reference, for complex (N, H, W) stacks."""
    out = []
    for i in range(0, len(moving), batch_size):
        with T.no_grad():
            v = reg_forward(reg, T.Tensor.from_complex(moving[i:i + batch_size]),
                            T.Tensor.from_complex(reference[i:i + batch_size]))
        out.append(v.data)
    return np.concatenate(out)


def registration_epe(reg: RegNetParams, pairs, recon=None) -> dict:
    """Mean endpoint error of r->m fields against the oracle, and of the zero field.

    With ``recon`` the network sees reconstructions (its training inputs),
    otherwise zero-filled images.
    """
    pairs = [p for p in pairs if p.oracle_field is not None]
    if not pairs:
        return {}
    if recon is not None:
        x_r, x_m = reconstruct(recon, pairs, "r"), reconstruct(recon, pairs, "m")
    else:
        b = make_batch(pairs)
        x_r, x_m = b.zf_r.to_complex(), b.zf_m.to_complex()
    v = registration_fields(reg, x_r, x_m)
    est = [endpoint_error(v[i], p.oracle_field) for i, p in enumerate(pairs)]
    zero = [endpoint_error(np.zeros_like(p.oracle_field), p.oracle_field) for p in pairs]
    return {"epe": float(np.mean(est)), "epe_zero_field": float(np.mean(zero)), "n": len(pairs)}


@dataclass
class ColumnResult:
    name: str
    acceleration: float
    sigma: float
    report: MetricReport
    tau: float | None = None
    tau_scores: dict = field(default_factory=dict)
    registration: dict = field(default_factory=dict)
    runtime_s: dict = field(default_factory=dict)

    def mean(self, method: str, metric: str = "psnr_db") -> float:
        return float(np.mean([r[metric] for r in self.report.rows if r["method"] == method]))


@dataclass
class AblationResult:
    columns: list
    methods: tuple = METHODS

    def table(self) -> list[dict]:
        rows = []
        for m in self.methods:
            row = {"method": m}
            for c in self.columns:
                row[f"{c.name}_psnr"] = c.mean(m)
                row[f"{c.name}_ssim"] = c.mean(m, "ssim")
            rows.append(row)
        return rows

    def write_table(self, path) -> None:
        rows = self.table()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})

    def format(self) -> str:
        head = "method".ljust(20) + "".join(f"{c.name:>26}" for c in self.columns)
        lines = [head, "-" * len(head)]
        for m in self.methods:
            cells = "".join(f"{c.mean(m):>14.2f} dB / {c.mean(m, 'ssim'):.3f}" for c in self.columns)
            lines.append(m.ljust(20) + cells)
        return "\n".join(lines)


def evaluate_baselines(ds: Dataset, cfg: RunConfig, report: MetricReport, col: ColumnResult,
                       methods=METHODS, out_dir: Path | None = None) -> None:
    spec, test = ds.spec, ds["test"]
    sig = tier_sigma(spec)
    if "zero_filled" in methods:
        t0 = time.perf_counter()
        for p in test:
            report.add(p.sample_id, "zero_filled", spec.acceleration, sig, zero_filled(p.y_r, p.model_r), p.oracle_x_r)
        col.runtime_s["zero_filled"] = time.perf_counter() - t0
    if "tv" in methods:
        t0 = time.perf_counter()
        tau, scores = select_tau(ds["val"], cfg.tv) if ds["val"] else (cfg.tv.tau, {})
        col.tau, col.tau_scores = tau, scores
        tv_cfg = TVConfig(**{**cfg.tv.__dict__, "tau": tau})
        for p in test:
            report.add(p.sample_id, "tv", spec.acceleration, sig, tv_reconstruct(p.y_r, p.model_r, tv_cfg), p.oracle_x_r)
        col.runtime_s["tv"] = time.perf_counter() - t0
        log.info("%s: tv tau=%g (%s)", col.name, tau, scores)


def run_column(cfg: RunConfig, out_dir: str | os.PathLike, methods=METHODS,
               dataset: Dataset | None = None, progress=None) -> ColumnResult:
    """All methods on the dataset described by ``cfg.dataset`` (or the one given)."""
    start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.dataset
    ds = dataset or synthesize_dataset(spec)
    manifest = run_manifest(cfg, "ablation")
    save_dataset(ds, out / "dataset", manifest)
    col = ColumnResult(column_name(spec), spec.acceleration, tier_sigma(spec), MetricReport())
    evaluate_baselines(ds, cfg, col.report, col, methods)

    pretrained = None
    if "a2a_pretrained_reg" in methods:
        t0 = time.perf_counter()
        pretrained = pretrain_registration(ds["train"], cfg.loss.reg(), cfg.model.reg_levels, cfg.model.reg_width,
                                           iterations=cfg.train.pretrain_iterations, batch_size=cfg.train.batch_size,
                                           lr=cfg.train.lr_reg, seed=cfg.train.seed, init_seed=cfg.model.seed + 1)
        col.runtime_s["pretrain_registration"] = time.perf_counter() - t0
        if ds["test"] and ds["test"][0].oracle_field is not None:
            col.registration["a2a_pretrained_reg"] = registration_epe(pretrained, ds["test"])

    for mode in (m for m in LEARNED if m in methods):
        t0 = time.perf_counter()
        tcfg = TrainConfig(**{**cfg.train.__dict__, "mode": mode})
        state, _ = train(ds["train"], tcfg, cfg.model, cfg.loss.rec(), cfg.loss.reg(), out / mode,
                         val_pairs=ds["val"], pretrained_reg=pretrained,
                         manifest=run_manifest(replace(cfg, train=tcfg), "train"), log=progress)
        x = reconstruct(state.recon, ds["test"])
        for i, p in enumerate(ds["test"]):
            col.report.add(p.sample_id, mode, spec.acceleration, col.sigma, x[i], p.oracle_x_r)
        if mode == "decolearn" and ds["test"] and ds["test"][0].oracle_field is not None:
            col.registration["decolearn"] = registration_epe(state.reg, ds["test"], state.recon)
        col.runtime_s[mode] = time.perf_counter() - t0
        log.info("%s: %s %.2f dB (%.0f s)", col.name, mode, col.mean(mode), col.runtime_s[mode])
    col.report.write_csv(out / "report.csv")
    col.runtime_s["total"] = time.perf_counter() - start
    with open(out / "column.json", "w") as fh:
        json.dump({"name": col.name, "acceleration": col.acceleration, "sigma": col.sigma, "tau": col.tau,
                   "tau_scores": {str(k): v for k, v in col.tau_scores.items()},
                   "registration": col.registration, "runtime_s": col.runtime_s,
                   "summary": col.report.summary(), "manifest": manifest}, fh, indent=2, sort_keys=True)
    return col


def run_ablation(cfg: RunConfig, out_dir: str | os.PathLike, accelerations=None, tiers=None,
                 methods=METHODS, progress=None) -> AblationResult:
    """One column per (acceleration, deformation tier); defaults to the configured pair."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    accs = list(accelerations or [cfg.dataset.acceleration])
    tiers = list(tiers or [cfg.dataset.deformation])
    cols = []
    for acc in accs:
        for tier in tiers:
            spec = DatasetSpec(**{**cfg.dataset.__dict__, "acceleration": float(acc), "deformation": tier})
            ccfg = replace(cfg, dataset=spec)
            cols.append(run_column(ccfg, out / column_name(spec), methods, progress=progress))
    result = AblationResult(cols, tuple(m for m in METHODS if m in methods))
    result.write_table(out / "ablation_table.csv")
    with open(out / "ablation_table.txt", "w") as fh:
        fh.write(result.format() + "\n")
    with open(out / "manifest.json", "w") as fh:
        json.dump(run_manifest(cfg, "ablation", {"accelerations": accs, "tiers": tiers,
                                                 "methods": list(result.methods)}), fh, indent=2, sort_keys=True)
    return result
