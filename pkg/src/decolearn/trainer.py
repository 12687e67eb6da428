"""Alternating training of the reconstruction and registration networks.

Each iteration takes one mini-batch of measurement pairs and

1. updates the reconstruction parameters from the reconstruction loss with
   the registration output held fixed, then
2. (``decolearn`` mode only) recomputes the reconstructions with the new
   parameters and updates the registration parameters from the
   registration loss.

The ablation modes differ only in how the warp ``T`` is obtained:
identity (``a2a_unregistered``), the synthesis-time field
(``a2a_oracle``), or a frozen pre-trained registration network applied to
the zero-filled pairs (``a2a_pretrained_reg``).
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dclt, losses, mri
from . import tensor as T
from .deformation import invert_field, warp
from .losses import RecLossConfig, RegLossConfig
from .models import (RegNetParams, ReconNetParams, init_recon, init_reg, recon_forward,
                     reg_forward)
from .mri import MeasurementPair
from .optim import AdamState, adam_update
from .tensor import Tensor

MODES = ("decolearn", "a2a_unregistered", "a2a_oracle", "a2a_pretrained_reg")
LOG_COLUMNS = ("step", "l_rec", "l_cross", "l_self", "l_reg", "wall_ms")


@dataclass
class ModelConfig:
    recon_blocks: int = 4
    recon_width: int = 32
    reg_levels: int = 3
    reg_width: int = 16
    seed: int = 0
    recon_zero_tail: bool = True

    def validate(self) -> None:
        if min(self.recon_blocks, self.recon_width, self.reg_levels, self.reg_width) < 1:
            raise ValueError("network depths and widths must be >= 1")


@dataclass
class TrainConfig:
    iterations: int = 1000
    batch_size: int = 4
    lr_rec: float = 5e-4
    lr_reg: float = 5e-4
    seed: int = 0
    checkpoint_every: int = 0  # 0: final checkpoint only
    mode: str = "decolearn"
    record_wall_time: bool = True
    pretrain_iterations: int = 300  # registration pre-training for a2a_pretrained_reg

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class ModelState:
    recon: ReconNetParams
    reg: RegNetParams
    adam_rec: AdamState
    adam_reg: AdamState
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    order: list = field(default_factory=list)  # remaining sample order of the current epoch


def init_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> ModelState:
    recon = init_recon(model_cfg.recon_blocks, model_cfg.recon_width, seed=model_cfg.seed,
                       zero_tail=model_cfg.recon_zero_tail)
    reg = init_reg(model_cfg.reg_levels, model_cfg.reg_width, seed=model_cfg.seed + 1)
    rng = np.random.default_rng(train_cfg.seed)
    return ModelState(recon, reg, AdamState(lr=train_cfg.lr_rec), AdamState(lr=train_cfg.lr_reg),
                      rng_state=rng.bit_generator.state)


# batches ------------------------------------------------------------------

@dataclass
class Batch:
    pairs: list
    y_r: Tensor
    y_m: Tensor
    zf_r: Tensor
    zf_m: Tensor
    field_rm: np.ndarray | None = None  # fixed warps for oracle / pre-registered modes
    field_mr: np.ndarray | None = None

    @property
    def models_r(self):
        return [p.model_r for p in self.pairs]

    @property
    def models_m(self):
        return [p.model_m for p in self.pairs]


def make_batch(pairs: list[MeasurementPair], fixed_fields: dict | None = None) -> Batch:
    y_r = Tensor.from_complex(np.stack([p.y_r for p in pairs]))
    y_m = Tensor.from_complex(np.stack([p.y_m for p in pairs]))
    with T.no_grad():
        zf_r = mri.pseudoinverse([p.model_r for p in pairs], y_r)
        zf_m = mri.pseudoinverse([p.model_m for p in pairs], y_m)
    b = Batch(list(pairs), y_r, y_m, zf_r, zf_m)
    if fixed_fields is not None:
        b.field_rm = np.stack([fixed_fields[p.sample_id][0] for p in pairs])
        b.field_mr = np.stack([fixed_fields[p.sample_id][1] for p in pairs])
    return b


def oracle_fields(pairs: list[MeasurementPair]) -> dict:
    """sample_id -> (v_rm, v_mr) from the stored synthesis field and its inverse."""
    out = {}
    for p in pairs:
        if p.oracle_field is None:
            raise ValueError(f"pair {p.sample_id!r} has no oracle field; a2a_oracle needs synthetic deformations")
        out[p.sample_id] = (p.oracle_field, invert_field(p.oracle_field))
    return out


def preregistered_fields(reg: RegNetParams, pairs: list[MeasurementPair], batch_size: int = 8) -> dict:
    """Fields from a frozen registration network applied to the zero-filled pairs."""
    out = {}
    for i in range(0, len(pairs), batch_size):
        b = make_batch(pairs[i: i + batch_size])
        with T.no_grad():
            v = _both_fields(reg, b.zf_r, b.zf_m)
        n = len(b.pairs)
        for j, p in enumerate(b.pairs):
            out[p.sample_id] = (v.data[n + j], v.data[j])
    return out


def _both_fields(reg: RegNetParams, x_r: Tensor, x_m: Tensor) -> Tensor:
    """[v_mr; v_rm] from one registration pass over the doubled batch."""
    moving = T.concat([x_m, x_r], axis=0)
    reference = T.concat([x_r, x_m], axis=0)
    return reg_forward(reg, T.as_complex(moving), T.as_complex(reference))


def _split(t: Tensor, n: int) -> tuple[Tensor, Tensor]:
    a, b = t[:n], t[n:]
    return a, b


# one iteration ---------------------------------------------------------------

def _check_finite(params: dict, what: str) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise FloatingPointError(f"{what} parameter {name!r} became non-finite")


def _zero_grads(params: dict) -> None:
    for p in params.values():
        p.grad = None


def train_step(batch: Batch, state: ModelState, cfg: TrainConfig,
               rec_cfg: RecLossConfig, reg_cfg: RegLossConfig) -> dict:
    n = len(batch.pairs)
    zf = T.as_complex(T.concat([batch.zf_r, batch.zf_m], axis=0))

    # reconstruction update, registration held fixed
    _zero_grads(state.recon.params)
    x_hat = recon_forward(state.recon, zf)
    x_r, x_m = _split(x_hat, n)
    if cfg.mode == "a2a_unregistered":
        tx_r, tx_m = x_r, x_m
    else:
        if cfg.mode == "decolearn":
            with T.no_grad():
                v = _both_fields(state.reg, x_r.detach(), x_m.detach()).data
            v_mr, v_rm = v[:n], v[n:]
        else:
            v_rm, v_mr = batch.field_rm, batch.field_mr
        tx_r, tx_m = warp(x_r, v_rm), warp(x_m, v_mr)
    l_cross, l_self = losses.rec_loss_terms(batch.y_r, batch.y_m, batch.models_r, batch.models_m,
                                            x_r, x_m, tx_r, tx_m, rec_cfg)
    l_rec = l_cross if rec_cfg.gamma == 0 else l_cross + l_self * rec_cfg.gamma
    T.backward(l_rec, inputs=list(state.recon.params.values()))
    adam_update(state.adam_rec, state.recon.params)
    _check_finite(state.recon.params, "reconstruction")

    l_reg = math.nan
    if cfg.mode == "decolearn":
        # registration update on reconstructions from the freshly updated network
        with T.no_grad():
            x_hat = recon_forward(state.recon, zf)
        x_r, x_m = _split(x_hat.detach(), n)
        _zero_grads(state.reg.params)
        v = _both_fields(state.reg, x_r, x_m)
        v_mr, v_rm = _split(v, n)
        tx_r, tx_m = warp(x_r, v_rm), warp(x_m, v_mr)
        loss = losses.reg_loss(x_r, x_m, tx_r, tx_m, v_rm, v_mr, reg_cfg)
        T.backward(loss, inputs=list(state.reg.params.values()))
        adam_update(state.adam_reg, state.reg.params)
        _check_finite(state.reg.params, "registration")
        l_reg = loss.item()

    state.step += 1
    return {"step": state.step, "l_rec": l_rec.item(), "l_cross": l_cross.item(),
            "l_self": float(l_self.item()), "l_reg": l_reg}


def reg_step(batch: Batch, reg: RegNetParams, adam: AdamState, reg_cfg: RegLossConfig) -> float:
    """One registration-only update on the zero-filled images (pre-training)."""
    n = len(batch.pairs)
    _zero_grads(reg.params)
    x_r, x_m = batch.zf_r, batch.zf_m
    v = _both_fields(reg, x_r, x_m)
    v_mr, v_rm = _split(v, n)
    loss = losses.reg_loss(x_r, x_m, warp(x_r, v_rm), warp(x_m, v_mr), v_rm, v_mr, reg_cfg)
    T.backward(loss, inputs=list(reg.params.values()))
    adam_update(adam, reg.params)
    _check_finite(reg.params, "registration")
    return loss.item()


# epochs, logging, checkpoints ---------------------------------------------

def next_indices(state: ModelState, n_samples: int, batch_size: int) -> list[int]:
    """Pop the next mini-batch from a per-epoch seeded shuffle."""
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    out = []
    while len(out) < min(batch_size, n_samples):
        if not state.order:
            state.order = [int(i) for i in rng.permutation(n_samples)]
        take = min(batch_size - len(out), len(state.order))
        out.extend(state.order[:take])
        state.order = state.order[take:]
        if out and not state.order:
            break  # an epoch boundary ends the batch
    state.rng_state = rng.bit_generator.state
    return out


def train(pairs: list[MeasurementPair], cfg: TrainConfig, model_cfg: ModelConfig | None = None,
          rec_cfg: RecLossConfig | None = None, reg_cfg: RegLossConfig | None = None,
          out_dir: str | os.PathLike | None = None, val_pairs: list[MeasurementPair] | None = None,
          pretrained_reg: RegNetParams | None = None, state: ModelState | None = None,
          manifest: dict | None = None, log=None) -> tuple[ModelState, list[dict]]:
    """Run ``cfg.iterations`` alternating updates; optionally write metrics.csv and checkpoints."""
    cfg.validate()
    if not pairs:
        raise ValueError("training dataset is empty")
    model_cfg = model_cfg or ModelConfig()
    rec_cfg = rec_cfg or RecLossConfig()
    reg_cfg = reg_cfg or RegLossConfig()
    rec_cfg.validate()
    reg_cfg.validate()
    state = state or init_state(model_cfg, cfg)

    fixed = None
    if cfg.mode == "a2a_oracle":
        fixed = oracle_fields(pairs)
    elif cfg.mode == "a2a_pretrained_reg":
        if pretrained_reg is None:
            raise ValueError("a2a_pretrained_reg needs a pre-trained registration network")
        state.reg = pretrained_reg
        fixed = preregistered_fields(pretrained_reg, pairs)

    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "metrics.csv", "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
    rows = []
    try:
        while state.step < cfg.iterations:
            idx = next_indices(state, len(pairs), cfg.batch_size)
            batch = make_batch([pairs[i] for i in idx], fixed)
            t0 = time.perf_counter()
            row = train_step(batch, state, cfg, rec_cfg, reg_cfg)
            row["wall_ms"] = round((time.perf_counter() - t0) * 1e3, 3) if cfg.record_wall_time else 0.0
            rows.append(row)
            if writer is not None:
                writer.writerow({k: _fmt(row[k]) for k in LOG_COLUMNS})
            if log is not None:
                log(row)
            if out is not None and cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt-{state.step:06d}", state, model_cfg, cfg, manifest)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "final", state, model_cfg, cfg, manifest,
                        extra={"val_psnr": validation_psnr(state.recon, val_pairs) if val_pairs else None})
    return state, rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def reconstruct(recon: ReconNetParams, pairs: list[MeasurementPair], side: str = "r",
                batch_size: int = 8) -> np.ndarray:
    """Apply the reconstruction network to one side of each pair; returns complex (N, H, W)."""
    out = []
    for i in range(0, len(pairs), batch_size):
        b = make_batch(pairs[i: i + batch_size])
        with T.no_grad():
            x = recon_forward(recon, b.zf_r if side == "r" else b.zf_m)
        out.append(x.to_complex())
    return np.concatenate(out)


def validation_psnr(recon: ReconNetParams, pairs: list[MeasurementPair]) -> float | None:
    from .metrics import psnr
    pairs = [p for p in pairs if p.has_oracle]
    if not pairs:
        return None
    x = reconstruct(recon, pairs)
    return float(np.mean([psnr(x[i], p.oracle_x_r) for i, p in enumerate(pairs)]))


def save_checkpoint(path: str | os.PathLike, state: ModelState, model_cfg: ModelConfig,
                    cfg: TrainConfig, manifest: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    for sub in ("recon", "reg", "optim"):
        (path / sub).mkdir(parents=True, exist_ok=True)
    for name, p in state.recon.params.items():
        dclt.save(path / "recon" / f"{name}.dclt", p.data)
    for name, p in state.reg.params.items():
        dclt.save(path / "reg" / f"{name}.dclt", p.data)
    for tag, adam in (("rec", state.adam_rec), ("reg", state.adam_reg)):
        for name in adam.m:
            dclt.save(path / "optim" / f"{tag}.m.{name}.dclt", adam.m[name])
            dclt.save(path / "optim" / f"{tag}.v.{name}.dclt", adam.v[name])
    meta = {
        "kind": "checkpoint", "step": state.step,
        "recon": state.recon.hyper(), "reg": state.reg.hyper(),
        "recon_params": list(state.recon.params), "reg_params": list(state.reg.params),
        "adam": {tag: {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step,
                       "params": list(a.m)}
                 for tag, a in (("rec", state.adam_rec), ("reg", state.adam_reg))},
        "rng_state": state.rng_state, "order": state.order,
        "model_config": asdict(model_cfg), "train_config": asdict(cfg),
        "run": manifest or {}, **(extra or {}),
    }
    with open(path / "manifest.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
    return path


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _load_params(d: Path, names) -> dict:
    from collections import OrderedDict
    out = OrderedDict()
    for name in names:
        f = d / f"{name}.dclt"
        if not f.exists():
            raise FileNotFoundError(f"checkpoint is missing parameter file {f}")
        out[name] = Tensor(dclt.load_array(f).copy(), requires_grad=True, name=name)
    return out


def load_recon(path: str | os.PathLike) -> ReconNetParams:
    """Reconstruction network only; registration files are never opened."""
    path = Path(path)
    meta = json.loads((path / "manifest.json").read_text())
    return ReconNetParams(meta["recon"]["blocks"], meta["recon"]["width"],
                          _load_params(path / "recon", meta["recon_params"]))


def load_reg(path: str | os.PathLike) -> RegNetParams:
    path = Path(path)
    meta = json.loads((path / "manifest.json").read_text())
    return RegNetParams(meta["reg"]["levels"], meta["reg"]["width"],
                        _load_params(path / "reg", meta["reg_params"]))


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelState, dict]:
    path = Path(path)
    meta = json.loads((path / "manifest.json").read_text())
    adams = {}
    for tag in ("rec", "reg"):
        a = meta["adam"][tag]
        st = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        for name in a["params"]:
            st.m[name] = dclt.load_array(path / "optim" / f"{tag}.m.{name}.dclt").copy()
            st.v[name] = dclt.load_array(path / "optim" / f"{tag}.v.{name}.dclt").copy()
        adams[tag] = st
    rs = meta["rng_state"]
    state = ModelState(load_recon(path), load_reg(path), adams["rec"], adams["reg"],
                       step=meta["step"], rng_state=rs, order=list(meta["order"]))
    return state, meta
