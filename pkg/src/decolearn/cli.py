"""Command-line entry point: ``decolearn <command> [flags]``.

Every config key is also a flag (``--train.iterations 50``).  Values resolve
as flags > ``--config`` file > defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, dclt
from .baselines import TVConfig, pretrain_registration, select_tau, tv_reconstruct, zero_filled
from .config import ConfigError, RunConfig, build_config, config_from_manifest, replace, run_manifest
from .data import load_split, read_manifest, save_dataset, synthesize_dataset, write_pgm
from .metrics import MetricReport
from .trainer import load_recon, load_reg, reconstruct, train

log = logging.getLogger("decolearn")

RECON_METHODS = ("network", "zero_filled", "tv")


class CLIError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file")
    g = p.add_argument_group("config keys")
    for key, default in RunConfig().flat().items():
        g.add_argument(f"--{key}", dest=key, default=None, metavar=type(default).__name__.upper())


def _config(args) -> RunConfig:
    keys = RunConfig().flat()
    return build_config(args.config, {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None})


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


# commands ---------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    cfg = _config(args)
    ds = synthesize_dataset(cfg.dataset)
    save_dataset(ds, args.out, run_manifest(cfg, "synth-data"))
    print(f"wrote {sum(len(v) for v in ds.splits.values())} pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    if args.manifest:
        m = json.loads(Path(args.manifest).read_text())
        m = m.get("run", m)  # accept a checkpoint manifest too
        cfg = config_from_manifest(m)
        data = args.data or m.get("data")
    else:
        cfg = _config(args)
        data = args.data
    if args.mode:
        cfg.train.mode = args.mode
        cfg.train.validate()
    if not data:
        raise CLIError("train needs --data (or a manifest that records it)")
    train_pairs = load_split(data, "train")
    val_pairs = load_split(data, "val")
    manifest = run_manifest(cfg, "train", {"data": str(data)})
    out = Path(args.out)
    _dump(out / "run_manifest.json", manifest)
    pre = None
    if cfg.train.mode == "a2a_pretrained_reg":
        if args.pretrained_reg:
            pre = load_reg(args.pretrained_reg)
        else:
            pre = pretrain_registration(train_pairs, cfg.loss.reg(), cfg.model.reg_levels, cfg.model.reg_width,
                                        iterations=cfg.train.pretrain_iterations,
                                        batch_size=cfg.train.batch_size, lr=cfg.train.lr_reg,
                                        seed=cfg.train.seed, init_seed=cfg.model.seed + 1)

    def progress(row):
        if args.log_every and row["step"] % args.log_every == 0:
            log.info("step %d  l_rec %.6f  l_reg %.6f", row["step"], row["l_rec"], row["l_reg"])

    train(train_pairs, cfg.train, cfg.model, cfg.loss.rec(), cfg.loss.reg(), out, val_pairs=val_pairs,
          pretrained_reg=pre, manifest=manifest, log=progress)
    meta = json.loads((out / "final" / "manifest.json").read_text())
    print(f"trained {cfg.train.mode} for {cfg.train.iterations} steps; val PSNR {meta.get('val_psnr')}")
    return 0


def _reconstruct_images(args, pairs) -> tuple[np.ndarray, dict]:
    if args.method == "network":
        if not args.checkpoint:
            raise CLIError("--method network needs --checkpoint")
        return reconstruct(load_recon(args.checkpoint), pairs), {"checkpoint": str(args.checkpoint)}
    if args.method == "zero_filled":
        return np.stack([zero_filled(p.y_r, p.model_r) for p in pairs]), {}
    cfg = _config(args)
    tau = cfg.tv.tau
    extra = {}
    if args.select_tau:
        tau, scores = select_tau(load_split(args.data, "val"), cfg.tv)
        extra["tau_scores"] = {str(k): v for k, v in scores.items()}
    tv_cfg = TVConfig(**{**cfg.tv.__dict__, "tau": tau})
    extra["tau"] = tau
    return np.stack([tv_reconstruct(p.y_r, p.model_r, tv_cfg) for p in pairs]), extra


def cmd_reconstruct(args) -> int:
    pairs = load_split(args.data, args.split)
    if not pairs:
        raise CLIError(f"split {args.split!r} is empty")
    x, extra = _reconstruct_images(args, pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dclt.save(out / "recon.dclt", x.astype(np.complex128))
    if not args.no_pgm:
        vmax = float(np.abs(x).max())
        for i, p in enumerate(pairs):
            write_pgm(out / f"{p.sample_id}.pgm", x[i], vmax)
    _dump(out / "manifest.json", {"kind": "reconstruction", "method": args.method, "data": str(args.data),
                                  "split": args.split, "samples": [p.sample_id for p in pairs],
                                  "version": __version__, **extra})
    print(f"wrote {len(pairs)} images to {out}")
    return 0


def cmd_evaluate(args) -> int:
    pairs = load_split(args.data, args.split)
    images = dclt.load_array(Path(args.images) / "recon.dclt" if Path(args.images).is_dir() else args.images)
    if len(images) != len(pairs):
        raise CLIError(f"{len(images)} images for {len(pairs)} samples")
    spec = read_manifest(args.data)["spec"]
    from .experiments import tier_sigma
    from .data import DatasetSpec
    sig = tier_sigma(DatasetSpec(**spec))
    report = MetricReport()
    for i, p in enumerate(pairs):
        if not p.has_oracle:
            raise CLIError(f"sample {p.sample_id} has no oracle image to evaluate against")
        report.add(p.sample_id, args.method, spec["acceleration"], sig, images[i], p.oracle_x_r)
    report.write_csv(args.out)
    for m, s in report.summary().items():
        print(f"{m}: PSNR {s['psnr_mean']:.2f} +/- {s['psnr_std']:.2f} dB  SSIM {s['ssim_mean']:.4f}  (n={s['n']})")
    return 0


def cmd_ablation(args) -> int:
    from .experiments import run_ablation
    cfg = _config(args)

    def progress(row):
        if args.log_every and row["step"] % args.log_every == 0:
            log.info("step %d  l_rec %.6f  l_reg %.6f", row["step"], row["l_rec"], row["l_reg"])

    result = run_ablation(cfg, args.out, args.accelerations, args.tiers, progress=progress)
    print(result.format())
    return 0


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="decolearn", description="Deformation-compensated self-supervised reconstruction")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="synthesize a phantom measurement-pair dataset")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train in any mode")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("decolearn", "a2a_unregistered", "a2a_oracle", "a2a_pretrained_reg"))
    p.add_argument("--manifest", help="rerun from a recorded run manifest")
    p.add_argument("--pretrained-reg", help="checkpoint whose registration network to freeze")
    p.add_argument("--log-every", type=int, default=50)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct a split (network uses the checkpoint's reconstruction net only)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--method", choices=RECON_METHODS, default="network")
    p.add_argument("--checkpoint")
    p.add_argument("--select-tau", action="store_true", help="grid-search tv.tau on the val split")
    p.add_argument("--no-pgm", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="PSNR/SSIM report CSV for reconstructed images")
    p.add_argument("--data", required=True)
    p.add_argument("--images", required=True, help="recon.dclt or the reconstruct output directory")
    p.add_argument("--split", default="test")
    p.add_argument("--method", default="network")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="all six methods on one dataset, consolidated table")
    p.add_argument("--out", required=True)
    p.add_argument("--accelerations", type=float, nargs="*")
    p.add_argument("--tiers", nargs="*", choices=("strong", "medium", "weak", "none", "real_pair"))
    p.add_argument("--log-every", type=int, default=100)
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablation)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits with status 2 on unknown flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, FileNotFoundError, KeyError, ValueError, dclt.DCLTError) as e:
        print(f"decolearn {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
