"""Run the six-method ablation and print the consolidated table.

    python scripts/run_ablation.py --config configs/desk_ablation.yaml --out runs/ablation
"""
import argparse
import json
import logging
import time

from decolearn.config import build_config
from decolearn.experiments import run_ablation


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/desk_ablation.yaml")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="config overrides")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = build_config(args.config, dict(kv.split("=", 1) for kv in args.set))

    def progress(row):
        if row["step"] % 50 == 0:
            logging.info("step %d l_rec %.5f l_reg %.5f", row["step"], row["l_rec"], row["l_reg"])

    t0 = time.time()
    result = run_ablation(cfg, args.out, progress=progress)
    print(result.format())
    for c in result.columns:
        print(c.name, "tau", c.tau, "registration", json.dumps(c.registration), "runtime", json.dumps(c.runtime_s))
    print(f"total {time.time() - t0:.0f} s")


if __name__ == "__main__":
    main()
