"""Run a convergence config and print the error table and fitted orders.

    python3 scripts/run_rate_experiment.py configs/m1.cfg [--samples 200]
"""
import argparse
import time

from tamedms.config import load_config
from tamedms.convergence import run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("config")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = load_config(args.config)
    if args.samples:
        cfg.samples = args.samples
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.workers = args.workers
    t0 = time.perf_counter()
    rep = run_experiment(cfg)
    print(rep.table())
    print(f"\n{cfg.samples} samples in {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
