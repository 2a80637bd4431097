#!/usr/bin/env python3
"""Five-seed convergence experiment on the single-bus arbitrage sample:
generate data once, train each seed, plot the evaluation-return traces with
their median, and print how much of the myopic-to-oracle gap the final median
recovers. Seeds run in parallel worker processes."""
import argparse
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
CONFIG = ROOT / "configs" / "arbitrage1.json"


def run_seed(seed: int) -> str:
    cmd = [sys.executable, "-m", "branchgrid.cli", "train",
           "--config", str(CONFIG), "--seed", str(seed)]
    subprocess.run(cmd, check=True)
    return str(ROOT / "runs" / "arbitrage1" / f"trainlog_seed{seed}.csv")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    parser.add_argument("--workers", type=int, default=2)
    parser.add_argument("--days", type=int, default=50)
    args = parser.parse_args()

    data = ROOT / "runs" / "arbitrage1" / "data.csv"
    subprocess.run([sys.executable, "-m", "branchgrid.cli", "gen-data",
                    "--config", str(CONFIG), "--days", str(args.days),
                    "--out", str(data)], check=True)

    with ProcessPoolExecutor(max_workers=args.workers) as pool:
        logs = list(pool.map(run_seed, args.seeds))

    out = ROOT / "runs" / "arbitrage1" / "convergence.svg"
    subprocess.run([sys.executable, "-m", "branchgrid.cli", "plot",
                    "--out", str(out), *logs], check=True)

    from branchgrid.cli import read_trainlog_curve
    curves = [read_trainlog_curve(p) for p in logs]
    finals = [c[-1][1] for c in curves]
    print(f"final evaluation returns per seed: {np.round(finals, 2).tolist()}")
    print(f"median: {np.median(finals):.2f}; plot: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
