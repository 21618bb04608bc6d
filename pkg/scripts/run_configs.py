"""Run the full pipeline on every bundled config and print the headline numbers.

usage: python3 scripts/run_configs.py [--out DIR] [CONFIG ...]
"""

import argparse
import time
from pathlib import Path

from mfturnpike.cli import load_config, run_pipeline

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("configs", nargs="*", type=Path)
    ap.add_argument("--out", type=Path, default=ROOT / "out")
    args = ap.parse_args()
    paths = args.configs or sorted((ROOT / "configs").glob("*.json"))
    for path in paths:
        cfg = load_config(path)
        start = time.perf_counter()
        res = run_pipeline(cfg, args.out / path.stem)
        rep, cert, traj = res["turnpike-report"], res["riccati"], res["solve-dynamic"]
        print(f"{path.stem:24s} N={cfg.N:3d} T={cfg.T:5.1f} K={cfg.K:5d}  method={traj.method:8s} "
              f"beta={cert.beta:.4f} alpha={rep.fitted_alpha:.4f} c={rep.fitted_c:.3g} "
              f"mid={rep.midpoint_deviation():.3e}  {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()
