"""Scalar LQ benchmark with known solution x(t) = cosh(T - t) / cosh(T).

Solves the same problem with the diagonal sweep, the classical forward-backward
sweep and direct gradient descent, and prints error, cost and wall time for each.
"""

import argparse
import time

import numpy as np

from mfturnpike import ScalarLQ, StationaryTriple
from mfturnpike.dynamics import PMPOptions, direct_gradient_descent, hamiltonian_defect, solve_pmp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=5.0)
    ap.add_argument("--K", type=int, default=2000)
    args = ap.parse_args()
    p, X0 = ScalarLQ(0, 1), np.ones((1, 1))
    z = np.zeros((1, 1))
    runs = {
        "diagonal": lambda: solve_pmp(p, X0, args.T, args.K, triple=StationaryTriple(z, z, z)),
        "sweep": lambda: solve_pmp(p, X0, args.T, args.K, PMPOptions(method="sweep")),
        "gradient": lambda: direct_gradient_descent(p, X0, args.T, args.K),
    }
    for name, fn in runs.items():
        start = time.perf_counter()
        tr = fn()
        wall = time.perf_counter() - start
        err = np.max(np.abs(tr.X[:, 0, 0] - np.cosh(args.T - tr.t) / np.cosh(args.T)))
        print(f"{name:9s} iters={tr.iterations:4d} max_err={err:.2e} cost={tr.cost:.15f} "
              f"H_defect={hamiltonian_defect(p, tr):.1e} {wall:.2f}s")


if __name__ == "__main__":
    main()
