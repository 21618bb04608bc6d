"""Midpoint distance to the stationary point as the horizon grows (scalar LQ, a = 0, b = 1).

The distance should shrink like exp(-T / 2); the last column is the ratio to that rate.
"""

import argparse

import numpy as np

from mfturnpike import ScalarLQ, StationaryTriple
from mfturnpike.dynamics import solve_pmp
from mfturnpike.turnpike import turnpike_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--x0", type=float, default=1.0)
    ap.add_argument("--steps-per-unit", type=int, default=200)
    ap.add_argument("horizons", nargs="*", type=float, default=[5, 10, 20, 40])
    args = ap.parse_args()
    p = ScalarLQ(0, 1)
    z = np.zeros((1, 1))
    tri = StationaryTriple(z, z, z)
    print(f"{'T':>6s} {'alpha':>8s} {'c':>8s} {'midpoint':>11s} {'mid*e^(T/2)':>12s}")
    for T in args.horizons:
        tr = solve_pmp(p, np.full((1, 1), args.x0), T, int(T * args.steps_per_unit), triple=tri)
        rep = turnpike_report(p, tr, tri)
        mid = rep.midpoint_deviation()
        print(f"{T:6.1f} {rep.fitted_alpha:8.4f} {rep.fitted_c:8.4f} {mid:11.3e} {mid * np.exp(T / 2):12.4f}")


if __name__ == "__main__":
    main()
