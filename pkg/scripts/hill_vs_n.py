"""Hill index of |phi_n| in the fix mode of the dichotomy cocycle, for several n.

    python scripts/hill_vs_n.py --samples 3000 --grid 100000,316228,1000000

The top order statistics of |phi_n| sit close to n (a single excursion
contributes at most about n), so the estimate is biased upward at moderate n.
"""
import argparse

from lsvgroup.checks import dichotomy_observables
from lsvgroup.dynamics import MapParams
from lsvgroup.ensemble import simulate
from lsvgroup import stats


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=3000)
    ap.add_argument("--grid", default="100000,316228,1000000")
    ap.add_argument("--seed", type=int, default=18)
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    grid = [int(x) for x in a.grid.split(",")]
    cocycle, _, obs = dichotomy_observables()
    ens = simulate(MapParams(0.7), cocycle, obs["fix"], grid, a.samples, a.seed, g0="haar",
                   threads=a.threads)
    for n in grid:
        h = stats.stable_index(ens.at(n), min_samples=min(a.samples, 10_000))
        lo, hi = h["band"]
        print(f"n={n:>8}  alpha={h['alpha']:.3f}  band=[{lo:.3f}, {hi:.3f}]  target={1 / 0.7:.3f}")


if __name__ == "__main__":
    main()
