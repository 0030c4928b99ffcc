"""Fix/perp exponents of the SO(3) axis cocycle over a few (omega0, omega1) pairs.

    python scripts/dichotomy_scan.py --samples 300 --nmax 100000

With the golden base angle the axis of h(x) on Y tilts only by
atan(omega1 x / omega0), so Fix stays nearly invariant along returns and the
fix-mode exponent approaches gamma slowly.
"""
import argparse

import numpy as np

from lsvgroup.dynamics import MapParams
from lsvgroup.ensemble import simulate
from lsvgroup.groups import CocycleSpec, fix_space, golden_angle, project_dichotomy
from lsvgroup.observables import ObservableSpec
from lsvgroup.stats import diffusion_exponent

PAIRS = [(golden_angle(), 6.0), (1.0, 3.0), (0.5, 3.0), (0.5, 5.0), (1.0, 6.0), (0.7, 4.0),
         (0.3, 3.0), (golden_angle(), 10.0)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=300)
    ap.add_argument("--nmin", type=int, default=1000)
    ap.add_argument("--nmax", type=int, default=100_000)
    ap.add_argument("--gamma", type=float, default=0.7)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    grid = np.unique(np.round(np.geomspace(a.nmin, a.nmax, 5)).astype(np.int64))
    v = np.array([1.0, 0.0, 1.0])
    print(f"{'omega0':>8}{'omega1':>8}{'fix':>8}{'perp':>8}")
    for w0, w1 in PAIRS:
        spec = CocycleSpec.so3_axis(w0, w1)
        fs = fix_space(spec.h0())
        row = []
        for k, mode in enumerate(("fix", "perp")):
            obs = ObservableSpec("constant", project_dichotomy(v, fs, mode))
            ens = simulate(MapParams(a.gamma), spec, obs, grid, a.samples, a.seed + k, g0="haar")
            row.append(diffusion_exponent(ens)[0])
        print(f"{w0:8.3f}{w1:8.2f}{row[0]:8.3f}{row[1]:8.3f}", flush=True)


if __name__ == "__main__":
    main()
