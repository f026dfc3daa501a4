#!/usr/bin/env python3
"""Scan narrow-barrier spike exponents across width/height scaling choices.

For each (chi, delta) pair on a grid the spike is placed at its crossing
field and the size scan of the traversal action is classified into a
large-N regime.  A detailed per-size breakdown (action and crossover
temperature versus N) is printed for the last grid point.

Example:
    python3 scripts/spike_scan.py --shape rectangular --chis 0.3 0.5 0.7
"""

import argparse
import sys

from spintunnel.analysis import spike_report
from spintunnel.model import SpikeSpec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", default="rectangular",
                    choices=["gaussian", "rectangular", "triangular"])
    ap.add_argument("--chis", type=float, nargs="+", default=[0.3, 0.5, 0.7])
    ap.add_argument("--deltas", type=float, nargs="+",
                    default=[0.65, 0.75, 0.85])
    ap.add_argument("--c", type=float, default=1.0)
    ap.add_argument("--d", type=float, default=1.0)
    ap.add_argument("--m-b", type=float, default=0.6)
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[64, 128, 256, 512])
    args = ap.parse_args(argv)

    print(f"# shape = {args.shape}  m_b = {args.m_b!r}  "
          f"c = {args.c!r}  d = {args.d!r}")
    print(f"{'chi':>5} {'delta':>6} {'gamma_c':>10} {'quantum':>8} "
          f"{'classical':>10} {'mu_est':>8} {'t_c':>10}  regime")

    rep = None
    for chi in args.chis:
        for delta in args.deltas:
            spike = SpikeSpec(c=args.c, d=args.d, chi=chi, delta=delta,
                              m_b=args.m_b, shape=args.shape,
                              n_ref=args.sizes[0])
            rep = spike_report(spike, n_list=tuple(args.sizes))
            print(f"{chi:>5g} {delta:>6g} {rep.gamma_c:>10.6f} "
                  f"{rep.scaling_exponent:>8.3f} "
                  f"{rep.classical_exponent:>10.3f} {rep.mu_est:>8.4f} "
                  f"{rep.t_c_estimate:>10.5f}  {rep.regime}")

    if rep is not None:
        print("\n# size scan at the last grid point")
        print(f"{'n':>6} {'action':>16} {'t_c':>12}")
        for n in rep.n_list:
            print(f"{n:>6} {rep.actions[n]:>16.8f} {rep.t_c_by_n[n]:>12.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
