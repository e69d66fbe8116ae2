#!/usr/bin/env python3
"""Residual and closeness scaling of the transformed normal-form solution.

    python scripts/residual_sweep.py --model nf --eps 0.04 0.08 0.16 --out results/nf_sweep.json
"""

import argparse
import json
from pathlib import Path

from nfww.solver import residual_sweep, two_soliton_state


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", choices=("nf", "hz"), default="nf")
    ap.add_argument("--eps", type=float, nargs="+", default=[0.04, 0.08, 0.16])
    ap.add_argument("--residual-T", type=float, default=0.5)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    rep = residual_sweep(args.eps, two_soliton_state(), args.model,
                         residual_T=args.residual_T, horizon=args.horizon)
    print(f"{'eps':>6} {'residual':>10} {'closeness':>10} {'displace':>10} {'time[s]':>8}")
    for row in zip(rep.eps, rep.residual, rep.closeness, rep.displacement, rep.runtime):
        print("{:6.3f} {:10.3e} {:10.3e} {:10.3e} {:8.2f}".format(*row))
    print(f"slopes: residual {rep.residual_slope:.2f}  closeness {rep.closeness_slope:.2f}  "
          f"displacement {rep.displacement_slope:.2f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rep.to_json(), sort_keys=True, indent=2))
        print("wrote", args.out)


if __name__ == "__main__":
    main()
