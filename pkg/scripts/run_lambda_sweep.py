#!/usr/bin/env python3
"""Sweep the gradient-reversal weight over the default grid {1e-1..1e-4}.

Writes sweep_report.csv under --out; rows at the reported lambdas
(1e-2, 1e-3) are starred, mirroring the experiment protocol.
"""

import argparse
import sys

from datforge.pipeline import run_sweep, standard_manifest


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="datforge-sweep")
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    args = parser.parse_args()

    manifest = standard_manifest(args.seed, output_dir=args.out)
    rows = run_sweep(manifest, args.out, jobs=args.jobs)
    for r in rows:
        star = " *" if r["reported"] else ""
        print(f"lambda={r['lambda']:g}  clean={r['clean_acc']:.3f}  "
              f"seen={r['seen_acc']:.3f}  unseen={r['unseen_acc']:.3f}{star}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
