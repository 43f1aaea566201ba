#!/usr/bin/env python3
"""Run the standard synthetic experiment (all five stages) for one seed.

Writes report.csv / report.json / training_log.csv / checkpoints under
--out. This is the same configuration the acceptance suite trains.
"""

import argparse
import sys

from datforge.pipeline import run_experiment, standard_manifest


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--out", default="datforge-out")
    args = parser.parse_args()

    manifest = standard_manifest(args.seed, output_dir=args.out)
    report = run_experiment(manifest, args.out)
    width = max(len(r.stage) for r in report.rows)
    print(f"{'stage':<{width}}  clean   seen    unseen")
    for r in report.rows:
        print(f"{r.stage:<{width}}  {r.clean_acc:.3f}  {r.seen_acc:.3f}  {r.unseen_acc:.3f}")
    print(f"artifacts in {args.out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
