#!/usr/bin/env python3
"""Compare residual domain information in baseline vs DAT features.

Trains both stages on the standard synthetic experiment, then fits the
fixed linear probe on each model's frozen features and prints the
held-out probe accuracies side by side.
"""

import argparse
import sys

from datforge.evalharness import domain_probe
from datforge.pipeline import build_experiment_data, standard_manifest
from datforge.trainer import run_stage


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args()

    manifest = standard_manifest(args.seed)
    data = build_experiment_data(manifest.corpus, manifest.splits_seed,
                                 with_continual=False)
    specs = {s.stage: s for s in manifest.stages}
    for stage in ("baseline", "dat_only"):
        result = run_stage(stage, data.splits, specs[stage].config)
        probe = domain_probe(result.model, data.splits)
        print(f"{stage}: probe_acc={probe.probe_acc:.3f} "
              f"chance={probe.chance_level:.3f} converged={probe.converged}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
