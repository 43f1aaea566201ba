"""Command-line entry point: run / distort / sweep / probe.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .distort import (
    ADDITIVE_BANK,
    GAUSSIAN,
    REVERB,
    TRAIN_KINDS,
    TRAIN_PROPORTIONS,
    TRAIN_T60S,
    DistortionSpec,
    apply_spec,
    derive_seed,
    largest_remainder_counts,
    read_wav,
    write_manifest,
    write_wav,
)
from .errors import ConfigError, DatforgeError, FormatError
from .pipeline import ExperimentManifest, run_experiment, run_probe, run_sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _out_root() -> Path:
    return Path(os.environ.get("DATFORGE_OUT", "."))


def _resolve_out(manifest: ExperimentManifest) -> Path:
    out = Path(manifest.output_dir)
    return out if out.is_absolute() else _out_root() / out


def _load_manifest(args) -> ExperimentManifest:
    manifest = ExperimentManifest.from_file(args.manifest)
    if getattr(args, "seed", None) is not None:
        manifest.seed = args.seed
        manifest.stages = [
            dataclasses.replace(s, config=dataclasses.replace(s.config, seed=args.seed))
            for s in manifest.stages
        ]
    return manifest


def _cmd_run(args) -> int:
    manifest = _load_manifest(args)
    out_dir = _resolve_out(manifest)
    if args.dry_run:
        print(f"manifest: {args.manifest}")
        print(f"output_dir: {out_dir}")
        print(f"corpus: {vars(manifest.corpus)}")
        for spec in manifest.stages:
            print(f"stage: {spec.stage} seed={spec.config.seed} "
                  f"objective={spec.config.objective} lambda={spec.config.grl_lambda:g}")
        return EXIT_OK
    report = run_experiment(manifest, out_dir)
    print(f"wrote {out_dir / 'report.csv'} ({len(report.rows)} rows)")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    manifest = _load_manifest(args)
    out_dir = _resolve_out(manifest)
    if args.dry_run:
        sweep = manifest.sweep
        if sweep is None:
            raise ConfigError("manifest has no 'sweep' section")
        print(f"sweep stage={sweep.stage} objective={sweep.objective} "
              f"lambdas={sorted(sweep.lambdas, reverse=True)}")
        return EXIT_OK
    rows = run_sweep(manifest, out_dir, jobs=args.jobs)
    for r in rows:
        marker = " *" if r["reported"] else ""
        print(f"lambda={r['lambda']:g} clean={r['clean_acc']:.3f} "
              f"seen={r['seen_acc']:.3f} unseen={r['unseen_acc']:.3f}{marker}")
    return EXIT_OK


def _cmd_probe(args) -> int:
    manifest = _load_manifest(args)
    out_dir = _resolve_out(manifest)
    rows = run_probe(manifest, out_dir)
    for r in rows:
        print(f"{r['stage']}: probe_acc={r['probe_acc']:.3f} chance={r['chance_level']:.3f}")
    return EXIT_OK


def _cmd_distort(args) -> int:
    in_dir, out_dir = Path(args.in_dir), Path(args.out_dir)
    if not in_dir.is_dir():
        raise ConfigError(f"input directory not found: {in_dir}")
    paths = sorted(in_dir.glob("*.wav"))
    if not paths:
        raise ConfigError(f"no WAV files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.kind == "mixed":
        counts = largest_remainder_counts(len(paths), TRAIN_PROPORTIONS)
        kinds = [k for k, c in zip(TRAIN_KINDS, counts) for _ in range(c)]
    else:
        kinds = [args.kind] * len(paths)
    entries, written = [], 0
    for i, (path, kind) in enumerate(zip(paths, kinds)):
        try:
            clean = read_wav(path)
        except FormatError as exc:
            print(f"warning: skipping {path.name}: {exc}", file=sys.stderr)
            continue
        child = derive_seed(args.seed, i)
        rng = np.random.default_rng(child)
        if kind in (ADDITIVE_BANK, GAUSSIAN):
            spec = DistortionSpec(kind, child, snr_db=args.snr)
        else:
            t60 = args.t60 if args.t60 is not None else float(TRAIN_T60S[int(rng.integers(len(TRAIN_T60S)))])
            spec = DistortionSpec(REVERB, child, ir_id=t60)
        distorted = apply_spec(clean, spec)
        write_wav(out_dir / path.name, distorted)
        entries.append({"id": path.stem, "path": str(out_dir / path.name),
                        "class": None, "domain": None, "distortion": spec.kind,
                        "snr_db": spec.snr_db, "split": "distorted"})
        written += 1
    if written == 0:
        print("error: all input files were skipped", file=sys.stderr)
        return EXIT_RUNTIME
    write_manifest(out_dir / "manifest.jsonl", entries)
    print(f"distorted {written}/{len(paths)} files into {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datforge",
                                     description="Distortion-robust training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_manifest_args(p):
        p.add_argument("--manifest", required=True, help="experiment manifest JSON path")
        p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        p.add_argument("--dry-run", action="store_true",
                       help="validate and print the plan without touching files")

    p_run = sub.add_parser("run", help="run the manifest's stages and write reports")
    add_manifest_args(p_run)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the gradient-reversal weight sweep")
    add_manifest_args(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel sweep cells (sweep only)")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_probe = sub.add_parser("probe", help="measure residual domain info in frozen features")
    add_manifest_args(p_probe)
    p_probe.set_defaults(fn=_cmd_probe)

    p_dist = sub.add_parser("distort", help="apply a distortion recipe to a WAV directory")
    p_dist.add_argument("in_dir")
    p_dist.add_argument("out_dir")
    p_dist.add_argument("--kind", default="mixed",
                        choices=["mixed", ADDITIVE_BANK, GAUSSIAN, REVERB])
    p_dist.add_argument("--snr", type=float, default=15.0, help="SNR in dB for additive kinds")
    p_dist.add_argument("--t60", type=float, default=None, help="reverb decay in seconds")
    p_dist.add_argument("--seed", type=int, default=0)
    p_dist.set_defaults(fn=_cmd_distort)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DatforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure, keep the message human-readable
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
