"""Manifest-driven experiment orchestration shared by the CLI and the test suite."""

from __future__ import annotations

import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .distort import (
    CorpusSplit,
    WavNoiseBank,
    build_continual_set,
    build_splits,
    derive_seed,
    manifest_entries,
    synth_corpus,
    write_manifest,
)
from .errors import ConfigError
from .evalharness import (
    MetricsReport,
    ProbeConfig,
    build_report,
    config_hash,
    domain_probe,
    write_report_csv,
    write_report_json,
)
from .trainer import (
    CONTINUAL_STAGES,
    DEFAULT_LAMBDA_GRID,
    REPORTED_LAMBDAS,
    STAGES,
    StageResult,
    TrainConfig,
    lambda_sweep,
    run_stage,
    write_training_log,
)

RUN_MARKER = "RUN-INCOMPLETE"


def _check_keys(obj: dict, allowed: set[str], where: str):
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown manifest key(s) in {where}: {sorted(unknown)}")


@dataclass
class CorpusSpec:
    type: str = "synthetic"
    classes: int = 4
    n_per_class: int = 100
    test_n_per_class: int = 25
    continual_n_per_class: int = 50
    seed: int = 1
    noise_wav_dir: str | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "CorpusSpec":
        _check_keys(obj, {f for f in cls.__dataclass_fields__}, "corpus")
        spec = cls(**obj)
        if spec.type != "synthetic":
            raise ConfigError(f"unsupported corpus type {spec.type!r}")
        return spec


@dataclass
class StageSpec:
    stage: str
    config: TrainConfig

    @classmethod
    def from_dict(cls, obj: dict, default_seed: int) -> "StageSpec":
        allowed = {"stage", "objective", "lambda", "domain_setting", "epochs",
                   "continual_epochs", "batch_size", "eta", "alpha", "beta",
                   "seed", "optimizer"}
        _check_keys(obj, allowed, "stages[]")
        if "stage" not in obj:
            raise ConfigError("each stage entry needs a 'stage' key")
        stage = obj["stage"]
        if stage not in STAGES:
            raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
        kw = {k: v for k, v in obj.items() if k not in ("stage", "lambda")}
        if "lambda" in obj:
            kw["grl_lambda"] = obj["lambda"]
        kw.setdefault("seed", default_seed)
        if kw.get("objective") == "bce":
            kw.setdefault("domain_setting", "binary")
        return cls(stage, TrainConfig(**kw))


@dataclass
class SweepSpec:
    lambdas: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    stage: str = "dat_only"
    objective: str = "ce"

    @classmethod
    def from_dict(cls, obj: dict) -> "SweepSpec":
        _check_keys(obj, {f for f in cls.__dataclass_fields__}, "sweep")
        return cls(**obj)


@dataclass
class ExperimentManifest:
    corpus: CorpusSpec
    stages: list[StageSpec]
    splits_seed: int = 7
    seed: int = 1
    sweep: SweepSpec | None = None
    output_dir: str = "datforge-out"

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentManifest":
        _check_keys(obj, {"corpus", "stages", "splits_seed", "seed", "sweep", "output_dir"},
                    "manifest")
        if "corpus" not in obj or "stages" not in obj:
            raise ConfigError("manifest requires 'corpus' and 'stages'")
        seed = obj.get("seed", 1)
        return cls(
            corpus=CorpusSpec.from_dict(obj["corpus"]),
            stages=[StageSpec.from_dict(s, seed) for s in obj["stages"]],
            splits_seed=obj.get("splits_seed", 7),
            seed=seed,
            sweep=SweepSpec.from_dict(obj["sweep"]) if obj.get("sweep") else None,
            output_dir=obj.get("output_dir", "datforge-out"),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentManifest":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"manifest file not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path} is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"manifest {path} must hold a JSON object")
        return cls.from_dict(obj)


def standard_manifest(seed: int, output_dir: str = "datforge-out") -> ExperimentManifest:
    """The standard synthetic experiment: C=4, 400 train clips, all five stages.

    This is the configuration behind the trend and probe acceptance criteria;
    tests and the example scripts share it so there is exactly one definition.
    """
    # supervised stages converge by 50 epochs; the pure DAT stage needs the
    # longer schedule for invariance, while the combined stage works best with
    # a light adversarial touch on top of the pretrained features
    stages = [
        {"stage": "baseline", "epochs": 50},
        {"stage": "oracle", "epochs": 50},
        {"stage": "continual_only", "epochs": 50},
        {"stage": "dat_only", "epochs": 80, "lambda": 1e-2},
        {"stage": "continual_plus_dat", "epochs": 50, "lambda": 1e-3},
    ]
    return ExperimentManifest.from_dict({
        "seed": seed,
        "splits_seed": 7,
        "corpus": {"classes": 4, "n_per_class": 100, "test_n_per_class": 25,
                   "continual_n_per_class": 50, "seed": seed},
        "stages": stages,
        "sweep": {"lambdas": list(DEFAULT_LAMBDA_GRID), "stage": "dat_only"},
        "output_dir": output_dir,
    })


@dataclass
class ExperimentData:
    splits: CorpusSplit
    continual_set: list


def build_experiment_data(corpus: CorpusSpec, splits_seed: int,
                          with_continual: bool = True) -> ExperimentData:
    bank = WavNoiseBank(corpus.noise_wav_dir) if corpus.noise_wav_dir else None
    train = synth_corpus(corpus.n_per_class, corpus.classes, corpus.seed)
    test = synth_corpus(corpus.test_n_per_class, corpus.classes,
                        derive_seed(corpus.seed, 101), id_prefix="test")
    splits = build_splits(train, splits_seed, test_corpus=test, noise_bank=bank)
    continual = []
    if with_continual:
        cont_corpus = synth_corpus(corpus.continual_n_per_class, corpus.classes,
                                   derive_seed(corpus.seed, 202), id_prefix="cont")
        continual = build_continual_set([c.waveform for c in cont_corpus],
                                        derive_seed(splits_seed, 7), bank)
    return ExperimentData(splits, continual)


def run_stages(manifest: ExperimentManifest, data: ExperimentData,
               checkpoint_dir=None) -> list[StageResult]:
    results = []
    for spec in manifest.stages:
        results.append(run_stage(spec.stage, data.splits, spec.config,
                                 continual_set=data.continual_set or None,
                                 checkpoint_dir=checkpoint_dir))
    return results


def run_experiment(manifest: ExperimentManifest, out_dir: Path) -> MetricsReport:
    """Full pipeline: corpus -> stages -> report files under ``out_dir``."""
    out_dir = Path(out_dir)
    marker = out_dir / RUN_MARKER
    if marker.exists():  # previous interrupted run: start clean
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker.write_text("running\n")

    needs_continual = any(s.stage in CONTINUAL_STAGES for s in manifest.stages)
    data = build_experiment_data(manifest.corpus, manifest.splits_seed, needs_continual)
    write_manifest(out_dir / "corpus_manifest.jsonl", manifest_entries(data.splits))

    results = run_stages(manifest, data, checkpoint_dir=out_dir)
    log_rows = [row for res in results for row in res.log]
    write_training_log(out_dir / "training_log.csv", log_rows)
    for res in results:
        res.model.save(out_dir / f"{res.stage}.ckpt")

    meta = {"seed": manifest.seed, "splits_seed": manifest.splits_seed,
            "config_hash": config_hash(_manifest_payload(manifest))}
    report = build_report(results, data.splits, meta)
    write_report_csv(out_dir / "report.csv", report)
    write_report_json(out_dir / "report.json", report)
    (out_dir / "manifest.json").write_text(
        json.dumps(_manifest_payload(manifest), indent=2, sort_keys=True) + "\n"
    )
    marker.unlink()
    return report


def _manifest_payload(manifest: ExperimentManifest) -> dict:
    payload = {
        "corpus": vars(manifest.corpus),
        "splits_seed": manifest.splits_seed,
        "seed": manifest.seed,
        "output_dir": manifest.output_dir,
        "stages": [{"stage": s.stage, **vars(s.config)} for s in manifest.stages],
    }
    if manifest.sweep:
        payload["sweep"] = vars(manifest.sweep)
    return payload


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_cell(args):
    splits, cfg, lam, stage, continual_set = args
    result = run_stage(stage, splits, replace(cfg, grl_lambda=lam), continual_set or None)
    report = build_report([result], splits)
    row = report.rows[0]
    return lam, (row.clean_acc, row.seen_acc, row.unseen_acc)


def run_sweep(manifest: ExperimentManifest, out_dir: Path, jobs: int = 1) -> list[dict]:
    if manifest.sweep is None:
        raise ConfigError("manifest has no 'sweep' section")
    sweep = manifest.sweep
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = TrainConfig(seed=manifest.seed, objective=sweep.objective,
                      domain_setting="binary" if sweep.objective == "bce" else "multi")
    needs_continual = sweep.stage in CONTINUAL_STAGES
    data = build_experiment_data(manifest.corpus, manifest.splits_seed, needs_continual)
    lams = sorted(sweep.lambdas, reverse=True)
    if any(l <= 0 for l in lams):
        raise ConfigError(f"sweep lambdas must be > 0, got {lams}")
    cells = [(data.splits, cfg, lam, sweep.stage, data.continual_set) for lam in lams]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cell_results = list(pool.map(_sweep_cell, cells))
    else:
        cell_results = [_sweep_cell(c) for c in cells]
    rows = []
    for lam, (clean, seen, unseen) in cell_results:
        rows.append({"lambda": lam, "reported": lam in REPORTED_LAMBDAS,
                     "clean_acc": clean, "seen_acc": seen, "unseen_acc": unseen})
    _write_sweep_csv(out_dir / "sweep_report.csv", rows)
    return rows


def _write_sweep_csv(path, rows: list[dict]):
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["lambda", "reported", "clean_acc", "seen_acc", "unseen_acc"])
        for r in rows:
            writer.writerow([f"{r['lambda']:g}", str(r["reported"]).lower(),
                             f"{r['clean_acc']:.6f}", f"{r['seen_acc']:.6f}",
                             f"{r['unseen_acc']:.6f}"])


def run_probe(manifest: ExperimentManifest, out_dir: Path) -> list[dict]:
    """Train the manifest's stages, then measure residual domain information per stage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    needs_continual = any(s.stage in CONTINUAL_STAGES for s in manifest.stages)
    data = build_experiment_data(manifest.corpus, manifest.splits_seed, needs_continual)
    results = run_stages(manifest, data)
    rows = []
    for res in results:
        probe = domain_probe(res.model, data.splits, ProbeConfig(seed=manifest.seed))
        rows.append({"stage": res.stage, "objective": res.objective,
                     "lambda": res.grl_lambda, "probe_acc": probe.probe_acc,
                     "chance_level": probe.chance_level, "converged": probe.converged})
    (out_dir / "probe.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
