"""Evaluation over the three test configurations plus the domain-probe diagnostic."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .distort import CorpusSplit, LabeledClip
from .errors import ConfigError
from .gradcore import Optimizer, Parameter, Tape
from .models import DannModel
from .objectives import task_loss
from .trainer import StageResult, domain_indices, features_of

REPORT_COLUMNS = ("stage", "objective", "lambda", "clean_acc", "seen_acc", "unseen_acc")


@dataclass
class ReportRow:
    stage: str
    objective: str | None
    grl_lambda: float | None
    clean_acc: float
    seen_acc: float
    unseen_acc: float


@dataclass
class MetricsReport:
    rows: list[ReportRow]
    metadata: dict = field(default_factory=dict)


@dataclass
class DomainProbeResult:
    probe_acc: float
    chance_level: float
    converged: bool
    losses: list[float] = field(repr=False, default_factory=list)


def evaluate(model: DannModel, test_set: list[LabeledClip],
             feats: list[np.ndarray] | None = None) -> float:
    """Argmax accuracy of the label head on a labeled set."""
    if not test_set:
        raise ValueError("evaluate: empty test set")
    feats = feats if feats is not None else features_of(test_set)
    logits = model.predict_logits(feats)
    labels = np.array([c.label for c in test_set])
    return float(np.mean(np.argmax(logits, axis=1) == labels))


@dataclass
class ProbeConfig:
    epochs: int = 100
    lr: float = 1e-2
    holdout_fraction: float = 0.25
    seed: int = 0
    domain_setting: str = "multi"
    plateau_tol: float = 1e-4


def domain_probe(model: DannModel, splits: CorpusSplit,
                 probe_cfg: ProbeConfig | None = None) -> DomainProbeResult:
    """Train a fresh pool+linear domain classifier on frozen features.

    Lower held-out probe accuracy means more domain-invariant features.
    The extractor is only read, never updated.
    """
    cfg = probe_cfg or ProbeConfig()
    pooled = [model.extractor.extract_features(f).mean(axis=0)
              for f in features_of(splits.S) + features_of(splits.T)]
    x = np.stack(pooled)
    doms = np.concatenate([
        np.zeros(len(splits.S), dtype=np.int64),
        domain_indices(splits.T, cfg.domain_setting),
    ])
    n_dom = 2 if cfg.domain_setting == "binary" else model.cfg.n_domains + 1
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(doms))
    n_hold = max(1, int(len(doms) * cfg.holdout_fraction))
    hold, train = perm[:n_hold], perm[n_hold:]

    d = x.shape[1]
    w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(d), (d, n_dom)), "aux", "probe.W")
    b = Parameter(np.zeros(n_dom), "aux", "probe.b")
    opt = Optimizer([w, b], {"aux": cfg.lr})
    losses = []
    for _ in range(cfg.epochs):
        tape = Tape()
        logits = tape.linear(tape.const(x[train]), tape.param(w), tape.param(b))
        loss = task_loss(tape, logits, doms[train])
        tape.backward(loss)
        opt.step()
        losses.append(float(loss.value))
    tail = losses[-10:]
    converged = (max(tail) - min(tail)) < cfg.plateau_tol
    hold_logits = x[hold] @ w.value + b.value
    acc = float(np.mean(np.argmax(hold_logits, axis=1) == doms[hold]))
    return DomainProbeResult(acc, 1.0 / n_dom, converged, losses)


def config_hash(payload) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def build_report(results: list[StageResult], splits: CorpusSplit,
                 metadata: dict | None = None) -> MetricsReport:
    """Evaluate every trained stage on the shared test membership, in a fixed column order."""
    if not results:
        raise ConfigError("build_report: no stage results")
    cached = {
        "clean": (splits.test_clean, features_of(splits.test_clean)),
        "seen": (splits.test_seen, features_of(splits.test_seen)),
        "unseen": (splits.test_unseen, features_of(splits.test_unseen)),
    }
    rows = []
    for res in results:
        accs = {name: evaluate(res.model, clips, feats)
                for name, (clips, feats) in cached.items()}
        rows.append(ReportRow(res.stage, res.objective, res.grl_lambda,
                              accs["clean"], accs["seen"], accs["unseen"]))
    meta = dict(metadata or {})
    meta.setdefault("created_at", datetime.now(timezone.utc).isoformat())
    return MetricsReport(rows, meta)


def _format_row(r: ReportRow) -> list[str]:
    return [
        r.stage,
        r.objective or "",
        "" if r.grl_lambda is None else f"{r.grl_lambda:g}",
        f"{r.clean_acc:.6f}", f"{r.seen_acc:.6f}", f"{r.unseen_acc:.6f}",
    ]


def write_report_csv(path, report: MetricsReport):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_COLUMNS)
        for r in report.rows:
            writer.writerow(_format_row(r))


def write_report_json(path, report: MetricsReport):
    payload = {
        "metadata": report.metadata,
        "rows": [dict(zip(REPORT_COLUMNS, _format_row(r))) for r in report.rows],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
