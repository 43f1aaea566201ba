"""Two-stage training: continual denoising pretraining, then adversarial fine-tuning.

One adversarial step builds a single tape holding the task loss on the clean
batch and the domain loss on clean+noisy pooled features routed through the
gradient reversal node, so a single backward realizes all three per-group
updates: the label head descends the task loss, the domain head descends the
domain loss, and the extractor descends task_loss - lambda * domain_loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import objectives
from .distort import ContinualClip, CorpusSplit, LabeledClip, TargetClip, derive_seed, featurize
from .errors import ConfigError
from .gradcore import (
    DOMAIN_CLASSIFIER,
    FEATURE_EXTRACTOR,
    LABEL_PREDICTOR,
    Optimizer,
    Parameter,
    Tape,
)
from .models import DannModel, ModelConfig

STAGES = ("baseline", "oracle", "continual_only", "dat_only", "continual_plus_dat")
DAT_STAGES = ("dat_only", "continual_plus_dat")
CONTINUAL_STAGES = ("continual_only", "continual_plus_dat")
OBJECTIVES = ("bce", "ce", "entropy")
DEFAULT_LAMBDA_GRID = (1e-1, 1e-2, 1e-3, 1e-4)
REPORTED_LAMBDAS = (1e-2, 1e-3)

# paper-scale learning rates, selectable via TrainConfig(paper_scale=True);
# desk-scale defaults are scaled up because the models here are tiny
PAPER_ETA, PAPER_ALPHA, PAPER_BETA = 1e-5, 1e-4, 1e-4


@dataclass
class TrainConfig:
    eta: float = 1e-4    # feature extractor lr; heads move 10x faster, as in Eq. (1)-(2)'s source
    alpha: float = 1e-3  # label predictor lr
    beta: float = 1e-2   # domain classifier lr; a fast head stays a strong adversary
    grl_lambda: float = 1e-2
    objective: str = "ce"
    domain_setting: str = "multi"
    epochs: int = 80
    continual_epochs: int = 20
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "adam"  # "sgd" exists to make the update equations literally testable
    mask_fraction: float = 0.15  # frame masking rate for clean continual clips
    continual_lr: float = 1e-3  # pretraining phase moves the extractor faster than fine-tuning

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}")
        if self.domain_setting not in ("binary", "multi"):
            raise ConfigError(f"unknown domain_setting {self.domain_setting!r}")
        if (self.objective == "bce") != (self.domain_setting == "binary"):
            raise ConfigError(
                f"objective {self.objective!r} requires domain_setting "
                f"{'binary' if self.objective == 'bce' else 'multi'!r}"
            )
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def paper_scale(cls, **kw) -> "TrainConfig":
        return cls(eta=PAPER_ETA, alpha=PAPER_ALPHA, beta=PAPER_BETA, **kw)

    def lr_by_group(self) -> dict[str, float]:
        return {FEATURE_EXTRACTOR: self.eta, LABEL_PREDICTOR: self.alpha,
                DOMAIN_CLASSIFIER: self.beta}


@dataclass
class LogRow:
    stage: str
    epoch: int
    step: int
    loss_y: float
    loss_d: float | None
    grl_lambda: float | None
    objective: str | None
    seed: int


def write_training_log(path, rows: list[LogRow]):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["stage", "epoch", "step", "L_y", "L_d", "lambda", "objective", "seed"])
        for r in rows:
            writer.writerow([
                r.stage, r.epoch, r.step, f"{r.loss_y:.10g}",
                "" if r.loss_d is None else f"{r.loss_d:.10g}",
                "" if r.grl_lambda is None else f"{r.grl_lambda:g}",
                r.objective or "", r.seed,
            ])


# ---------------------------------------------------------------------------
# feature caches
# ---------------------------------------------------------------------------

def features_of(clips) -> list[np.ndarray]:
    return [featurize(c.waveform) for c in clips]


def domain_indices(clips: list[TargetClip], setting: str) -> np.ndarray:
    doms = np.array([c.domain for c in clips], dtype=np.int64)
    return (doms > 0).astype(np.int64) if setting == "binary" else doms


def _one_hot(indices: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((indices.size, n))
    out[np.arange(indices.size), indices] = 1.0
    return out


# ---------------------------------------------------------------------------
# adversarial step
# ---------------------------------------------------------------------------

def build_domain_loss(tape: Tape, model: DannModel, pooled, domains: np.ndarray,
                      cfg: TrainConfig, adversarial: bool = True):
    """Domain loss over pooled features; reversal sits on the feature path only.

    Under the entropy objective the domain head itself is still trained by
    cross entropy on true domain labels (an entropy-trained head would
    collapse), while the extractor receives the reversed entropy gradient
    through a gradient-stopped copy of the head.
    """
    lam = cfg.grl_lambda if adversarial else None
    if cfg.objective == "bce":
        logits = model.domain_head.forward_pooled(tape, pooled, lam)
        return objectives.bce_domain_loss(tape, tape.sigmoid(logits), domains.astype(float))
    n_dom = model.cfg.domain_out_dim
    onehot = _one_hot(domains, n_dom)
    if cfg.objective == "ce":
        logits = model.domain_head.forward_pooled(tape, pooled, lam)
        return objectives.ce_domain_loss(tape, tape.softmax_rows(logits), onehot)
    # entropy: CE through a feature-detached path trains the head; the reversed
    # entropy term reaches the extractor through a head-detached path
    head_logits = model.domain_head.forward_pooled(tape, tape.stop_gradient(pooled), None)
    ce_loss = objectives.ce_domain_loss(tape, tape.softmax_rows(head_logits), onehot)
    if lam is None:
        return ce_loss
    adv_logits = model.domain_head.forward_pooled(tape, pooled, lam, detach_head=True)
    ent_loss = objectives.entropy_domain_loss(tape, tape.softmax_rows(adv_logits))
    return tape.add(ce_loss, ent_loss)


def dat_step(model: DannModel, clean_feats: list[np.ndarray], clean_labels: np.ndarray,
             noisy_feats: list[np.ndarray], noisy_domains: np.ndarray,
             cfg: TrainConfig, opt: Optimizer) -> tuple[float, float]:
    """One combined update; returns (task loss, domain loss) values."""
    if not clean_feats or not noisy_feats:
        raise ValueError("dat_step: empty batch")
    tape = Tape()
    pooled_c = model.forward_pooled_features(tape, clean_feats)
    pooled_n = model.forward_pooled_features(tape, noisy_feats)
    logits_y = model.label_head.forward_pooled(tape, pooled_c)
    loss_y = objectives.task_loss(tape, logits_y, clean_labels)

    pooled_all = tape.concat_rows([pooled_c, pooled_n])
    domains = np.concatenate([np.zeros(len(clean_feats), dtype=np.int64), noisy_domains])
    loss_d = build_domain_loss(tape, model, pooled_all, domains, cfg)

    total = tape.add(loss_y, loss_d)
    tape.backward(total)
    opt.step()
    return float(loss_y.value), float(loss_d.value)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def train_supervised(data: list[LabeledClip], model: DannModel, cfg: TrainConfig,
                     stage: str = "baseline") -> list[LogRow]:
    """Minimize the task loss only; the domain head is untouched."""
    feats = features_of(data)
    labels = np.array([c.label for c in data], dtype=np.int64)
    opt = Optimizer(model.group(FEATURE_EXTRACTOR) + model.group(LABEL_PREDICTOR),
                    cfg.lr_by_group(), sgd=cfg.optimizer == "sgd")
    rows, step = [], 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, 10, epoch))
        losses = []
        for batch in _batches(len(data), cfg.batch_size, rng):
            tape = Tape()
            pooled = model.forward_pooled_features(tape, [feats[i] for i in batch])
            loss = objectives.task_loss(
                tape, model.label_head.forward_pooled(tape, pooled), labels[batch]
            )
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.value))
            step += 1
        rows.append(LogRow(stage, epoch, step, float(np.mean(losses)), None, None, None, cfg.seed))
    return rows


def continual_pretrain(model: DannModel, continual_set: list[ContinualClip],
                       cfg: TrainConfig, stage: str = "continual_only") -> list[LogRow]:
    """Denoising proxy pretraining of the extractor alone.

    Distorted clips must predict the clean clip's input features through a
    throwaway linear decoder; clean clips are an identity task under random
    frame masking.  Only extractor parameters survive this stage.
    """
    if cfg.continual_epochs == 0:
        return []
    inputs = [featurize(c.waveform) for c in continual_set]
    targets = [featurize(c.clean) for c in continual_set]
    is_clean = [c.kind == "clean" for c in continual_set]
    mcfg = model.cfg
    dec_rng = np.random.default_rng(derive_seed(cfg.seed, 20))
    dec_w = Parameter(dec_rng.normal(0.0, 1.0 / np.sqrt(mcfg.feature_dim),
                                     (mcfg.feature_dim, mcfg.input_dim)), "aux", "dec.W")
    # bias starts at the per-band target mean so the decoder fits residuals,
    # not the raw log-feature offset
    dec_b = Parameter(np.concatenate(targets, axis=0).mean(axis=0), "aux", "dec.b")
    opt = Optimizer(model.group(FEATURE_EXTRACTOR) + [dec_w, dec_b],
                    {**cfg.lr_by_group(), FEATURE_EXTRACTOR: cfg.continual_lr,
                     "aux": cfg.continual_lr}, sgd=cfg.optimizer == "sgd")
    rows, step = [], 0
    floor = np.log(1e-8)
    for epoch in range(cfg.continual_epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, 21, epoch))
        losses = []
        for batch in _batches(len(continual_set), cfg.batch_size, rng):
            xs = []
            for i in batch:
                x = inputs[i]
                if is_clean[i]:
                    mask = rng.random(x.shape[0]) < cfg.mask_fraction
                    x = x.copy()
                    x[mask] = floor
                xs.append(x)
            target = np.concatenate([targets[i] for i in batch], axis=0)
            tape = Tape()
            h = model.extractor.forward(tape, tape.const(np.concatenate(xs, axis=0)))
            pred = tape.linear(h, tape.param(dec_w), tape.param(dec_b))
            diff = tape.sub(pred, tape.const(target))
            loss = tape.mean(tape.mul(diff, diff))
            tape.backward(loss)
            opt.step()
            losses.append(float(loss.value))
            step += 1
        rows.append(LogRow(stage, epoch, step, float(np.mean(losses)), None, None, None, cfg.seed))
    return rows


def continual_heldout_loss(model: DannModel, heldout: list[ContinualClip]) -> float:
    """Mean squared feature distance on distorted/clean pairs, decoder-free proxy.

    Used by tests to track that pretraining brings distorted features toward
    the clean ones.
    """
    total, n = 0.0, 0
    for c in heldout:
        zn = model.extractor.extract_features(featurize(c.waveform))
        zc = model.extractor.extract_features(featurize(c.clean))
        total += float(np.mean((zn - zc) ** 2))
        n += 1
    return total / max(n, 1)


def train_dat(splits: CorpusSplit, model: DannModel, cfg: TrainConfig,
              stage: str = "dat_only") -> list[LogRow]:
    s_feats = features_of(splits.S)
    s_labels = np.array([c.label for c in splits.S], dtype=np.int64)
    t_feats = features_of(splits.T)
    t_domains = domain_indices(splits.T, cfg.domain_setting)
    opt = Optimizer(model.parameters(), cfg.lr_by_group(), sgd=cfg.optimizer == "sgd")
    rows, step = [], 0
    steps_per_epoch = max(min(len(splits.S), len(splits.T)) // cfg.batch_size, 1)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, 30, epoch))
        ly_all, ld_all = [], []
        for k in range(steps_per_epoch):
            cb = rng.choice(len(splits.S), size=min(cfg.batch_size, len(splits.S)), replace=False)
            nb = rng.choice(len(splits.T), size=min(cfg.batch_size, len(splits.T)), replace=False)
            ly, ld = dat_step(model, [s_feats[i] for i in cb], s_labels[cb],
                              [t_feats[i] for i in nb], t_domains[nb], cfg, opt)
            ly_all.append(ly)
            ld_all.append(ld)
            step += 1
        rows.append(LogRow(stage, epoch, step, float(np.mean(ly_all)), float(np.mean(ld_all)),
                           cfg.grl_lambda, cfg.objective, cfg.seed))
    return rows


@dataclass
class StageResult:
    stage: str
    objective: str | None
    grl_lambda: float | None
    model: DannModel
    log: list[LogRow] = field(repr=False, default_factory=list)
    continual_checkpoint: object = None  # path set by run_stage when applicable


def run_stage(stage: str, splits: CorpusSplit, cfg: TrainConfig,
              continual_set: list[ContinualClip] | None = None,
              model_cfg: ModelConfig | None = None,
              checkpoint_dir=None) -> StageResult:
    """Train one experiment row from a fresh, seed-determined model."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if stage in CONTINUAL_STAGES and continual_set is None:
        raise ConfigError(f"stage {stage!r} requires a continual training set")
    mcfg = model_cfg or ModelConfig(domain_setting=cfg.domain_setting)
    if mcfg.domain_setting != cfg.domain_setting:
        raise ConfigError("model and trainer disagree on domain_setting")
    model = DannModel(mcfg, derive_seed(cfg.seed, 0))
    log: list[LogRow] = []
    ckpt_path = None
    if stage in CONTINUAL_STAGES:
        log += continual_pretrain(model, continual_set, cfg, stage)
        if checkpoint_dir is not None:
            ckpt_path = str(checkpoint_dir / f"{stage}_continual.ckpt")
            model.save(ckpt_path)
            model.load(ckpt_path)  # DAT/supervised phase starts from the stored bytes
    if stage == "baseline" or stage == "continual_only":
        log += train_supervised(splits.S, model, cfg, stage)
    elif stage == "oracle":
        data = splits.S + splits.oracle_labeled_target("oracle")
        log += train_supervised(data, model, cfg, stage)
    else:
        log += train_dat(splits, model, cfg, stage)
    is_dat = stage in DAT_STAGES
    return StageResult(stage, cfg.objective if is_dat else None,
                       cfg.grl_lambda if is_dat else None, model, log, ckpt_path)


def lambda_sweep(splits: CorpusSplit, cfg: TrainConfig, lambdas=DEFAULT_LAMBDA_GRID,
                 stage: str = "dat_only",
                 continual_set: list[ContinualClip] | None = None) -> list[tuple[float, StageResult]]:
    """Controlled sweep: identical seed per lambda; results sorted by lambda descending."""
    if not lambdas:
        raise ConfigError("lambda_sweep: empty lambda list")
    if any(l <= 0 for l in lambdas):
        raise ConfigError(f"lambda_sweep: all lambdas must be > 0, got {list(lambdas)}")
    out = []
    for lam in sorted(lambdas, reverse=True):
        out.append((lam, run_stage(stage, splits, replace(cfg, grl_lambda=lam), continual_set)))
    return out
