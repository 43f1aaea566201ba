"""The adversarial triad: feature extractor, label predictor, domain classifier.

The extractor is a position-wise MLP over framed log-band features; both
heads mean-pool over time and apply one linear layer.  The domain head
optionally routes its input through the gradient reversal node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .gradcore import (
    DOMAIN_CLASSIFIER,
    FEATURE_EXTRACTOR,
    LABEL_PREDICTOR,
    Node,
    Parameter,
    Tape,
)

CKPT_HEADER = "DATFORGE-CKPT-1"


@dataclass
class ModelConfig:
    input_dim: int = 64
    hidden_dim: int = 64
    feature_dim: int = 32
    n_classes: int = 4
    n_domains: int = 3  # distortion types K; domain classes are K+1
    domain_setting: str = "multi"  # "binary" -> single sigmoid logit

    def __post_init__(self):
        if self.domain_setting not in ("binary", "multi"):
            raise ConfigError(f"unknown domain_setting {self.domain_setting!r}")

    @property
    def domain_out_dim(self) -> int:
        return 1 if self.domain_setting == "binary" else self.n_domains + 1


def _init_linear(rng, din, dout, group, name):
    w = Parameter(rng.normal(0.0, 1.0 / np.sqrt(din), size=(din, dout)), group, f"{name}.W")
    b = Parameter(np.zeros(dout), group, f"{name}.b")
    return w, b


class FeatureExtractor:
    """Position-wise MLP: input_dim -> hidden -> hidden -> feature_dim, relu between."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.w1, self.b1 = _init_linear(rng, cfg.input_dim, cfg.hidden_dim, FEATURE_EXTRACTOR, "f.l1")
        self.w2, self.b2 = _init_linear(rng, cfg.hidden_dim, cfg.hidden_dim, FEATURE_EXTRACTOR, "f.l2")
        self.w3, self.b3 = _init_linear(rng, cfg.hidden_dim, cfg.feature_dim, FEATURE_EXTRACTOR, "f.l3")

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def forward(self, tape: Tape, x: Node) -> Node:
        if x.value.ndim != 2 or x.value.shape[1] != self.cfg.input_dim:
            raise ConfigError(
                f"extractor expects frames of dim {self.cfg.input_dim}, got {x.value.shape}"
            )
        h = tape.relu(tape.linear(x, tape.param(self.w1), tape.param(self.b1)))
        h = tape.relu(tape.linear(h, tape.param(self.w2), tape.param(self.b2)))
        return tape.linear(h, tape.param(self.w3), tape.param(self.b3))

    def extract_features(self, frames: np.ndarray) -> np.ndarray:
        """Convenience forward on one T x F example, outside any training tape."""
        tape = Tape()
        return self.forward(tape, tape.const(frames)).value


class LabelPredictor:
    """Mean-pool over time, then one linear layer to class logits."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.w, self.b = _init_linear(rng, cfg.feature_dim, cfg.n_classes, LABEL_PREDICTOR, "y.out")

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward_pooled(self, tape: Tape, pooled: Node) -> Node:
        return tape.linear(pooled, tape.param(self.w), tape.param(self.b))

    def predict_label(self, z: np.ndarray) -> np.ndarray:
        """Logits for one T x D feature sequence."""
        tape = Tape()
        pooled = tape.mean_over_rows(tape.const(z))
        return self.forward_pooled(tape, pooled).value[0]


class DomainClassifier:
    """Gradient-reversed mean-pooled features into one linear layer.

    ``lam=None`` is probe mode: same forward, no reversal recorded.
    """

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        self.w, self.b = _init_linear(
            rng, cfg.feature_dim, cfg.domain_out_dim, DOMAIN_CLASSIFIER, "d.out"
        )

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]

    def forward_pooled(self, tape: Tape, pooled: Node, lam: float | None,
                       detach_head: bool = False) -> Node:
        if lam is not None:
            pooled = tape.grad_reverse(pooled, lam)
        w, b = tape.param(self.w), tape.param(self.b)
        if detach_head:
            w, b = tape.stop_gradient(w), tape.stop_gradient(b)
        return tape.linear(pooled, w, b)

    def classify_domain(self, z: np.ndarray, lam: float | None = None) -> np.ndarray:
        """Domain logits for one T x D feature sequence."""
        tape = Tape()
        pooled = tape.mean_over_rows(tape.const(z))
        return self.forward_pooled(tape, pooled, lam).value[0]


class DannModel:
    """The full triad plus parameter-group bookkeeping."""

    def __init__(self, cfg: ModelConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.extractor = FeatureExtractor(cfg, rng)
        self.label_head = LabelPredictor(cfg, rng)
        self.domain_head = DomainClassifier(cfg, rng)

    def parameters(self) -> list[Parameter]:
        return (
            self.extractor.parameters()
            + self.label_head.parameters()
            + self.domain_head.parameters()
        )

    def group(self, name: str) -> list[Parameter]:
        return [p for p in self.parameters() if p.group == name]

    def forward_pooled_features(self, tape: Tape, feats: list[np.ndarray]) -> Node:
        """Run the extractor over a batch of T_i x F examples; return B x D pooled features."""
        stacked = tape.const(np.concatenate(feats, axis=0))
        h = self.extractor.forward(tape, stacked)
        return tape.mean_pool_segments(h, [f.shape[0] for f in feats])

    def predict_logits(self, feats: list[np.ndarray]) -> np.ndarray:
        tape = Tape()
        pooled = self.forward_pooled_features(tape, feats)
        return self.label_head.forward_pooled(tape, pooled).value

    # ---- checkpointing ----------------------------------------------

    def save(self, path):
        save_checkpoint(path, self.parameters())

    def load(self, path):
        entries = load_checkpoint(path)
        by_name = {p.name: p for p in self.parameters()}
        for name, group, value in entries:
            if name not in by_name:
                raise FormatError(f"checkpoint parameter {name!r} unknown to this model")
            p = by_name[name]
            if p.group != group or p.value.shape != value.shape:
                raise ConfigError(
                    f"checkpoint mismatch for {name!r}: "
                    f"{group}/{value.shape} vs {p.group}/{p.value.shape}"
                )
            p.value[...] = value


def save_checkpoint(path, params: list[Parameter]):
    """Portable text checkpoint; float64 values serialized losslessly as hex."""
    with open(path, "w") as f:
        f.write(CKPT_HEADER + "\n")
        for p in params:
            shape = " ".join(str(s) for s in p.value.shape)
            f.write(f"param {p.name} {p.group} {shape}\n")
            f.write(" ".join(v.hex() for v in p.value.ravel()) + "\n")


def load_checkpoint(path) -> list[tuple[str, str, np.ndarray]]:
    with open(path) as f:
        header = f.readline().rstrip("\n")
        if header != CKPT_HEADER:
            raise FormatError(f"bad checkpoint header {header!r}, expected {CKPT_HEADER!r}")
        entries = []
        while True:
            meta = f.readline()
            if not meta:
                break
            parts = meta.split()
            if len(parts) < 3 or parts[0] != "param":
                raise FormatError(f"bad checkpoint entry line: {meta!r}")
            name, group = parts[1], parts[2]
            shape = tuple(int(s) for s in parts[3:])
            values = np.array([float.fromhex(v) for v in f.readline().split()])
            if values.size != int(np.prod(shape)):
                raise FormatError(f"checkpoint value count mismatch for {name!r}")
            entries.append((name, group, values.reshape(shape)))
    return entries
