"""Mini-batch training: cross-entropy, penalties, projection, distillation.

An epoch is ceil(N / batch_size) ratio-resampled mini-batches (the malware
ratio forces resampling, so there is no pass-over-a-shuffled-corpus notion).
Updates are plain SGD with momentum; when a hard scope is configured the
projection runs after every step, so every checkpoint satisfies the scope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import constraints as cons
from .constraints import ConstraintConfig
from .dataset import MALWARE, Dataset, sample_batch_indices, to_csr
from .errors import ParameterError, TrainingError
from .network import (
    HeadKind,
    InitMode,
    LayerSpec,
    ModelParams,
    backward,
    forward,
    init,
    predict_batch,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 1000
    malware_ratio: float = 0.3
    learning_rate: float = 0.01
    momentum: float = 0.9
    dropout_rate: float = 0.5
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ParameterError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be at least 1")
        if not (self.learning_rate > 0):
            raise ParameterError("learning_rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ParameterError("momentum must be in [0,1)")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ParameterError("dropout_rate must be in [0,1)")
        if not (0.0 <= self.malware_ratio <= 1.0):
            raise ParameterError("malware_ratio must be in [0,1]")


@dataclass(frozen=True)
class DistillConfig:
    temperature: float
    teacher_train: TrainConfig
    student_train: TrainConfig

    def __post_init__(self) -> None:
        if not (self.temperature > 0):
            raise ParameterError("distillation temperature must be positive")

    @classmethod
    def at_temperature(
        cls,
        base: TrainConfig,
        temperature: float,
        learning_rate: float | None = None,
    ) -> "DistillConfig":
        """Derive both stages from one config.

        The cross-entropy gradient at temperature T carries a 1/T factor, so
        plain SGD barely moves at T=100; unless given explicitly, the stage
        learning rate is scaled by T to keep the effective step size of the
        temperature-scaled logits equal to the base config's.
        """
        lr = base.learning_rate * temperature if learning_rate is None else learning_rate
        stage = replace(base, learning_rate=lr)
        return cls(temperature, stage, stage)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    penalty: float
    negative_mass: float
    train_accuracy: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def lines(self) -> list[str]:
        return [
            f"epoch {e.epoch} loss {e.loss:.6g} penalty {e.penalty:.6g}"
            f" negmass {e.negative_mass:.6g} train_acc {e.train_accuracy:.6g}"
            for e in self.epochs
        ]

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def loss(output, target, head: HeadKind) -> float:
    """Mean cross-entropy of head outputs against hard or soft targets.

    Sigmoid heads take p(malware) values and scalar targets in [0,1];
    softmax heads take probability pairs (already at the head's temperature)
    and two-class target distributions.
    """
    tiny = 1e-300
    if head.variant == "sigmoid_single":
        p = np.asarray(output, dtype=np.float64).reshape(-1)
        t = np.asarray(target, dtype=np.float64).reshape(-1)
        if p.shape != t.shape:
            raise ParameterError("output and target sizes differ")
        if ((t < 0) | (t > 1)).any():
            raise ParameterError("sigmoid targets must lie in [0,1]")
        return float(
            -np.mean(t * np.log(np.maximum(p, tiny)) + (1 - t) * np.log(np.maximum(1 - p, tiny)))
        )
    q = np.asarray(output, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(target, dtype=np.float64).reshape(-1, 2)
    if q.shape != y.shape:
        raise ParameterError("output and target sizes differ")
    if (y < 0).any() or not np.allclose(y.sum(axis=1), 1.0, atol=1e-9):
        raise ParameterError("softmax targets must be distributions over two classes")
    return float(-np.mean(np.sum(y * np.log(np.maximum(q, tiny)), axis=1)))


def hard_targets(labels: np.ndarray, head: HeadKind) -> np.ndarray:
    """Encode 0/1 labels for a head: scalars for sigmoid, one-hot pairs for softmax."""
    labels = np.asarray(labels)
    if head.variant == "sigmoid_single":
        return (labels == MALWARE).astype(np.float64)
    out = np.zeros((len(labels), 2), dtype=np.float64)
    out[np.arange(len(labels)), (labels == MALWARE).astype(int)] = 1.0
    return out


def _batch_objective(model, trace, cfg: TrainConfig):
    """Penalty value plus gradient hooks for the configured placement."""
    cc = cfg.constraint
    if not cc.has_penalty:
        return 0.0, None, None
    if cc.placement == "weights":
        report, wgrads = cons.weight_penalty(model, cc)
        return report.total, None, wgrads
    if cc.placement == "activations":
        pen, pregrads = cons.activation_penalty(trace, cc)
        return pen, pregrads, None
    pen, wgrads = cons.presum_penalty_batch(model, trace, cc)
    return pen, None, wgrads


def train(
    d: Dataset,
    arch: list[LayerSpec],
    head: HeadKind,
    cfg: TrainConfig,
    soft_targets: np.ndarray | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Train a fresh model on the dataset; deterministic per cfg.seed.

    `soft_targets`, when given, must align with d.samples and replaces the
    hard labels in the loss (used by the distillation student); batch
    composition still follows the hard labels.
    """
    labels = d.labels()
    if (labels == MALWARE).sum() == 0 or (labels != MALWARE).sum() == 0:
        raise ParameterError("training data needs at least one sample of each label")
    if soft_targets is not None and len(soft_targets) != len(d.samples):
        raise ParameterError("soft_targets must align with the dataset")
    if arch[0].in_dim != d.space.n_features:
        raise ParameterError(
            f"architecture expects {arch[0].in_dim} features, dataset has {d.space.n_features}"
        )
    cc = cfg.constraint
    model = init(arch, head, cc.init, feature_space=d.space)
    mask = d.space.manifest_mask if cc.hard_scope == "manifest_monotone" else None
    if cc.hard_scope != "none":
        cons.clamp_inplace(model, cc.hard_scope, mask)

    ss = np.random.SeedSequence(cfg.seed)
    batch_rng, dropout_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    vel_w = [np.zeros_like(l.weights) for l in model.layers]
    vel_b = [np.zeros_like(l.bias) for l in model.layers]
    steps_per_epoch = max(1, math.ceil(len(d.samples) / cfg.batch_size))
    full_targets = soft_targets if soft_targets is not None else hard_targets(labels, head)
    x_all = to_csr(d.samples, d.space.n_features)
    log = TrainLog()

    for epoch in range(cfg.epochs):
        ep_loss = 0.0
        ep_pen = 0.0
        for step in range(steps_per_epoch):
            idx = sample_batch_indices(d, cfg.batch_size, cfg.malware_ratio, batch_rng)
            xb = to_csr([d.samples[i] for i in idx], d.space.n_features)
            dropout = (cfg.dropout_rate, dropout_rng) if cfg.dropout_rate > 0 else None
            trace = forward(model, xb, dropout=dropout)
            target = full_targets[idx]
            ce = loss(trace.probs, target, head)
            pen, pre_grads, w_pen_grads = _batch_objective(model, trace, cfg)
            if not math.isfinite(ce + pen):
                raise TrainingError(
                    f"non-finite objective at epoch {epoch} step {step}:"
                    f" loss={ce} penalty={pen}"
                )
            grads = backward(
                model, trace, target, with_input_grad=False, extra_preact_grads=pre_grads
            )
            if w_pen_grads is not None:
                for gw, extra in zip(grads.weights, w_pen_grads):
                    gw += extra
            for i, layer in enumerate(model.layers):
                vel_w[i] = cfg.momentum * vel_w[i] - cfg.learning_rate * grads.weights[i]
                vel_b[i] = cfg.momentum * vel_b[i] - cfg.learning_rate * grads.biases[i]
                layer.weights += vel_w[i]
                layer.bias += vel_b[i]
            if cc.hard_scope != "none":
                cons.clamp_inplace(model, cc.hard_scope, mask)
            ep_loss += ce
            ep_pen += pen
        acc = float(np.mean(predict_batch(model, x_all) == labels))
        log.epochs.append(
            EpochStats(
                epoch,
                ep_loss / steps_per_epoch,
                ep_pen / steps_per_epoch,
                cons.negative_mass(model),
                acc,
            )
        )
    return model, log


def soft_labels(teacher: ModelParams, d: Dataset) -> np.ndarray:
    """Teacher's class distribution at its head temperature for every sample."""
    if teacher.head.variant != "softmax_pair":
        raise ParameterError("soft labels need a softmax head")
    return forward(teacher, to_csr(d.samples, d.space.n_features)).probs


def train_distilled(
    d: Dataset,
    arch: list[LayerSpec],
    cfg: DistillConfig,
) -> tuple[ModelParams, ModelParams, TrainLog, TrainLog]:
    """Two-stage distillation at one temperature.

    Stage 1 trains the teacher on hard labels at T; stage 2 extracts the
    teacher's soft label distribution at T once, then trains a fresh
    same-architecture student against those targets, also at T. Prediction
    happens at temperature 1 regardless.
    """
    if arch[-1].out_dim != 2:
        raise ParameterError("distillation needs a two-unit output layer (softmax head)")
    head = HeadKind("softmax_pair", cfg.temperature)
    teacher, teacher_log = train(d, arch, head, cfg.teacher_train)
    targets = soft_labels(teacher, d)
    student, student_log = train(d, arch, head, cfg.student_train, soft_targets=targets)
    return teacher, student, teacher_log, student_log
