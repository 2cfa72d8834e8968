"""Defense mechanics: negative-value penalties, projections, and diagnostics.

Two penalty shapes act only on negative values (zero on the non-negative
half-line): an L1-style absolute penalty and an L2-style squared penalty.
They can be placed on weights, on hidden pre-activations, or on the
individual product terms inside each matrix multiply ("pre-sum"), which
catches negative contributions that cancel inside an innocent-looking sum.

Hard enforcement is a projection (clamp at zero) applied either to every
weight or to everything except first-layer rows of code features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureSpace
from .errors import ParameterError
from .network import ForwardTrace, InitMode, ModelParams

HARD_SCOPES = ("none", "all_weights", "manifest_monotone")
PLACEMENTS = ("weights", "activations", "presum")


@dataclass(frozen=True)
class ConstraintConfig:
    hard_nonneg: bool = False
    hard_scope: str = "none"
    n1_coeff: float = 0.0
    n2_coeff: float = 0.0
    placement: str = "weights"
    init: InitMode = field(default_factory=InitMode)

    def __post_init__(self) -> None:
        if self.hard_scope not in HARD_SCOPES:
            raise ParameterError(f"unknown hard_scope {self.hard_scope!r}")
        if self.placement not in PLACEMENTS:
            raise ParameterError(f"unknown placement {self.placement!r}")
        if self.n1_coeff < 0 or self.n2_coeff < 0:
            raise ParameterError("penalty coefficients must be non-negative")
        if self.hard_nonneg != (self.hard_scope != "none"):
            raise ParameterError("hard_nonneg must agree with hard_scope")
        if self.hard_nonneg and (self.n1_coeff > 0 or self.n2_coeff > 0):
            raise ParameterError("penalties are redundant under hard projection")

    @property
    def has_penalty(self) -> bool:
        return self.n1_coeff > 0 or self.n2_coeff > 0

    @classmethod
    def unconstrained(cls, init: InitMode | None = None) -> "ConstraintConfig":
        return cls(init=init or InitMode())

    @classmethod
    def hard(cls, scope: str = "all_weights", init: InitMode | None = None) -> "ConstraintConfig":
        return cls(hard_nonneg=True, hard_scope=scope, init=init or InitMode())

    @classmethod
    def penalty(
        cls,
        n1: float,
        n2: float = 0.0,
        placement: str = "weights",
        init: InitMode | None = None,
    ) -> "ConstraintConfig":
        return cls(n1_coeff=n1, n2_coeff=n2, placement=placement, init=init or InitMode())


@dataclass
class PenaltyReport:
    total: float
    per_layer: list[float]
    negative_mass: float


def n1(x):
    """Absolute value on the negative half-line, zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x < 0, -x, 0.0)
    return float(out) if out.ndim == 0 else out


def n2(x):
    """Square on the negative half-line, zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x < 0, x * x, 0.0)
    return float(out) if out.ndim == 0 else out


def n1_grad(x):
    """Subgradient of n1: -1 below zero, 0 at and above (kink resolved to 0)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x < 0, -1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def n2_grad(x):
    """Derivative of n2, continuous everywhere including 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x < 0, 2.0 * x, 0.0)
    return float(out) if out.ndim == 0 else out


def _combined(x, cfg: ConstraintConfig):
    return cfg.n1_coeff * n1(x) + cfg.n2_coeff * n2(x)


def _combined_grad(x, cfg: ConstraintConfig):
    return cfg.n1_coeff * n1_grad(x) + cfg.n2_coeff * n2_grad(x)


def weight_penalty(m: ModelParams, cfg: ConstraintConfig) -> tuple[PenaltyReport, list[np.ndarray]]:
    """Penalty over all weight entries (biases exempt) plus per-entry gradients."""
    per_layer = []
    grads = []
    for layer in m.layers:
        per_layer.append(float(np.sum(_combined(layer.weights, cfg))))
        grads.append(_combined_grad(layer.weights, cfg))
    report = PenaltyReport(sum(per_layer), per_layer, negative_mass(m))
    return report, grads


def activation_penalty(
    trace: ForwardTrace, cfg: ConstraintConfig
) -> tuple[float, list[np.ndarray | None]]:
    """Penalty on hidden pre-activations, averaged over the batch.

    Post-ReLU values are never negative, so the penalty reads the values
    before the nonlinearity. The returned per-layer arrays slot into the
    backward pass as extra pre-activation gradients (None for the output
    layer, which the penalty does not touch).
    """
    b = trace.batch_size
    total = 0.0
    grads: list[np.ndarray | None] = []
    n_layers = len(trace.pre)
    for i, pre in enumerate(trace.pre):
        if i == n_layers - 1:
            grads.append(None)
            continue
        total += float(np.sum(_combined(pre, cfg))) / b
        grads.append(_combined_grad(pre, cfg) / b)
    return total, grads


def presum_penalty(
    x_vec: np.ndarray, w: np.ndarray, cfg: ConstraintConfig
) -> tuple[float, np.ndarray]:
    """Penalty over each product term x_k * W[k, j] of one matrix multiply.

    A negative product is penalized even when the cell's sum comes out
    positive. Gradients flow to the weights only; the incoming vector is
    treated as data.
    """
    x = np.asarray(x_vec, dtype=np.float64).reshape(-1)
    if x.shape[0] != w.shape[0]:
        raise ParameterError(f"input length {x.shape[0]} does not match weight rows {w.shape[0]}")
    products = x[:, None] * w
    total = float(np.sum(_combined(products, cfg)))
    grad_w = _combined_grad(products, cfg) * x[:, None]
    return total, grad_w


def presum_penalty_batch(
    m: ModelParams, trace: ForwardTrace, cfg: ConstraintConfig
) -> tuple[float, list[np.ndarray]]:
    """Pre-sum penalty over every layer, averaged over the batch.

    Layer inputs here are non-negative (binary features, ReLU outputs,
    inverted-dropout scaling), so each product term inherits its sign from
    the weight and the penalty collapses to input-weighted penalties on the
    weight entries. Gradients are w.r.t. weights only.
    """
    b = trace.batch_size
    total = 0.0
    grads: list[np.ndarray] = []
    for i, layer in enumerate(m.layers):
        inp = trace.post[i - 1] if i > 0 else trace.x
        # Row sums of x and x^2; identical for binary inputs.
        if i == 0:
            s1 = np.asarray(inp.sum(axis=0)).reshape(-1)
            s2 = np.asarray(inp.multiply(inp).sum(axis=0)).reshape(-1)
        else:
            s1 = inp.sum(axis=0)
            s2 = (inp * inp).sum(axis=0)
        w = layer.weights
        neg = w < 0
        layer_total = cfg.n1_coeff * float(np.sum(s1 @ np.where(neg, -w, 0.0)))
        layer_total += cfg.n2_coeff * float(np.sum(s2 @ np.where(neg, w * w, 0.0)))
        total += layer_total / b
        g = cfg.n1_coeff * np.where(neg, -1.0, 0.0) * s1[:, None]
        g += cfg.n2_coeff * np.where(neg, 2.0 * w, 0.0) * s2[:, None]
        grads.append(g / b)
    return total, grads


def clamp_inplace(m: ModelParams, scope: str, manifest_mask: np.ndarray | None = None) -> None:
    """In-place projection used inside the training loop."""
    if scope == "none":
        return
    for i, layer in enumerate(m.layers):
        if scope == "manifest_monotone" and i == 0:
            if manifest_mask is None:
                raise ParameterError("manifest_monotone projection needs a manifest mask")
            w = layer.weights
            w[manifest_mask] = np.maximum(w[manifest_mask], 0.0)
        else:
            np.maximum(layer.weights, 0.0, out=layer.weights)


def project_nonnegative(
    m: ModelParams, scope: str, space: FeatureSpace | None = None
) -> ModelParams:
    """Clamp weights at zero per scope; biases untouched; idempotent.

    all_weights clamps everything. manifest_monotone clamps every layer
    except first-layer rows of code features, which stay free.
    """
    if scope not in HARD_SCOPES:
        raise ParameterError(f"unknown projection scope {scope!r}")
    out = m.copy()
    mask = None
    if scope == "manifest_monotone":
        if space is None:
            raise ParameterError("manifest_monotone projection needs a feature space")
        out.check_space(space)
        mask = space.manifest_mask
    clamp_inplace(out, scope, mask)
    return out


def negative_mass(m: ModelParams) -> float:
    """Sum of |negative weights| across the model; zero iff fully non-negative."""
    return float(sum(-np.minimum(layer.weights, 0.0).sum() for layer in m.layers))
