"""Two-hidden-layer MLP over sparse binary inputs, with manual gradients.

Everything a training loop or attack needs is explicit here: forward passes
that keep every pre- and post-activation, exact backward passes that also
produce input gradients, two head kinds (single logistic unit, temperature
softmax pair), inverted dropout, Glorot-normal initialization with an
all-positive variant, and a versioned text serialization.

The first-layer product exploits input sparsity (CSR matmul); everything
downstream is small dense algebra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .dataset import MALWARE, BENIGN, FeatureSpace, Sample
from .errors import FormatError, ParameterError

ACTIVATIONS = ("relu", "identity")
HEAD_VARIANTS = ("sigmoid_single", "softmax_pair")
INIT_VARIANTS = ("glorot_normal", "abs_glorot_normal")

UNBOUND_SPACE_ID = "-"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = "relu"

    def __post_init__(self) -> None:
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ParameterError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class HeadKind:
    variant: str = "sigmoid_single"
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in HEAD_VARIANTS:
            raise ParameterError(f"unknown head variant {self.variant!r}")
        if not (self.temperature > 0):
            raise ParameterError(f"temperature must be positive, got {self.temperature}")

    @property
    def out_dim(self) -> int:
        return 1 if self.variant == "sigmoid_single" else 2


@dataclass(frozen=True)
class InitMode:
    variant: str = "glorot_normal"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.variant not in INIT_VARIANTS:
            raise ParameterError(f"unknown init variant {self.variant!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (in_dim, out_dim)
    bias: np.ndarray  # (out_dim,)
    spec: LayerSpec

    def copy(self) -> "Layer":
        return Layer(self.weights.copy(), self.bias.copy(), self.spec)


class ModelParams:
    """Ordered layers plus head; the single serializable model object."""

    def __init__(self, layers: list[Layer], head: HeadKind, feature_space_id: str = UNBOUND_SPACE_ID):
        if not layers:
            raise ParameterError("model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.spec.out_dim != nxt.spec.in_dim:
                raise ParameterError(
                    f"layer dims do not chain: {prev.spec.out_dim} -> {nxt.spec.in_dim}"
                )
        if layers[-1].spec.out_dim != head.out_dim:
            raise ParameterError(
                f"head {head.variant} needs {head.out_dim} output unit(s),"
                f" last layer has {layers[-1].spec.out_dim}"
            )
        for layer in layers:
            if layer.weights.shape != (layer.spec.in_dim, layer.spec.out_dim):
                raise ParameterError("weight matrix shape does not match its spec")
            if layer.bias.shape != (layer.spec.out_dim,):
                raise ParameterError("bias shape does not match its spec")
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                raise ParameterError("model parameters must be finite")
        self.layers = layers
        self.head = head
        self.feature_space_id = feature_space_id

    @property
    def n_features(self) -> int:
        return self.layers[0].spec.in_dim

    def copy(self) -> "ModelParams":
        return ModelParams([l.copy() for l in self.layers], self.head, self.feature_space_id)

    def check_space(self, space: FeatureSpace) -> None:
        """Raise unless this model can run over the given feature space."""
        if space.n_features != self.n_features:
            raise ParameterError(
                f"model expects {self.n_features} features, space has {space.n_features}"
            )
        if self.feature_space_id not in (UNBOUND_SPACE_ID, space.checksum):
            raise ParameterError("model is bound to a different feature space")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ModelParams)
            and self.head == other.head
            and self.feature_space_id == other.feature_space_id
            and len(self.layers) == len(other.layers)
            and all(
                a.spec == b.spec
                and np.array_equal(a.weights, b.weights)
                and np.array_equal(a.bias, b.bias)
                for a, b in zip(self.layers, other.layers)
            )
        )

    def __repr__(self) -> str:
        dims = "-".join(str(l.spec.in_dim) for l in self.layers) + f"-{self.layers[-1].spec.out_dim}"
        return f"ModelParams({dims}, head={self.head.variant})"


def mlp_architecture(n_features: int, hidden: tuple[int, ...] = (200, 200), head: HeadKind | None = None) -> list[LayerSpec]:
    """ReLU hidden stack plus identity output layer sized for the head."""
    head = head or HeadKind()
    dims = [n_features, *hidden]
    specs = [LayerSpec(a, b, "relu") for a, b in zip(dims, dims[1:])]
    specs.append(LayerSpec(dims[-1], head.out_dim, "identity"))
    return specs


def init(
    arch: list[LayerSpec],
    head: HeadKind,
    mode: InitMode,
    feature_space: FeatureSpace | None = None,
) -> ModelParams:
    """Glorot-normal weights (optionally absolute-valued), zero biases.

    Deterministic per mode.seed; layers are drawn in order.
    """
    rng = np.random.default_rng(mode.seed)
    layers = []
    for spec in arch:
        std = math.sqrt(2.0 / (spec.in_dim + spec.out_dim))
        w = rng.normal(0.0, std, size=(spec.in_dim, spec.out_dim))
        if mode.variant == "abs_glorot_normal":
            w = np.abs(w)
        layers.append(Layer(w, np.zeros(spec.out_dim), spec))
    fsid = feature_space.checksum if feature_space is not None else UNBOUND_SPACE_ID
    return ModelParams(layers, head, fsid)


@dataclass
class ForwardTrace:
    """Everything the backward pass and the penalty terms need."""

    x: sparse.csr_matrix  # (B, n_features)
    pre: list[np.ndarray]  # per layer, (B, out_dim), before activation
    post: list[np.ndarray]  # per layer, after activation and dropout
    dropout_masks: list[np.ndarray | None]  # per layer, scaled inverted-dropout masks
    probs: np.ndarray  # sigmoid: (B,) p_malware; softmax: (B, 2) at head temperature

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


@dataclass
class Gradients:
    """Loss gradients for every parameter, plus optionally the input."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray | None = None  # (B, n_features) when requested


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(logits: np.ndarray, temperature: float) -> np.ndarray:
    scaled = logits / temperature
    scaled = scaled - scaled.max(axis=1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=1, keepdims=True)


def as_input_matrix(x, n_features: int) -> sparse.csr_matrix:
    """Accept a Sample, list of Samples, or dense/sparse matrix as net input."""
    if isinstance(x, Sample):
        x = [x]
    if isinstance(x, (list, tuple)) and all(isinstance(s, Sample) for s in x):
        from .dataset import to_csr

        return to_csr(list(x), n_features)
    if sparse.issparse(x):
        m = sparse.csr_matrix(x, dtype=np.float64)
    else:
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        m = sparse.csr_matrix(arr)
    if m.shape[1] != n_features:
        raise ParameterError(f"input has {m.shape[1]} features, model expects {n_features}")
    return m


def forward(
    m: ModelParams,
    x,
    dropout: tuple[float, np.random.Generator] | None = None,
) -> ForwardTrace:
    """Run the net, keeping all intermediates.

    `dropout`, when given as (rate, rng), applies inverted dropout to hidden
    post-activations only; omit it for inference. Head probabilities are
    computed at the head's temperature (softmax) or plainly (sigmoid).
    """
    xm = as_input_matrix(x, m.n_features)
    if dropout is not None:
        rate, rng = dropout
        if not (0.0 <= rate < 1.0):
            raise ParameterError(f"dropout rate must be in [0,1), got {rate}")
        if rate == 0.0:
            dropout = None
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    masks: list[np.ndarray | None] = []
    h = xm
    last = len(m.layers) - 1
    for i, layer in enumerate(m.layers):
        z = h @ layer.weights + layer.bias
        z = np.asarray(z)
        pre.append(z)
        a = np.maximum(z, 0.0) if layer.spec.activation == "relu" else z
        if dropout is not None and i < last:
            rate, rng = dropout
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
            masks.append(mask)
        else:
            masks.append(None)
        post.append(a)
        h = a
    logits = pre[-1]
    if m.head.variant == "sigmoid_single":
        probs = _sigmoid(logits[:, 0])
    else:
        probs = _softmax(logits, m.head.temperature)
    return ForwardTrace(xm, pre, post, masks, probs)


def head_delta(m: ModelParams, trace: ForwardTrace, target) -> np.ndarray:
    """d(mean cross-entropy)/d(logits) for this head at its temperature."""
    b = trace.batch_size
    if m.head.variant == "sigmoid_single":
        t = np.asarray(target, dtype=np.float64).reshape(b)
        if ((t < 0) | (t > 1)).any():
            raise ParameterError("sigmoid targets must lie in [0,1]")
        return ((trace.probs - t) / b)[:, None]
    y = np.asarray(target, dtype=np.float64).reshape(b, 2)
    if (y < 0).any() or not np.allclose(y.sum(axis=1), 1.0, atol=1e-9):
        raise ParameterError("softmax targets must be distributions over two classes")
    return (trace.probs - y) / (m.head.temperature * b)


def backprop_from_delta(
    m: ModelParams,
    trace: ForwardTrace,
    delta: np.ndarray,
    with_input_grad: bool = True,
    extra_preact_grads: list[np.ndarray | None] | None = None,
) -> Gradients:
    """Propagate a d(objective)/d(logits) seed back through the net.

    `extra_preact_grads` lets penalty terms inject gradients at each layer's
    pre-activations (entry i applies to layer i; None entries are skipped).
    """
    n_layers = len(m.layers)
    grad_w: list[np.ndarray | None] = [None] * n_layers
    grad_b: list[np.ndarray | None] = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        layer = m.layers[i]
        if extra_preact_grads is not None and extra_preact_grads[i] is not None:
            delta = delta + extra_preact_grads[i]
        inp = trace.post[i - 1] if i > 0 else trace.x
        grad_w[i] = np.asarray(inp.T @ delta)
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            dx = delta @ layer.weights.T if with_input_grad else None
            return Gradients(grad_w, grad_b, dx)
        delta = delta @ layer.weights.T
        if trace.dropout_masks[i - 1] is not None:
            delta = delta * trace.dropout_masks[i - 1]
        if m.layers[i - 1].spec.activation == "relu":
            delta = delta * (trace.pre[i - 1] > 0)
    raise AssertionError("unreachable")


def backward(
    m: ModelParams,
    trace: ForwardTrace,
    target,
    with_input_grad: bool = True,
    extra_preact_grads: list[np.ndarray | None] | None = None,
) -> Gradients:
    """Exact gradients of mean cross-entropy w.r.t. all parameters and the input.

    ReLU subgradient at 0 is 0. Softmax gradients include the 1/temperature
    factor from computing the loss at the head's temperature.
    """
    delta = head_delta(m, trace, target)
    return backprop_from_delta(m, trace, delta, with_input_grad, extra_preact_grads)


def malware_probability(m: ModelParams, x) -> np.ndarray:
    """p(malware) at temperature 1, regardless of the head's training temperature."""
    trace = forward(m, x)
    if m.head.variant == "sigmoid_single":
        return trace.probs
    return _softmax(trace.logits, 1.0)[:, 1]


def predict(m: ModelParams, x) -> int:
    """Label a single sample; ties at p=0.5 classify as malware."""
    p = malware_probability(m, x)
    if p.shape[0] != 1:
        raise ParameterError("predict takes a single sample; use predict_batch")
    return MALWARE if p[0] >= 0.5 else BENIGN


def predict_batch(m: ModelParams, x) -> np.ndarray:
    return np.where(malware_probability(m, x) >= 0.5, MALWARE, BENIGN)


def first_layer_delta(m: ModelParams, x) -> np.ndarray:
    """d p(malware at temperature 1) / d (first-layer pre-activation).

    The input gradient is this delta times the first weight matrix; the
    attack multiplies it against just its candidate rows.
    """
    trace = forward(m, x)
    if m.head.variant == "sigmoid_single":
        p = trace.probs
        delta = (p * (1.0 - p))[:, None]
    else:
        q = _softmax(trace.logits, 1.0)
        s = q[:, 1] * q[:, 0]
        delta = np.stack([-s, s], axis=1)
    for i in range(len(m.layers) - 1, 0, -1):
        delta = delta @ m.layers[i].weights.T
        if trace.dropout_masks[i - 1] is not None:
            delta = delta * trace.dropout_masks[i - 1]
        if m.layers[i - 1].spec.activation == "relu":
            delta = delta * (trace.pre[i - 1] > 0)
    return delta


def malware_gradient(m: ModelParams, x, restrict: np.ndarray | None = None) -> np.ndarray:
    """Gradient of p(malware) at temperature 1 w.r.t. the input vector.

    With `restrict` (an index array), only those input coordinates are
    computed, which is what the attack's candidate scan needs.
    """
    delta = first_layer_delta(m, x)
    w0 = m.layers[0].weights
    if restrict is not None:
        return delta @ w0[restrict].T
    return delta @ w0.T


def serialize(m: ModelParams) -> bytes:
    """Versioned text encoding with full round-trip float precision."""
    lines = [
        f"mgmodel v1 {m.head.variant} {m.head.temperature:.17g}"
        f" {len(m.layers)} {m.feature_space_id}"
    ]
    for layer in m.layers:
        lines.append(f"layer {layer.spec.in_dim} {layer.spec.out_dim} {layer.spec.activation}")
        for row in layer.weights:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append("bias " + " ".join(f"{v:.17g}" for v in layer.bias))
    return ("\n".join(lines) + "\n").encode("ascii")


def deserialize(data: bytes, expected_space: FeatureSpace | None = None) -> ModelParams:
    """Parse a serialized model; any inconsistency is a FormatError."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise FormatError(f"model file is not ascii text: {exc}") from exc
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty model file")
    header = lines[0].split(" ")
    if len(header) != 6 or header[0] != "mgmodel":
        raise FormatError(f"bad model header: {lines[0]!r}")
    if header[1] != "v1":
        raise FormatError(f"unsupported model version {header[1]!r}")
    variant, temp_tok, n_layers_tok, fsid = header[2], header[3], header[4], header[5]
    try:
        head = HeadKind(variant, float(temp_tok))
        n_layers = int(n_layers_tok)
    except (ValueError, ParameterError) as exc:
        raise FormatError(f"bad model header: {exc}") from exc

    pos = 1
    layers: list[Layer] = []
    for k in range(n_layers):
        if pos >= len(lines):
            raise FormatError(f"truncated model file: missing layer {k}")
        tokens = lines[pos].split(" ")
        if len(tokens) != 4 or tokens[0] != "layer":
            raise FormatError(f"line {pos + 1}: expected layer declaration")
        try:
            spec = LayerSpec(int(tokens[1]), int(tokens[2]), tokens[3])
        except (ValueError, ParameterError) as exc:
            raise FormatError(f"line {pos + 1}: bad layer declaration: {exc}") from exc
        pos += 1
        rows = np.empty((spec.in_dim, spec.out_dim), dtype=np.float64)
        for r in range(spec.in_dim):
            if pos >= len(lines):
                raise FormatError(f"truncated model file in layer {k} weights")
            try:
                row = np.array(lines[pos].split(" "), dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"line {pos + 1}: bad weight row: {exc}") from exc
            if row.shape != (spec.out_dim,):
                raise FormatError(f"line {pos + 1}: expected {spec.out_dim} weights")
            rows[r] = row
            pos += 1
        if pos >= len(lines) or not lines[pos].startswith("bias "):
            raise FormatError(f"layer {k}: missing bias line")
        try:
            bias = np.array(lines[pos].split(" ")[1:], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"line {pos + 1}: bad bias: {exc}") from exc
        if bias.shape != (spec.out_dim,):
            raise FormatError(f"line {pos + 1}: expected {spec.out_dim} bias values")
        pos += 1
        layers.append(Layer(rows, bias, spec))
    if pos != len(lines):
        raise FormatError(f"trailing content after model body at line {pos + 1}")
    try:
        model = ModelParams(layers, head, fsid)
    except ParameterError as exc:
        raise FormatError(f"inconsistent model file: {exc}") from exc
    if expected_space is not None:
        try:
            model.check_space(expected_space)
        except ParameterError as exc:
            raise FormatError(str(exc)) from exc
    return model
