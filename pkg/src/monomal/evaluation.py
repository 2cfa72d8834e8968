"""Metrics, the penalty grid search, monotonicity certificates, and fallback.

The grid search trains one model per (n1, n2, seed) combination with the
penalty placed on weights, evaluates classification metrics and the attack
misclassification rate, and renders per-metric heatmap CSVs (rows follow the
n1 axis, columns the n2 axis, cells are means over seeds).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import attack as atk
from . import constraints as cons
from .attack import AttackConfig
from .constraints import ConstraintConfig
from .dataset import BENIGN, MALWARE, Dataset, FeatureSpace, Sample, to_csr
from .errors import ParameterError, TrainingError
from .network import HeadKind, InitMode, LayerSpec, ModelParams, malware_probability, predict, predict_batch
from .training import TrainConfig, train


@dataclass
class Metrics:
    fpr: float
    fnr: float
    accuracy: float
    mr: float | None = None

    def lines(self) -> list[str]:
        out = [
            f"accuracy {self.accuracy:.6f}",
            f"fnr {self.fnr:.6f}",
            f"fpr {self.fpr:.6f}",
        ]
        if self.mr is not None:
            out.append(f"mr {self.mr:.6f}")
        return out

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def evaluate(m: ModelParams, test: Dataset) -> Metrics:
    """FPR, FNR, and accuracy at temperature 1 over a test set."""
    if not test.samples:
        raise ParameterError("cannot evaluate on an empty dataset")
    m.check_space(test.space)
    labels = test.labels()
    preds = predict_batch(m, to_csr(test.samples, test.space.n_features))
    benign = labels == BENIGN
    malware = labels == MALWARE
    fpr = float((preds[benign] == MALWARE).mean()) if benign.any() else 0.0
    fnr = float((preds[malware] == BENIGN).mean()) if malware.any() else 0.0
    accuracy = float((preds == labels).mean())
    return Metrics(fpr=fpr, fnr=fnr, accuracy=accuracy)


@dataclass(frozen=True)
class GridSpec:
    n1_values: tuple[float, ...] = (0.0, 0.1, 0.22, 0.46, 0.67, 1.0, 2.2)
    n2_values: tuple[float, ...] = (0.0, 0.1, 0.22, 0.46, 0.67, 1.0, 2.2)
    base_train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if not self.n1_values or not self.n2_values or not self.seeds:
            raise ParameterError("grid axes and seed list must be non-empty")
        if any(v < 0 for v in self.n1_values) or any(v < 0 for v in self.n2_values):
            raise ParameterError("penalty coefficients must be non-negative")


def cell_train_config(spec: GridSpec, n1: float, n2: float, seed: int) -> TrainConfig:
    """The exact config a grid cell trains with (exposed so baselines match bit-for-bit)."""
    constraint = ConstraintConfig(
        n1_coeff=n1,
        n2_coeff=n2,
        placement="weights",
        init=InitMode(spec.base_train.constraint.init.variant, seed),
    )
    return replace(spec.base_train, seed=seed, constraint=constraint)


@dataclass
class GridCell:
    n1: float
    n2: float
    seed: int
    metrics: Metrics | None
    negative_mass: float | None
    error: str | None = None


@dataclass
class GridReport:
    spec: GridSpec
    cells: list[GridCell]

    def cell_results(self, n1: float, n2: float) -> list[GridCell]:
        return [c for c in self.cells if c.n1 == n1 and c.n2 == n2]

    def mean_matrix(self, metric: str) -> np.ndarray:
        """Means over seeds per cell; NaN where every seed failed."""
        out = np.full((len(self.spec.n1_values), len(self.spec.n2_values)), np.nan)
        for i, n1 in enumerate(self.spec.n1_values):
            for j, n2 in enumerate(self.spec.n2_values):
                vals = [
                    getattr(c.metrics, metric) if metric != "negative_mass" else c.negative_mass
                    for c in self.cell_results(n1, n2)
                    if c.error is None
                ]
                if vals:
                    out[i, j] = float(np.mean(vals))
        return out

    def heatmap_csv(self, metric: str) -> str:
        header = "n1\\n2," + ",".join(f"{v:g}" for v in self.spec.n2_values)
        rows = [header]
        matrix = self.mean_matrix(metric)
        for i, n1 in enumerate(self.spec.n1_values):
            cells = ",".join("" if np.isnan(v) else f"{v:.6f}" for v in matrix[i])
            rows.append(f"{n1:g},{cells}")
        return "".join(r + "\n" for r in rows)

    def cells_csv(self) -> str:
        """Long-format per-seed values kept alongside the mean heatmaps."""
        rows = ["n1,n2,seed,mr,fnr,fpr,accuracy,negative_mass,error"]
        for c in self.cells:
            if c.error is None:
                rows.append(
                    f"{c.n1:g},{c.n2:g},{c.seed},{c.metrics.mr:.6f},{c.metrics.fnr:.6f},"
                    f"{c.metrics.fpr:.6f},{c.metrics.accuracy:.6f},{c.negative_mass:.6f},"
                )
            else:
                rows.append(f"{c.n1:g},{c.n2:g},{c.seed},,,,,,{c.error}")
        return "".join(r + "\n" for r in rows)


def grid_search(
    train_d: Dataset,
    test_d: Dataset,
    arch: list[LayerSpec],
    head: HeadKind,
    spec: GridSpec,
    attack_cfg: AttackConfig,
) -> GridReport:
    """Train/evaluate/attack every (n1, n2, seed) cell; cell failures are recorded, not fatal."""
    malware = test_d.by_label(MALWARE)
    cells: list[GridCell] = []
    for n1 in spec.n1_values:
        for n2 in spec.n2_values:
            for seed in spec.seeds:
                cfg = cell_train_config(spec, n1, n2, seed)
                try:
                    model, _ = train(train_d, arch, head, cfg)
                    metrics = evaluate(model, test_d)
                    metrics.mr = atk.misclassification_rate(model, malware, test_d.space, attack_cfg)
                    cells.append(GridCell(n1, n2, seed, metrics, cons.negative_mass(model)))
                except TrainingError as exc:
                    cells.append(GridCell(n1, n2, seed, None, None, error=str(exc)))
    return GridReport(spec, cells)


@dataclass
class CertificateReport:
    """Monotonicity certificate: exact sign check plus randomized flip trials."""

    scope: str
    structural_pass: bool
    behavioral_pass: bool
    trials: int
    counterexamples: list[tuple[int, float, float]] = field(default_factory=list)
    structural_only: bool = False

    def lines(self) -> list[str]:
        out = [
            f"structural {'PASS' if self.structural_pass else 'FAIL'}",
            f"behavioral {'PASS' if self.behavioral_pass else 'FAIL'} trials {self.trials}"
            + (" structural-only" if self.structural_only else ""),
        ]
        for feature, p_orig, p_flip in self.counterexamples:
            out.append(f"counterexample feature {feature} p_orig {p_orig:.9f} p_flip {p_flip:.9f}")
        return out

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def certify_monotone(
    m: ModelParams,
    space: FeatureSpace,
    samples: list[Sample],
    n_trials: int,
    rng: np.random.Generator,
    scope: str = "all_weights",
    tolerance: float = 1e-9,
) -> CertificateReport:
    """Certify that enabling (in-scope) features never lowers p(malware).

    Structural: every in-scope weight is non-negative (exact, and sufficient
    for sigmoid heads). Behavioral: random (sample, disabled in-scope
    feature) pairs, checking p(flip) >= p(original) - tolerance.
    """
    m.check_space(space)
    if scope not in ("all_weights", "manifest_monotone"):
        raise ParameterError(f"unknown certificate scope {scope!r}")
    structural = True
    for i, layer in enumerate(m.layers):
        w = layer.weights
        if i == 0 and scope == "manifest_monotone":
            w = w[space.manifest_mask]
        if (w < 0).any():
            structural = False
            break

    flippable = (
        space.manifest_indices if scope == "manifest_monotone" else np.arange(space.n_features)
    )
    counterexamples: list[tuple[int, float, float]] = []
    performed = 0
    if n_trials > 0 and samples:
        for _ in range(n_trials):
            s = samples[int(rng.integers(len(samples)))]
            disabled = np.setdiff1d(flippable, np.asarray(s.indices, dtype=np.int64))
            if len(disabled) == 0:
                continue
            feature = int(disabled[int(rng.integers(len(disabled)))])
            p_orig = float(malware_probability(m, s)[0])
            p_flip = float(malware_probability(m, s.with_enabled(feature))[0])
            performed += 1
            if p_flip < p_orig - tolerance:
                counterexamples.append((feature, p_orig, p_flip))
    behavioral = not counterexamples
    return CertificateReport(
        scope,
        structural,
        behavioral,
        performed,
        counterexamples,
        structural_only=performed == 0,
    )


def fallback_predict(restricted: ModelParams, unrestricted: ModelParams, x: Sample) -> int:
    """Trust the restricted model's malware verdicts; defer to the other otherwise."""
    if restricted.n_features != unrestricted.n_features:
        raise ParameterError("fallback models disagree on feature count")
    if (
        restricted.feature_space_id != "-"
        and unrestricted.feature_space_id != "-"
        and restricted.feature_space_id != unrestricted.feature_space_id
    ):
        raise ParameterError("fallback models are bound to different feature spaces")
    if predict(restricted, x) == MALWARE:
        return MALWARE
    return predict(unrestricted, x)
