"""Enable-only, manifest-restricted greedy gradient attack and its rates.

The crafting loop mirrors the classic recipe for boolean malware features:
differentiate the malware probability with respect to the inputs, enable the
still-disabled manifest feature with the most negative gradient, and repeat
until the classifier flips or a cutoff is reached. Disabling features and
touching code features are off the table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import BENIGN, MALWARE, FeatureSpace, Sample
from .errors import ParameterError
from .network import ModelParams, first_layer_delta, predict

@dataclass(frozen=True)
class AttackConfig:
    max_iterations: int = 20
    require_negative_gradient: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be at least 1")


@dataclass(frozen=True)
class AttackResult:
    """Per-sample perturbation trace.

    `enabled_features` lists the manifest features turned on, in attack
    order; `gradient_exhausted` marks runs that stopped early because no
    candidate had a strictly negative gradient.
    """

    original: Sample
    perturbed: Sample
    enabled_features: tuple[int, ...]
    iterations_used: int
    success: bool
    gradient_exhausted: bool = False


def craft(m: ModelParams, x: Sample, space: FeatureSpace, cfg: AttackConfig) -> AttackResult:
    """Greedily enable manifest features to flip one detected malware sample.

    Preconditions: x is labeled malware and the model currently detects it.
    Ties in the gradient break toward the lowest feature index. The model is
    never modified; the result's perturbed sample keeps the true label.
    """
    m.check_space(space)
    if x.label != MALWARE:
        raise ParameterError("craft targets malware samples only")
    if predict(m, x) != MALWARE:
        raise ParameterError("craft targets samples the model detects as malware")

    enabled = set(x.indices)
    candidates = np.array(
        [i for i in space.manifest_indices if i not in enabled], dtype=np.int64
    )
    w0_cand = m.layers[0].weights[candidates] if len(candidates) else None
    active = np.ones(len(candidates), dtype=bool)

    current = x
    added: list[int] = []
    success = False
    exhausted = False
    for _ in range(cfg.max_iterations):
        if not active.any():
            exhausted = True
            break
        delta = first_layer_delta(m, current)[0]
        grads = w0_cand @ delta
        grads = np.where(active, grads, np.inf)
        j = int(np.argmin(grads))
        if cfg.require_negative_gradient and not (grads[j] < 0):
            exhausted = True
            break
        active[j] = False
        feature = int(candidates[j])
        added.append(feature)
        current = current.with_enabled(feature)
        if predict(m, current) == BENIGN:
            success = True
            break
    return AttackResult(x, current, tuple(added), len(added), success, exhausted)


@dataclass
class AttackReport:
    """Batch attack outcome over a malware sample list.

    `results` holds (position in the input list, AttackResult) for every
    sample the model detected before the attack; undetected samples are
    excluded from the denominator.
    """

    rate: float
    n_detected: int
    n_success: int
    empty_denominator: bool
    results: list[tuple[int, AttackResult]] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for idx, r in self.results:
            added = ",".join(map(str, r.enabled_features)) if r.enabled_features else "-"
            out.append(
                f"sample {idx} success {int(r.success)} iters {r.iterations_used} added {added}"
            )
        return out

    def render(self) -> str:
        return "".join(line + "\n" for line in self.lines())


def evaluate_attack(
    m: ModelParams, malware: list[Sample], space: FeatureSpace, cfg: AttackConfig
) -> AttackReport:
    """Attack every detected sample; rate = successes / detected."""
    m.check_space(space)
    results: list[tuple[int, AttackResult]] = []
    n_success = 0
    for idx, x in enumerate(malware):
        if x.label != MALWARE:
            raise ParameterError(f"sample {idx} is not labeled malware")
        if predict(m, x) != MALWARE:
            continue
        r = craft(m, x, space, cfg)
        results.append((idx, r))
        n_success += int(r.success)
    n_detected = len(results)
    if n_detected == 0:
        return AttackReport(0.0, 0, 0, True, results)
    return AttackReport(n_success / n_detected, n_detected, n_success, False, results)


def misclassification_rate(
    m: ModelParams, malware: list[Sample], space: FeatureSpace, cfg: AttackConfig
) -> float:
    """Fraction of detected malware the attack flips to benign."""
    return evaluate_attack(m, malware, space, cfg).rate


@dataclass
class TransferReport:
    rate: float
    n_crafted: int
    n_transferred: int
    empty_denominator: bool


def transfer_report(
    source: ModelParams,
    target: ModelParams,
    malware: list[Sample],
    space: FeatureSpace,
    cfg: AttackConfig,
) -> TransferReport:
    """Craft on the source model, then score the perturbed samples on the target.

    The denominator is the set of source-successful perturbations; the rate
    is the fraction of those the target classifies benign.
    """
    source.check_space(space)
    target.check_space(space)
    report = evaluate_attack(source, malware, space, cfg)
    crafted = [r.perturbed for _, r in report.results if r.success]
    if not crafted:
        return TransferReport(0.0, 0, 0, True)
    n_transfer = sum(int(predict(target, p) == BENIGN) for p in crafted)
    return TransferReport(n_transfer / len(crafted), len(crafted), n_transfer, False)


def transfer_rate(
    source: ModelParams,
    target: ModelParams,
    malware: list[Sample],
    space: FeatureSpace,
    cfg: AttackConfig,
) -> float:
    return transfer_report(source, target, malware, space, cfg).rate
