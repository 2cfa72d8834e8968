import numpy as np
import pytest

from monomal import (
    ConstraintConfig,
    HeadKind,
    InitMode,
    SynthSpec,
    TrainConfig,
    generate_synthetic,
    mlp_architecture,
    split,
    train,
)

# Acceptance-criterion outcomes, printed one per line at the end of the run.
_criteria: dict[int, tuple[str, bool]] = {}


def record_criterion(number: int, description: str, passed: bool) -> None:
    _criteria[number] = (description, passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_criteria):
        description, passed = _criteria[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}  {description}")


@pytest.fixture(scope="session")
def tiny_corpus():
    """Small planted-rule corpus shared by training/attack/evaluation tests."""
    spec = SynthSpec(
        n_features=200,
        manifest_fraction=0.5,
        n_samples=1200,
        malware_fraction=0.2,
        mean_density=12.0,
        n_rules=5,
        seed=3,
    )
    full = generate_synthetic(spec)
    train_d, test_d = split(full, 0.25, seed=11)
    return train_d, test_d


def tiny_train_config(seed=5, epochs=10, constraint=None, **kw):
    return TrainConfig(
        epochs=epochs,
        batch_size=100,
        malware_ratio=0.3,
        learning_rate=0.05,
        momentum=0.9,
        dropout_rate=0.25,
        constraint=constraint or ConstraintConfig(init=InitMode("glorot_normal", seed)),
        seed=seed,
        **kw,
    )


@pytest.fixture(scope="session")
def tiny_sigmoid_model(tiny_corpus):
    train_d, _ = tiny_corpus
    head = HeadKind("sigmoid_single")
    arch = mlp_architecture(train_d.space.n_features, (16, 16), head)
    model, log = train(train_d, arch, head, tiny_train_config())
    return model, log


@pytest.fixture(scope="session")
def tiny_hard_model(tiny_corpus):
    train_d, _ = tiny_corpus
    head = HeadKind("sigmoid_single")
    arch = mlp_architecture(train_d.space.n_features, (16, 16), head)
    cfg = tiny_train_config(
        constraint=ConstraintConfig.hard("all_weights", InitMode("abs_glorot_normal", 5))
    )
    model, log = train(train_d, arch, head, cfg)
    return model, log
