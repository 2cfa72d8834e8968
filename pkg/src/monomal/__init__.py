"""Toolkit for sparse boolean-feature malware classifiers that resist
enable-only gradient attacks via non-negative weight restrictions, plus the
attack, distillation, and transfer analysis needed to evaluate them."""

from .attack import (
    AttackConfig,
    AttackReport,
    AttackResult,
    craft,
    evaluate_attack,
    misclassification_rate,
    transfer_rate,
    transfer_report,
)
from .constraints import (
    ConstraintConfig,
    PenaltyReport,
    activation_penalty,
    n1,
    n2,
    negative_mass,
    presum_penalty,
    project_nonnegative,
    weight_penalty,
)
from .dataset import (
    BENIGN,
    MALWARE,
    Dataset,
    FeatureSpace,
    Sample,
    SynthSpec,
    generate_synthetic,
    load_dataset,
    load_feature_space,
    sample_batch,
    save_dataset,
    save_feature_space,
    split,
)
from .errors import (
    ConfigError,
    FormatError,
    ParameterError,
    SplitError,
    TrainingError,
)
from .estimator import MonotoneMLPClassifier
from .evaluation import (
    CertificateReport,
    GridReport,
    GridSpec,
    Metrics,
    certify_monotone,
    evaluate,
    fallback_predict,
    grid_search,
)
from .network import (
    HeadKind,
    InitMode,
    LayerSpec,
    ModelParams,
    backward,
    deserialize,
    forward,
    init,
    malware_gradient,
    malware_probability,
    mlp_architecture,
    predict,
    predict_batch,
    serialize,
)
from .training import DistillConfig, TrainConfig, TrainLog, loss, train, train_distilled

__version__ = "0.1.0"
