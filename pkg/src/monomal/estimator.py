"""Scikit-learn style front end for the sparse binary-feature MLP.

`MonotoneMLPClassifier` wraps the training loop behind the familiar
fit/predict/predict_proba surface (with `get_params`/`set_params` via
`BaseEstimator`), so the classifier drops into pipelines, grid searches,
and anything else that speaks the estimator protocol. Constructor
arguments mirror the functional API's config objects one to one.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, column_or_1d

from .constraints import ConstraintConfig
from .dataset import FeatureSpace, dataset_from_arrays, to_csr
from .errors import ParameterError
from .network import HeadKind, InitMode, mlp_architecture, malware_probability, predict_batch
from .training import TrainConfig, train


def check_binary_matrix(X, n_features: int | None = None):
    """Validate a dense or sparse 0/1 feature matrix; returns CSR float64."""
    X = check_array(X, accept_sparse="csr", dtype=np.float64)
    from scipy import sparse

    X = sparse.csr_matrix(X)
    values = X.data
    if values.size and not np.isin(values, (0.0, 1.0)).all():
        raise ParameterError("feature matrix must be binary (0/1 values only)")
    if n_features is not None and X.shape[1] != n_features:
        raise ParameterError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_binary_labels(y) -> np.ndarray:
    """Accept 0/1 ints or benign/malware strings; returns int64 0/1."""
    y = column_or_1d(y)
    if y.dtype.kind in "UOS":
        mapping = {"benign": 0, "malware": 1}
        try:
            return np.array([mapping[str(v)] for v in y], dtype=np.int64)
        except KeyError as exc:
            raise ParameterError(f"unknown label {exc.args[0]!r}") from exc
    y = y.astype(np.int64)
    if not np.isin(y, (0, 1)).all():
        raise ParameterError("labels must be 0 (benign) or 1 (malware)")
    return y


class MonotoneMLPClassifier(BaseEstimator, ClassifierMixin):
    """MLP over sparse binary features with optional non-negative restrictions.

    With hard_scope="all_weights" (and the default single-logistic head) the
    fitted model is a monotone function of its inputs: enabling features can
    only raise the malware score, which neutralizes enable-only evasion.
    hard_scope="none" gives an ordinary unrestricted net; n1/n2 place soft
    penalties on negative values instead of a hard clamp.

    Parameters mirror TrainConfig/ConstraintConfig; `manifest_mask` marks the
    attacker-modifiable features (all features count as manifest when omitted).
    """

    def __init__(
        self,
        hidden_layer_sizes=(200, 200),
        head="sigmoid_single",
        temperature=1.0,
        hard_scope="none",
        n1=0.0,
        n2=0.0,
        placement="weights",
        init="glorot_normal",
        epochs=10,
        batch_size=1000,
        malware_ratio=0.3,
        learning_rate=0.01,
        momentum=0.9,
        dropout_rate=0.5,
        manifest_mask=None,
        random_state=0,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.head = head
        self.temperature = temperature
        self.hard_scope = hard_scope
        self.n1 = n1
        self.n2 = n2
        self.placement = placement
        self.init = init
        self.epochs = epochs
        self.batch_size = batch_size
        self.malware_ratio = malware_ratio
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.dropout_rate = dropout_rate
        self.manifest_mask = manifest_mask
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        constraint = ConstraintConfig(
            hard_nonneg=self.hard_scope != "none",
            hard_scope=self.hard_scope,
            n1_coeff=self.n1,
            n2_coeff=self.n2,
            placement=self.placement,
            init=InitMode(self.init, self.random_state),
        )
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            malware_ratio=self.malware_ratio,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            dropout_rate=self.dropout_rate,
            constraint=constraint,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_binary_matrix(X)
        y = check_binary_labels(y)
        if X.shape[0] != len(y):
            raise ParameterError("X and y disagree on sample count")
        if self.manifest_mask is not None:
            space = FeatureSpace(X.shape[1], self.manifest_mask)
        else:
            space = FeatureSpace.prefix(X.shape[1], X.shape[1])
        dataset = dataset_from_arrays(X, y, space, split_tag="train")
        head = HeadKind(self.head, self.temperature)
        arch = mlp_architecture(space.n_features, tuple(self.hidden_layer_sizes), head)
        self.model_, self.train_log_ = train(dataset, arch, head, self._train_config())
        self.space_ = space
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = space.n_features
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def predict_proba(self, X) -> np.ndarray:
        """Column-stacked (p_benign, p_malware) at temperature 1."""
        self._check_fitted()
        X = check_binary_matrix(X, self.n_features_in_)
        p = malware_probability(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_binary_matrix(X, self.n_features_in_)
        return predict_batch(self.model_, X)

    def decision_function(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1]
