"""Scikit-learn style front end: a LUT-network classifier and the
thermometer feature binarizer.

The classifier trains on {0,1}-valued features (run real-valued features
through ThermometerEncoder first).  predict() evaluates the hardened
Boolean network, the form the model deploys in, while decision_function()
exposes the relaxed scores used during training.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .data import EncoderSpec
from .errors import ValidationError
from .layers import InitScheme
from .network import arch_mlp, build_network
from .relaxation import RelaxMode, TauSchedule
from .training import OptimizerSpec, TrainConfig, evaluate, run_training
from .validation import as_binary_matrix, as_float_matrix, as_label_vector, check_unit_range


class ThermometerEncoder(TransformerMixin, BaseEstimator):
    """Binarize [0,1] features as monotone multi-threshold bit vectors.

    Feature d expands to columns d*n_bits .. d*n_bits + n_bits - 1 (bit t
    fires iff the value exceeds thresholds[t]), so bits stay grouped by
    source feature.  Default thresholds are uniform quantiles.
    """

    def __init__(self, n_bits: int = 3, thresholds=None):
        self.n_bits = n_bits
        self.thresholds = thresholds

    def fit(self, X, y=None):
        X = check_unit_range(as_float_matrix(X), "X")
        spec = EncoderSpec(
            n_bits=self.n_bits,
            thresholds=None if self.thresholds is None else tuple(self.thresholds),
        )
        self.thresholds_ = spec.resolved_thresholds()
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "thresholds_"):
            raise ValidationError("ThermometerEncoder is not fitted; call fit first")
        X = check_unit_range(as_float_matrix(X), "X")
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"X has {X.shape[1]} features, encoder was fitted with {self.n_features_in_}"
            )
        bits = X[:, :, None] > self.thresholds_[None, None, :]
        return bits.reshape(X.shape[0], -1).astype(np.float64)


class LogicGateClassifier(ClassifierMixin, BaseEstimator):
    """Classifier over binary features built from trainable LUT nodes.

    Parameters mirror the training engine: a stack of randomly wired
    node layers (widths in ``layer_widths``; the last width must be
    divisible by the number of classes), a group-sum readout at
    temperature ``tau_group``, and relaxed gradient training in the given
    ``mode`` ("deterministic", "gumbel", or "ste").  ``node_kind`` "warp"
    trains 2**arity coefficients per node; "dlgn" trains 16 gate logits
    (arity 2, deterministic mode only).
    """

    def __init__(
        self,
        layer_widths=(1024, 1024),
        node_kind: str = "warp",
        arity: int = 2,
        wiring: str = "random",
        mode: str = "gumbel",
        steps: int = 2000,
        batch_size: int = 128,
        learning_rate: float = 0.01,
        optimizer: str = "adam",
        momentum: float = 0.0,
        tau_relax: float = 1.0,
        tau_relax_end: float | None = None,
        tau_group: float = 1.0,
        init: str = "random",
        init_sigma: float | None = None,
        init_gamma: float | None = None,
        eval_every: int = 500,
        random_state: int = 0,
    ):
        self.layer_widths = layer_widths
        self.node_kind = node_kind
        self.arity = arity
        self.wiring = wiring
        self.mode = mode
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.momentum = momentum
        self.tau_relax = tau_relax
        self.tau_relax_end = tau_relax_end
        self.tau_group = tau_group
        self.init = init
        self.init_sigma = init_sigma
        self.init_gamma = init_gamma
        self.eval_every = eval_every
        self.random_state = random_state

    def fit(self, X, y):
        X = as_binary_matrix(X)
        y = as_label_vector(y, X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValidationError("classifier needs at least 2 classes in y")
        widths = [int(w) for w in self.layer_widths]
        if not widths:
            raise ValidationError("layer_widths must be non-empty")
        if widths[-1] % self.classes_.shape[0]:
            raise ValidationError(
                f"last layer width {widths[-1]} must be divisible by the "
                f"{self.classes_.shape[0]} classes"
            )
        spec = arch_mlp(
            input_dim=X.shape[1],
            widths=widths,
            classes=int(self.classes_.shape[0]),
            node_kind=self.node_kind,
            arity=self.arity,
            wiring=self.wiring,
            tau_group=self.tau_group,
            init=InitScheme(kind=self.init, sigma=self.init_sigma, gamma=self.init_gamma),
            seed=int(self.random_state),
        )
        self.network_ = build_network(spec)
        config = TrainConfig(
            steps=int(self.steps),
            batch_size=int(self.batch_size),
            learning_rate=float(self.learning_rate),
            optimizer=OptimizerSpec(kind=self.optimizer, momentum=self.momentum),
            eval_every=min(int(self.eval_every), int(self.steps)),
            seed=int(self.random_state),
            mode=RelaxMode.parse(self.mode),
            tau_relax=TauSchedule(float(self.tau_relax), self.tau_relax_end),
        )
        # Periodic metrics use a capped training subset as the validation set;
        # fit keeps every sample for training.
        cap = min(X.shape[0], 2048)
        val_idx = np.random.default_rng(int(self.random_state)).permutation(X.shape[0])[:cap]
        self.train_metrics_ = run_training(
            self.network_, (X, y_idx), (X[val_idx], y_idx[val_idx]), config
        )
        self.n_features_in_ = X.shape[1]
        return self

    def __sklearn_is_fitted__(self) -> bool:
        return hasattr(self, "network_")

    def _check_ready(self, X) -> np.ndarray:
        if not self.__sklearn_is_fitted__():
            raise ValidationError("LogicGateClassifier is not fitted; call fit first")
        X = as_binary_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(
                f"X has {X.shape[1]} features, classifier was fitted with {self.n_features_in_}"
            )
        return X

    def predict(self, X):
        """Labels from the hardened Boolean network (deployment form)."""
        X = self._check_ready(X)
        return self.classes_[self.network_.predict_discrete(X)]

    def decision_function(self, X):
        """Relaxed class scores, shape (n_samples, n_classes)."""
        X = self._check_ready(X)
        return self.network_.forward(X)

    def predict_proba(self, X):
        scores = self.decision_function(X)
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def discrete_score(self, X, y) -> float:
        """Accuracy of the hardened network (same path as predict)."""
        X = self._check_ready(X)
        y = as_label_vector(y, X.shape[0])
        y_idx = np.searchsorted(self.classes_, y)
        return evaluate(self.network_, X, y_idx, mode="discrete")
