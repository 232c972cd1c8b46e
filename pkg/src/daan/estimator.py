"""scikit-learn compatible wrapper around :func:`daan.trainer.fit`."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .datagen import LabeledDomain, TargetDomain
from .net import NetConfig, extract_features, predict_proba
from .trainer import TrainConfig, fit


class DAANClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Adversarial domain adaptation with a dynamic global/local weight.

    ``fit(X, y, X_target=...)`` trains on labelled source rows and unlabelled
    target rows. ``predict``/``predict_proba`` use the label classifier and
    ``transform`` returns the learned features.

    Parameters mirror :class:`~daan.trainer.TrainConfig`; ``omega`` is
    ``"dynamic"`` or a fixed weight in [0, 1] (0 aligns only the global
    distribution, 1 only the per-class ones).

    Attributes
    ----------
    model_ : DaanModel
    metrics_ : list of MetricsRow, one per epoch
    omega_history_ : list of (epoch, omega)
    classes_ : ndarray of original labels
    """

    def __init__(
        self,
        omega="dynamic",
        lambda_adapt=1.0,
        epochs=30,
        batch_size=32,
        eta0=0.01,
        alpha=10.0,
        beta=0.75,
        momentum=0.9,
        classifier_lr_mult=10.0,
        feature_dim=32,
        hidden_width=64,
        discriminator_hidden=64,
        detach_weights=True,
        local_class_norm=False,
        random_state=None,
    ):
        self.omega = omega
        self.lambda_adapt = lambda_adapt
        self.epochs = epochs
        self.batch_size = batch_size
        self.eta0 = eta0
        self.alpha = alpha
        self.beta = beta
        self.momentum = momentum
        self.classifier_lr_mult = classifier_lr_mult
        self.feature_dim = feature_dim
        self.hidden_width = hidden_width
        self.discriminator_hidden = discriminator_hidden
        self.detach_weights = detach_weights
        self.local_class_norm = local_class_norm
        self.random_state = random_state

    def _train_config(self, n_features: int, n_classes: int) -> TrainConfig:
        rs = self.random_state
        seed = rs if isinstance(rs, (int, np.integer)) else int(check_random_state(rs).randint(2**31))
        net = NetConfig(
            input_dim=n_features,
            num_classes=n_classes,
            feature_dim=self.feature_dim,
            hidden_width=self.hidden_width,
            discriminator_hidden=self.discriminator_hidden,
            init_seed=int(seed),
        )
        return TrainConfig(
            net=net,
            lam=self.lambda_adapt,
            batch_size=self.batch_size,
            epochs=self.epochs,
            eta0=self.eta0,
            alpha=self.alpha,
            beta=self.beta,
            momentum=self.momentum,
            omega=self.omega,
            seed=int(seed),
            classifier_lr_mult=self.classifier_lr_mult,
            detach_weights=self.detach_weights,
            local_class_norm=self.local_class_norm,
        )

    def fit(self, X, y, X_target=None, y_target_eval=None):
        """Train on source ``(X, y)`` and unlabelled ``X_target``.

        ``y_target_eval`` is optional and only fills the target accuracy
        column of ``metrics_``.
        """
        if X_target is None:
            raise ValueError("DAANClassifier.fit needs unlabelled target rows: pass X_target=")
        X, y = check_X_y(X, y, dtype=np.float64)
        X_target = check_array(X_target, dtype=np.float64)
        if X_target.shape[1] != X.shape[1]:
            raise ValueError(f"X_target has {X_target.shape[1]} features, X has {X.shape[1]}")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes in y")
        y_eval = None
        if y_target_eval is not None:
            lookup = {c: i for i, c in enumerate(self.classes_)}
            y_eval = np.array([lookup.get(c, -1) for c in np.asarray(y_target_eval)])
        cfg = self._train_config(X.shape[1], self.classes_.size)
        result = fit(cfg, LabeledDomain(X, y_enc), TargetDomain(X_target, y_eval))
        self.model_ = result.model
        self.metrics_ = result.metrics
        self.omega_history_ = result.omega_history
        self.n_features_in_ = X.shape[1]
        return self

    def _validate(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the model expects {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._validate(X)
        return predict_proba(self.model_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        X = self._validate(X)
        return extract_features(self.model_, X).values
