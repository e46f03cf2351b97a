"""scikit-learn style wrapper around the training pipeline.

``FairKanClassifier`` is a thin facade: hyperparameters in the
constructor, ``fit(X, y, sensitive=...)`` running the full adversarial
schedule, and the usual ``predict`` / ``predict_proba`` /
``decision_function`` surface.  Passing ``sensitive=None`` trains a plain
classifier (pretraining only, still with grid refinement), which is the
natural baseline to compare a debiased model against.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .data import Dataset, apply_scaler, fit_scaler, scale_features
from .errors import ConfigError, ShapeError
from .network import refine_network
from .training import (
    TrainConfig,
    _make_optimizers,
    make_state,
    pretrain_classifier,
    sigmoid,
    train,
)

__all__ = ["FairKanClassifier"]


class FairKanClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier with an adversarial demographic-parity penalty.

    Parameters mirror the trainer configuration; widths exclude the input
    and output layers, which are inferred from the data.
    """

    def __init__(self, hidden=(16, 8), adversary_hidden=(32,), order=3,
                 grid_schedule=(5, 10), optimizer="adam", learning_rate=0.02,
                 adversary_lr=0.01, adopt_clip=False, epochs=30,
                 pretrain_epochs=30, adversary_epochs=100, batch_size=256,
                 eta=0.04, tau=90.0, lambda_init=0.5, lambda_shared=False,
                 alternating=False, l1=0.0, l2=1e-4, random_state=0):
        self.hidden = hidden
        self.adversary_hidden = adversary_hidden
        self.order = order
        self.grid_schedule = grid_schedule
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.adversary_lr = adversary_lr
        self.adopt_clip = adopt_clip
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.adversary_epochs = adversary_epochs
        self.batch_size = batch_size
        self.eta = eta
        self.tau = tau
        self.lambda_init = lambda_init
        self.lambda_shared = lambda_shared
        self.alternating = alternating
        self.l1 = l1
        self.l2 = l2
        self.random_state = random_state

    def _config(self, n_features: int, n_attrs: int) -> TrainConfig:
        return TrainConfig(
            classifier_widths=[n_features] + list(self.hidden) + [1],
            adversary_widths=[1] + list(self.adversary_hidden) + [n_attrs],
            order=self.order,
            grid_schedule=list(self.grid_schedule),
            clf_optimizer=self.optimizer,
            clf_lr=self.learning_rate,
            adv_optimizer=self.optimizer,
            adv_lr=self.adversary_lr,
            adopt_clip=self.adopt_clip,
            epochs=self.epochs,
            pretrain_epochs=self.pretrain_epochs,
            adversary_epochs=self.adversary_epochs,
            batch_size=self.batch_size,
            eta=self.eta,
            tau=self.tau,
            lambda_init=self.lambda_init,
            lambda_shared=self.lambda_shared,
            alternating=self.alternating,
            l1=self.l1,
            l2=self.l2,
            seed=int(self.random_state),
        )

    def fit(self, X, y, sensitive=None):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) != 2:
            raise ValueError(
                f"expected exactly 2 classes, got {len(self.classes_)}"
            )
        if sensitive is None:
            z = np.zeros((X.shape[0], 1), dtype=int)
        else:
            z = np.asarray(sensitive)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[0] != X.shape[0]:
                raise ShapeError(
                    f"sensitive has {z.shape[0]} rows, X has {X.shape[0]}"
                )
            bad = ~np.isin(z, (0, 1))
            if bad.any():
                raise ConfigError("sensitive attributes must be binary 0/1")
        names = [f"x{i}" for i in range(X.shape[1])]
        znames = [f"z{j}" for j in range(z.shape[1])]
        data = Dataset(X.copy(), z.astype(int), y_idx.astype(int),
                       names, znames, "y")
        self.scaler_ = fit_scaler(data)
        data = apply_scaler(self.scaler_, data)
        cfg = self._config(X.shape[1], z.shape[1])
        if sensitive is None:
            state = self._fit_plain(cfg, data)
        else:
            state = train(cfg, data)
        self.model_ = state.classifier
        self.adversary_ = state.adversary
        self.lambdas_ = np.array(state.controller.lambdas, dtype=float)
        self.history_ = state.history
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _fit_plain(cfg, data):
        # cross-entropy only, but keep the coarse-to-fine refinement
        state = make_state(cfg, data.n_features, data.n_sensitive)
        pretrain_classifier(state, data)
        for level in cfg.grid_schedule[1:]:
            state.classifier, _ = refine_network(state.classifier, level)
            state.clf_opt, state.adv_opt = _make_optimizers(
                cfg, state.classifier, state.adversary
            )
            state.grid_level = level
            pretrain_classifier(state, data)
        return state

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ShapeError(
                f"expected (n, {self.n_features_in_}) features, got {X.shape}"
            )
        raw, _ = self.model_.forward(scale_features(self.scaler_, X))
        return raw[:, 0]

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p > 0.5).astype(int)]
