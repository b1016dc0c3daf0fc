"""scikit-learn compatible wrapper around the trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .net import NetworkConfig, forward
from .objectives import LossWeights
from .seqgen import SequenceData
from .trainer import METHODS, TrainConfig, predict_proba, train

UNLABELED = -1


class OrderGuidedClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Binary UC classifier with a location-invariant, temporally ordered feature space.

    ``y`` uses ``-1`` for unlabeled rows.  ``groups`` holds sequence ids and
    rows of one sequence must appear in temporal order.  ``location`` (0, 1, 2)
    is required by the disentangled methods and ignored otherwise.
    ``transform`` returns the UC feature ``z_u``.
    """

    def __init__(self, method="proposed", encoder_widths=(64,), branch_widths=(32,), z_dim=16,
                 epochs=100, batch_fragments=16, fragment_length=8, lr=0.05, momentum=0.0,
                 adv_weight=0.1, seq_weight=1.0, margin=0.5, random_state=0):
        self.method = method
        self.encoder_widths = encoder_widths
        self.branch_widths = branch_widths
        self.z_dim = z_dim
        self.epochs = epochs
        self.batch_fragments = batch_fragments
        self.fragment_length = fragment_length
        self.lr = lr
        self.momentum = momentum
        self.adv_weight = adv_weight
        self.seq_weight = seq_weight
        self.margin = margin
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        weights = LossWeights(adv=self.adv_weight, seq=self.seq_weight, margin=self.margin)
        return TrainConfig(method=self.method, epochs=self.epochs, batch_fragments=self.batch_fragments,
                           fragment_length=self.fragment_length, lr=self.lr, momentum=self.momentum,
                           weights=weights, seed=int(self.random_state or 0))

    def _records(self, X, y_enc, groups, location):
        n = len(X)
        groups = np.zeros(n, dtype=int) if groups is None else np.asarray(groups).astype(int)
        if location is None:
            if self.method in ("proposed", "proposed_no_order", "location_multitask"):
                raise ValueError(f"method {self.method!r} needs location labels")
            location = np.zeros(n, dtype=int)
        location = np.asarray(location).astype(int)
        if len(groups) != n or len(location) != n:
            raise ValueError("groups and location must have one entry per row")
        if location.min() < 0 or location.max() > 2:
            raise ValueError("location labels must lie in {0, 1, 2}")
        # stable sort keeps within-sequence order
        order = np.argsort(groups, kind="stable")
        t = np.zeros(n, dtype=int)
        for g in np.unique(groups):
            rows = order[groups[order] == g]
            t[rows] = np.arange(len(rows))
        return SequenceData(groups[order], t[order], location[order], y_enc[order], X[order]), order

    def fit(self, X, y, groups=None, location=None, eval_set=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        labeled = y != UNLABELED
        self.classes_ = np.unique(y[labeled])
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two labeled classes, got {self.classes_.tolist()}")
        y_enc = np.full(len(y), UNLABELED)
        y_enc[labeled] = np.searchsorted(self.classes_, y[labeled])
        cfg = self._train_config()
        self.n_features_in_ = X.shape[1]
        records, order = self._records(X, y_enc, groups, location)
        val = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            yv = np.searchsorted(self.classes_, yv)
            zeros = np.zeros(len(yv), dtype=int)
            val = SequenceData(zeros, np.arange(len(yv)), zeros, yv, Xv)
        net = NetworkConfig(input_dim=X.shape[1], encoder_widths=tuple(self.encoder_widths),
                            branch_widths=tuple(self.branch_widths), z_dim=self.z_dim)
        self.result_ = train(records, y_enc[order], val, net, cfg)
        self.params_ = self.result_.params
        return self

    def _check(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._check(X)
        return predict_proba(self.params_, X)

    def predict(self, X):
        idx = self.predict_proba(X).argmax(axis=1)
        return self.classes_[idx]

    def transform(self, X):
        X = self._check(X)
        return forward(self.params_, X).z_u
