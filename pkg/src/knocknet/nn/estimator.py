"""Scikit-learn style wrapper around KnockNet training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ..dataset import BinaryLabel, probability_to_class
from ..signals import WINDOW_LENGTH
from ..validation import binarize, check_targets, check_windows
from .layers import SHARED_KERNEL
from .network import FIRST_LAYER_GAIN, build_variant, kernel_for_variant
from .training import TrainConfig, predict_proba, train


def classify(net, window):
    """``(probability, BinaryLabel, relative class)`` for a single window."""
    p = float(net.forward(window)[0])
    label = BinaryLabel.KNOCKING if p >= 0.5 else BinaryLabel.NORMAL
    return p, label, int(probability_to_class(p))


class KnockNetClassifier(ClassifierMixin, BaseEstimator):
    """Theory-guided 1D CNN knock classifier.

    ``fit`` takes windows and scaled relative labels (votes / 5); plain 0/1
    labels work too. ``eval_set=(X, y)`` is the held-out set watched by early
    stopping; the fitted network is the snapshot with the best accuracy on
    it. Without an eval set the training data itself is watched.
    """

    def __init__(self, variant="d", mode=SHARED_KERNEL, input_length=WINDOW_LENGTH,
                 learning_rate=1e-3, batch_size=64, max_epochs=200, l2_penalty=1e-4,
                 patience=15, tolerance=1e-4, zero_mean_input=True,
                 first_layer_gain=FIRST_LAYER_GAIN, seed=0):
        self.variant = variant
        self.mode = mode
        self.input_length = input_length
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.l2_penalty = l2_penalty
        self.patience = patience
        self.tolerance = tolerance
        self.zero_mean_input = zero_mean_input
        self.first_layer_gain = first_layer_gain
        self.seed = seed

    @property
    def kernel_size(self):
        return kernel_for_variant(self.variant)

    def train_config(self):
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_epochs=self.max_epochs, l2_penalty=self.l2_penalty,
                           patience=self.patience, tolerance=self.tolerance, seed=self.seed)

    def fit(self, X, y, eval_set=None, callback=None):
        X = check_windows(X, self.input_length)
        y = check_targets(y, len(X))
        if eval_set is None:
            X_ev, y_ev = X, y
        else:
            X_ev = check_windows(eval_set[0], self.input_length, "eval_set X")
            y_ev = check_targets(eval_set[1], len(X_ev), "eval_set y")
        net = build_variant(self.variant, self.input_length, self.mode, self.seed,
                            zero_mean_input=self.zero_mean_input, first_layer_gain=self.first_layer_gain)
        self.net_, self.report_ = train(net, X, y, X_ev, y_ev, self.train_config(), callback)
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_network(cls, net, **params):
        """Wrap an already trained network (e.g. one loaded from disk)."""
        est = cls(variant=net.kernel_size, mode=net.mode, input_length=net.input_length,
                  zero_mean_input=net.zero_mean_input, **params)
        est.net_ = net
        est.report_ = None
        est.classes_ = np.array([0, 1])
        return est

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise AttributeError("KnockNetClassifier is not fitted yet; call fit first")

    def knock_probability(self, X):
        self._check_fitted()
        return predict_proba(self.net_, check_windows(X, self.input_length))

    def predict_proba(self, X):
        p = self.knock_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return binarize(self.knock_probability(X))

    def predict_relative(self, X):
        """Relative-label class 0..5 per window."""
        return probability_to_class(self.knock_probability(X))

    def score(self, X, y, sample_weight=None):
        """Binary accuracy; ``y`` may be scaled labels."""
        return float(np.average(self.predict(X) == binarize(y), weights=sample_weight))
