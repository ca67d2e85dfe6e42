"""Mini-batch Adam training with L2 penalty and accuracy-based early stopping."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigurationError
from .network import backward, project_gradients, project_parameters

STOP_PLATEAU = "plateau"
STOP_DIVERGENCE = "divergence"
STOP_MAX_EPOCHS = "max_epochs"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    l2_penalty: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 15
    tolerance: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ConfigurationError("learning_rate > 0, batch_size >= 1 and max_epochs >= 0 required")
        if self.l2_penalty < 0 or self.patience < 1:
            raise ConfigurationError("l2_penalty >= 0 and patience >= 1 required")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    test_accuracy: list = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = STOP_MAX_EPOCHS
    best_epoch: int = 0
    best_test_accuracy: float = float("nan")

    def to_dict(self):
        return asdict(self)


class Adam:
    """Adaptive-moment optimiser over a dict of parameter arrays (updated in place)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            tmp = np.square(g)
            tmp *= 1.0 - self.beta2
            v += tmp
            # lr * m_hat / (sqrt(v_hat) + eps), computed with in-place temporaries
            np.sqrt(v, out=tmp)
            tmp *= 1.0 / np.sqrt(bc2)
            tmp += self.epsilon
            np.divide(m, tmp, out=tmp)
            tmp *= self.lr / bc1
            params[k] -= tmp


def binary_accuracy_of(net, x, y, batch=512):
    p = predict_proba(net, x, batch)
    return float(np.mean((p >= 0.5) == (np.asarray(y) >= 0.5)))


def predict_proba(net, x, batch=512):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return net.forward(x)
    return np.concatenate([net.forward(x[i:i + batch]) for i in range(0, len(x), batch)]) if len(x) else np.zeros(0)


def train(net, x_train, y_train, x_test, y_test, config=None, callback=None):
    """Train ``net`` in place and return ``(best_net, report)``.

    ``y`` values are scaled relative labels in [0, 1]. The returned network
    is a copy taken at the epoch with the best test accuracy.
    """
    config = config or TrainConfig()
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_test = np.asarray(x_test, dtype=float)
    y_test = np.asarray(y_test, dtype=float)
    if len(x_train) == 0 or len(x_test) == 0:
        raise ConfigurationError("training and test sets must be non-empty")
    if len(x_train) != len(y_train) or len(x_test) != len(y_test):
        raise ConfigurationError("windows and labels differ in length")

    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    report = TrainReport()
    best = net.copy()
    best_acc = -np.inf
    stall = 0
    diverging = 0
    prev_gap = prev_test = None

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_train))
        batch_losses, weights, hits = [], [], 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            value, grads, p = backward(net, x_train[idx], y_train[idx], config.l2_penalty, return_output=True)
            opt.step(net.params, project_gradients(net, grads))
            project_parameters(net)
            batch_losses.append(value)
            weights.append(len(idx))
            hits += int(np.sum((p >= 0.5) == (y_train[idx] >= 0.5)))
        # running accuracy over the epoch's batches, as seen before each update
        train_acc = hits / len(order)
        test_acc = binary_accuracy_of(net, x_test, y_test)
        report.train_loss.append(float(np.average(batch_losses, weights=weights)))
        report.train_accuracy.append(train_acc)
        report.test_accuracy.append(test_acc)
        report.stop_epoch = epoch
        if callback is not None:
            callback(epoch, report)

        if test_acc > best_acc + config.tolerance:
            best_acc = test_acc
            best = net.copy()
            report.best_epoch = epoch
            stall = 0
        else:
            stall += 1
        gap = train_acc - test_acc
        if prev_gap is not None and gap > prev_gap and test_acc < prev_test:
            diverging += 1
        else:
            diverging = 0
        prev_gap, prev_test = gap, test_acc

        if diverging >= config.patience:
            report.stop_reason = STOP_DIVERGENCE
            break
        if stall >= config.patience:
            report.stop_reason = STOP_PLATEAU
            break
    else:
        report.stop_reason = STOP_MAX_EPOCHS

    report.best_test_accuracy = float(best_acc) if np.isfinite(best_acc) else float("nan")
    return best, report
