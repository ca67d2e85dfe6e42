"""Reference knock detectors: MAPO threshold, PCA data-driven and PCA Eigenpressure.

All three reduce a window to a handful of features and classify them with
the same L2-regularised logistic regression. They share the estimator
contract of the CNN (``fit(X, y, eval_set=None)``, ``predict``, ``score``),
so the evaluation code treats every detector alike.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit
from sklearn.base import BaseEstimator, ClassifierMixin

from .dataset import BinaryLabel, atomic_write
from .exceptions import ConfigurationError, DegenerateFitError, DomainError, ParseError, RankError, ShapeError
from .nn.serialization import read_container, write_container
from .signals import band_pass
from .validation import binarize, check_features, check_windows

DEFAULT_BAND = (3000.0, 9000.0)
DEFAULT_COMPONENTS = 8
DEFAULT_L2 = 1e-4


# -- MAPO ------------------------------------------------------------------

def mapo(window, band=DEFAULT_BAND, fs=None):
    """Maximum amplitude of pressure oscillation: max |band-passed window|.

    Works on one window or on the rows of a 2-D array.
    """
    x = window.samples if hasattr(window, "samples") else np.asarray(window, dtype=float)
    values = np.max(np.abs(band_pass(x, band[0], band[1], fs=fs)), axis=-1)
    return float(values) if np.ndim(values) == 0 else values


def mapo_classify(value, threshold):
    """Knocking iff the MAPO value strictly exceeds the threshold."""
    if np.ndim(value) == 0:
        return BinaryLabel.KNOCKING if value > threshold else BinaryLabel.NORMAL
    return (np.asarray(value) > threshold).astype(int)


# -- logistic regression ---------------------------------------------------

@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    feature_names: tuple = ()
    n_iter: int = 0
    converged: bool = False

    def decision_function(self, features):
        return check_features(features) @ self.weights + self.intercept

    def predict_proba(self, features):
        return expit(self.decision_function(features))


def _objective_gradient(theta, z, y, l2):
    """Mean log-likelihood minus ``l2 * |w|^2`` and its gradient.

    ``theta = (w..., b)``; the intercept is not penalised.
    """
    s = z @ theta[:-1] + theta[-1]
    ll = np.mean(y * log_expit(s) + (1 - y) * log_expit(-s))
    r = y - expit(s)
    grad = np.empty_like(theta)
    grad[:-1] = z.T @ r / len(y) - 2.0 * l2 * theta[:-1]
    grad[-1] = r.mean()
    return ll - l2 * theta[:-1] @ theta[:-1], grad


def logreg_fit(features, labels, l2=DEFAULT_L2, tol=1e-6, max_iter=5000, feature_names=None):
    """L2-regularised logistic regression by accelerated gradient ascent.

    Features are z-scored with the training statistics; the objective is
    concave with a known curvature bound, so a fixed step of 1/L with
    Nesterov momentum (restarted whenever the objective drops) converges.
    Iteration stops when the gradient norm falls below ``tol``. Returned
    coefficients refer to the original, unstandardised features.
    """
    x = check_features(features)
    y = binarize(labels).astype(float)
    if len(y) != len(x):
        raise ShapeError(f"{len(x)} feature rows but {len(y)} labels")
    if y.min() == y.max():
        raise DegenerateFitError("logistic regression needs both classes in the training set")
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    z = (x - mu) / sd

    design = np.column_stack([z, np.ones(len(z))])
    lipschitz = 0.25 * np.linalg.eigvalsh(design.T @ design / len(z))[-1] + 2.0 * l2
    step = 1.0 / lipschitz
    theta = np.zeros(z.shape[1] + 1)
    prev = theta.copy()
    f_prev = -np.inf
    t = 1.0
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        look = theta + ((t - 1.0) / (t + 2.0)) * (theta - prev) if n_iter > 1 else theta
        _, g = _objective_gradient(look, z, y, l2)
        prev, theta = theta, look + step * g
        f, g_new = _objective_gradient(theta, z, y, l2)
        if f < f_prev:  # momentum overshoot: restart from a plain gradient step
            theta = prev + step * _objective_gradient(prev, z, y, l2)[1]
            f, g_new = _objective_gradient(theta, z, y, l2)
            t = 1.0
        else:
            t += 1.0
        f_prev = f
        if np.linalg.norm(g_new) <= tol:
            converged = True
            break

    w = theta[:-1] / sd
    b = theta[-1] - mu @ w
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(len(w)))
    return LogisticModel(w, float(b), names, n_iter, converged)


def logreg_predict(model, features):
    return model.predict_proba(features)


def fit_mapo_threshold(windows, labels, band=DEFAULT_BAND, l2=DEFAULT_L2):
    """Threshold where a one-feature logistic fit on MAPO crosses p = 0.5.

    Returns ``(threshold, model)``.
    """
    values = mapo(check_windows(windows), band)
    model = logreg_fit(values, labels, l2=l2, feature_names=("mapo",))
    w = model.weights[0]
    if not w > 0:
        raise DegenerateFitError("MAPO does not increase with knock likelihood on this training set")
    return -model.intercept / w, model


# -- PCA -------------------------------------------------------------------

@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float = field(default=float("nan"))

    @property
    def n_components(self):
        return len(self.components)

    @property
    def explained_variance_ratio(self):
        return self.explained_variance / self.total_variance


def _fix_signs(vectors):
    """Flip each row so its first non-negligible coefficient is positive."""
    out = vectors.copy()
    for row in out:
        nz = np.flatnonzero(np.abs(row) > 1e-12 * np.abs(row).max())
        if len(nz) and row[nz[0]] < 0:
            row *= -1
    return out


def pca_fit(windows, n_components=DEFAULT_COMPONENTS):
    """Principal axes from an eigen-decomposition of the sample covariance."""
    x = check_windows(windows)
    n_components = int(n_components)
    if n_components < 1 or n_components > x.shape[1]:
        raise ConfigurationError(f"n_components must lie in 1..{x.shape[1]}")
    if len(x) < 2:
        raise RankError("PCA needs at least two windows")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    tol = max(values[0], 0.0) * x.shape[1] * np.finfo(float).eps
    rank = int(np.sum(values > tol))
    if rank < n_components:
        raise RankError(f"data has rank {rank}, fewer than the {n_components} components requested")
    comps = _fix_signs(vectors[:, :n_components].T)
    return PcaBasis(mean, comps, values[:n_components].copy(), float(np.clip(values, 0, None).sum()))


def _check_basis_input(windows, basis):
    x = check_windows(windows)
    if x.shape[1] != len(basis.mean):
        raise ShapeError(f"windows have {x.shape[1]} samples, basis expects {len(basis.mean)}")
    return x


def pca_dd_features(windows, basis):
    """Inner products of the mean-removed window(s) with each component."""
    x = _check_basis_input(windows, basis)
    return (x - basis.mean) @ basis.components.T


def pca_reconstruct(windows, basis):
    x = _check_basis_input(windows, basis)
    return basis.mean + pca_dd_features(x, basis) @ basis.components


def pca_eigen_features(windows, basis, band=None, fs=None):
    """``(rmse, residual_mapo)`` per window.

    The residual (window minus its reconstruction) already isolates the fast
    oscillations, so no band-pass is applied unless ``band`` is given.
    """
    x = _check_basis_input(windows, basis)
    residual = x - pca_reconstruct(x, basis)
    if band is not None:
        residual = band_pass(residual, band[0], band[1], fs=fs)
    rmse = np.sqrt(np.mean(residual ** 2, axis=1))
    return np.column_stack([rmse, np.max(np.abs(residual), axis=1)])


# -- detectors -------------------------------------------------------------

class _FeatureDetector(ClassifierMixin, BaseEstimator):
    """Feature extraction followed by logistic regression."""

    def _features(self, X):
        raise NotImplementedError

    def _fit_features(self, X):
        pass

    def fit(self, X, y, eval_set=None):
        X = check_windows(X)
        self._fit_features(X)
        self.model_ = logreg_fit(self._features(X), y, l2=self.l2_penalty, feature_names=self.feature_names_)
        self.classes_ = np.array([0, 1])
        return self

    def knock_probability(self, X):
        if not hasattr(self, "model_"):
            raise AttributeError(f"{type(self).__name__} is not fitted yet; call fit first")
        return self.model_.predict_proba(self._features(check_windows(X)))

    def predict_proba(self, X):
        p = self.knock_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return binarize(self.knock_probability(X))

    def score(self, X, y, sample_weight=None):
        return float(np.average(self.predict(X) == binarize(y), weights=sample_weight))


class MapoDetector(_FeatureDetector):
    """Threshold on the band-passed peak amplitude, fitted per training set."""

    name = "mapo"
    feature_names_ = ("mapo",)

    def __init__(self, band_low=DEFAULT_BAND[0], band_high=DEFAULT_BAND[1], l2_penalty=DEFAULT_L2):
        self.band_low = band_low
        self.band_high = band_high
        self.l2_penalty = l2_penalty

    def fit(self, X, y, eval_set=None):
        self.threshold_, self.model_ = fit_mapo_threshold(X, y, (self.band_low, self.band_high), self.l2_penalty)
        self.classes_ = np.array([0, 1])
        return self

    def _features(self, X):
        return mapo(X, (self.band_low, self.band_high))[:, None]

    def predict(self, X):
        if not hasattr(self, "threshold_"):
            raise AttributeError("MapoDetector is not fitted yet; call fit first")
        return mapo_classify(mapo(check_windows(X), (self.band_low, self.band_high)), self.threshold_)


class PcaDataDrivenDetector(_FeatureDetector):
    """Logistic regression on the projections onto the leading principal axes."""

    name = "pca-dd"

    def __init__(self, n_components=DEFAULT_COMPONENTS, l2_penalty=DEFAULT_L2):
        self.n_components = n_components
        self.l2_penalty = l2_penalty

    @property
    def feature_names_(self):
        return tuple(f"pc{i + 1}" for i in range(int(self.n_components)))

    def _fit_features(self, X):
        self.basis_ = pca_fit(X, self.n_components)

    def _features(self, X):
        return pca_dd_features(X, self.basis_)


class PcaEigenDetector(_FeatureDetector):
    """Logistic regression on reconstruction RMSE and residual peak amplitude."""

    name = "pca-eigen"
    feature_names_ = ("rmse", "residual_mapo")

    def __init__(self, n_components=DEFAULT_COMPONENTS, residual_band=None, l2_penalty=DEFAULT_L2):
        self.n_components = n_components
        self.residual_band = residual_band
        self.l2_penalty = l2_penalty

    def _fit_features(self, X):
        self.basis_ = pca_fit(X, self.n_components)

    def _features(self, X):
        return pca_eigen_features(X, self.basis_, self.residual_band)


DETECTORS = {cls.name: cls for cls in (MapoDetector, PcaDataDrivenDetector, PcaEigenDetector)}


# -- persistence -------------------------------------------------------------

def _fmt(values):
    return ", ".join(repr(float(v)) for v in np.atleast_1d(values))


def save_reference(detector, path):
    """Key-value text file, plus ``<path>.basis`` container for PCA detectors."""
    if not hasattr(detector, "model_"):
        raise ConfigurationError("only fitted detectors can be saved")
    lines = [f"detector = {detector.name}"]
    for key, value in detector.get_params().items():
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value) if isinstance(value, (tuple, list)) else repr(value)}")
    m = detector.model_
    lines += [f"weights = {_fmt(m.weights)}", f"intercept = {m.intercept!r}",
              f"feature_names = {', '.join(m.feature_names)}"]
    if hasattr(detector, "threshold_"):
        lines.append(f"threshold = {float(detector.threshold_)!r}")
    if hasattr(detector, "basis_"):
        basis_path = str(path) + ".basis"
        lines.append(f"basis_file = {os.path.basename(basis_path)}")
        b = detector.basis_
        write_container(basis_path, {"kind": "pca", "total_variance": b.total_variance},
                        {"mean": b.mean, "components": b.components, "explained_variance": b.explained_variance})
    text = "\n".join(lines) + "\n"
    atomic_write(path, lambda fh: fh.write(text))


def load_reference(path):
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", path, lineno)
            key, value = (s.strip() for s in line.split("=", 1))
            entries[key] = value
    kind = entries.pop("detector", None)
    if kind not in DETECTORS:
        raise ParseError(f"unknown detector {kind!r}; expected one of {sorted(DETECTORS)}", path)
    cls = DETECTORS[kind]
    params = {}
    for key in cls().get_params():
        if key in entries:
            vals = [float(v) for v in entries[key].split(",")]
            params[key] = tuple(vals) if len(vals) > 1 else (int(vals[0]) if key == "n_components" else vals[0])
    det = cls(**params)
    try:
        weights = np.array([float(v) for v in entries["weights"].split(",")])
        names = tuple(s.strip() for s in entries.get("feature_names", "").split(",") if s.strip())
        det.model_ = LogisticModel(weights, float(entries["intercept"]), names, 0, True)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad or missing logistic coefficients ({exc})", path) from None
    if "threshold" in entries:
        det.threshold_ = float(entries["threshold"])
    if "basis_file" in entries:
        header, arrays = read_container(os.path.join(os.path.dirname(str(path)), entries["basis_file"]))
        det.basis_ = PcaBasis(arrays["mean"], arrays["components"], arrays["explained_variance"],
                              float(header.get("total_variance", float("nan"))))
    if not np.all(np.isfinite(det.model_.weights)):
        raise DomainError(f"{path}: non-finite logistic weights")
    det.classes_ = np.array([0, 1])
    return det
