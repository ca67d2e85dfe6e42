"""Input checks shared by the estimators.

They convert to float arrays and raise this package's exceptions (which are
``ValueError`` subclasses) with messages that name the offending argument.
"""
import numpy as np

from .exceptions import DomainError, ShapeError
from .signals import CrankAngleSignal


def check_windows(x, length=None, name="X"):
    """Return ``x`` as a finite 2-D float array of windows (one per row)."""
    if isinstance(x, CrankAngleSignal):
        x = x.samples
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D (n_windows, n_samples), got shape {x.shape}")
    if length is not None and x.shape[1] != length:
        raise ShapeError(f"{name} windows have {x.shape[1]} samples, expected {length}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")
    return x


def check_targets(y, n=None, name="y"):
    """Return ``y`` as a 1-D float array of scaled labels in [0, 1]."""
    y = np.asarray(y, dtype=float).ravel()
    if n is not None and len(y) != n:
        raise ShapeError(f"{name} has {len(y)} entries, expected {n}")
    if not np.all(np.isfinite(y)) or np.any((y < 0) | (y > 1)):
        raise DomainError(f"{name} must lie in [0, 1]")
    return y


def check_features(x, name="features"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"{name} must be 2-D with at least one column, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} contains non-finite values")
    return x


def binarize(y):
    """Scaled labels or probabilities to 0/1 (knocking iff >= 0.5)."""
    return (np.asarray(y, dtype=float) >= 0.5).astype(int)
