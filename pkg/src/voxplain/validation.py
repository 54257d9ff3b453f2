"""Input checks shared by the estimator facade and the command line."""

import numpy as np

from .exceptions import DataError, ShapeError
from .nn.graph import CLASSES


def check_volume(volume, shape=None, name="volume"):
    """Finite float64 array of three dimensions (optionally of a given shape)."""
    v = np.asarray(volume, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeError(f"{name} must be 3D, got shape {v.shape}")
    if shape is not None and v.shape != tuple(shape):
        raise ShapeError(f"{name} has shape {v.shape}, expected {tuple(shape)}")
    if not np.isfinite(v).all():
        raise DataError(f"{name} contains NaN or infinite values")
    return v


def check_volume_batch(X, shape=None):
    """Stack of volumes as a finite ``(n, X, Y, Z)`` array; a single volume becomes ``n = 1``."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or len(X) == 0:
        raise ShapeError(f"expected volumes of shape (n, X, Y, Z), got {X.shape}")
    if shape is not None and X.shape[1:] != tuple(shape):
        raise ShapeError(f"volumes have shape {X.shape[1:]}, expected {tuple(shape)}")
    if not np.issubdtype(X.dtype, np.floating):
        X = X.astype(np.float64)
    if not np.isfinite(X).all():
        raise DataError("volumes contain NaN or infinite values")
    return X


def check_labels(y, n=None):
    """Integer labels in {0, 1}; the strings ``"NC"``/``"AD"`` are mapped too."""
    y = np.asarray(y).ravel()
    if y.dtype.kind in "USO":
        bad = sorted(set(y.tolist()) - set(CLASSES))
        if bad:
            raise DataError(f"unknown class names {bad}; expected {CLASSES}")
        y = np.array([CLASSES.index(c) for c in y.tolist()], dtype=np.int64)
    else:
        if not np.isin(y, (0, 1)).all():
            raise DataError("labels must be 0 (NC) or 1 (AD)")
        y = y.astype(np.int64)
    if n is not None and len(y) != n:
        raise ShapeError(f"{len(y)} labels for {n} volumes")
    return y
