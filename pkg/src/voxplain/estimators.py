"""scikit-learn style wrappers around the engine and the attribution methods.

>>> clf = VolumeClassifier(architecture="resnet-gap", epochs=5).fit(X, y)   # doctest: +SKIP
>>> heat = GradCAMExplainer(clf).fit(X).transform(X[:2])                    # doctest: +SKIP
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import attribution
from .io import read_checkpoint, write_checkpoint
from .nn.builders import build
from .nn.engine import forward
from .nn.train import default_config, predict_proba, train
from .segmentation import segment
from .validation import check_labels, check_volume_batch

__all__ = [
    "VolumeClassifier",
    "OcclusionExplainer",
    "HierarchicalOcclusionExplainer",
    "CAMExplainer",
    "GradCAMExplainer",
]


class VolumeClassifier(BaseEstimator, ClassifierMixin):
    """Two-class (NC = 0, AD = 1) volumetric CNN.

    Parameters
    ----------
    architecture : {"vgg", "resnet", "resnet-gap", "resnet-shallow-gap"}
    profile : {"desk-32", "paper-110"}
    optimizer, lr, batch_size, epochs : optional
        None takes the architecture's default schedule.
    dtype : {"float32", "float64"}
        Training precision.
    seed : int
    """

    def __init__(self, architecture="resnet-gap", profile="desk-32", optimizer=None, lr=None,
                 batch_size=None, epochs=None, dtype="float32", seed=0):
        self.architecture = architecture
        self.profile = profile
        self.optimizer = optimizer
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.dtype = dtype
        self.seed = seed

    def _train_config(self):
        overrides = {k: getattr(self, k) for k in ("optimizer", "lr", "batch_size", "epochs")
                     if getattr(self, k) is not None}
        return default_config(self.architecture, dtype=self.dtype, seed=self.seed, **overrides)

    def fit(self, X, y, callback=None):
        graph = build(self.architecture, self.profile)
        X = check_volume_batch(X, graph.input_shape[1:])
        y = check_labels(y, len(X))
        self.graph_ = graph
        self.params_, self.history_ = train(graph, X, y, self._train_config(), callback=callback)
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted; call fit or load a checkpoint")

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.graph_, self.params_, check_volume_batch(X, self.graph_.input_shape[1:]))

    def decision_function(self, X):
        """Pre-softmax score difference ``Score(AD) - Score(NC)``."""
        self._check_fitted()
        X = check_volume_batch(X, self.graph_.input_shape[1:])
        logits = np.concatenate([forward(self.graph_, self.params_, x).logits for x in X])
        return logits[:, 1] - logits[:, 0]

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def save(self, path):
        self._check_fitted()
        meta = {"architecture": self.architecture, "profile": self.profile}
        return write_checkpoint(path, self.graph_, self.params_, self._train_config().to_dict(), self.seed, meta)

    @classmethod
    def load(cls, path):
        """Classifier restored from a checkpoint (no further training needed)."""
        graph, params, manifest = read_checkpoint(path)
        tc = manifest.get("train_config") or {}
        kw = {k: tc[k] for k in ("optimizer", "lr", "batch_size", "epochs", "dtype") if k in tc}
        clf = cls(seed=manifest.get("seed") or 0, **manifest.get("meta", {}), **kw)
        clf.graph_, clf.params_, clf.history_ = graph, params, []
        clf.classes_ = np.array([0, 1])
        return clf


class _Explainer(BaseEstimator, TransformerMixin):
    """Maps a batch of volumes to a batch of heatmaps of the same shape."""

    def fit(self, X=None, y=None):
        self.model._check_fitted()
        self.graph_ = self.model.graph_
        return self

    def transform(self, X):
        if not hasattr(self, "graph_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        X = check_volume_batch(X, self.graph_.input_shape[1:])
        return np.stack([self._explain(x) for x in X])


class OcclusionExplainer(_Explainer):
    """Cubic-neighborhood occlusion (``half_extent=3`` gives 7x7x7)."""

    def __init__(self, model, half_extent=3, fill=0.0, stride=1, target="AD", workers=None):
        self.model = model
        self.half_extent = half_extent
        self.fill = fill
        self.stride = stride
        self.target = target
        self.workers = workers

    def _explain(self, x):
        m = self.model
        return attribution.baseline_occlusion(m.graph_, m.params_, x, self.half_extent, self.fill,
                                              self.stride, self.target, self.workers)


class HierarchicalOcclusionExplainer(_Explainer):
    """Occlusion of segments from a per-volume segmentation hierarchy."""

    def __init__(self, model, n_seeds=300, n_levels=10, fill=0.0, target="AD", seed=0, workers=None):
        self.model = model
        self.n_seeds = n_seeds
        self.n_levels = n_levels
        self.fill = fill
        self.target = target
        self.seed = seed
        self.workers = workers

    def _explain(self, x):
        m = self.model
        h = segment(x, self.n_seeds, self.n_levels, self.seed)
        return attribution.sa_hierarchical(m.graph_, m.params_, x, h, self.fill, self.target, self.workers)


class CAMExplainer(_Explainer):
    """Class activation maps (models with a global-average-pooling head only)."""

    def __init__(self, model, target="AD"):
        self.model = model
        self.target = target

    def _explain(self, x):
        return attribution.cam(self.model.graph_, self.model.params_, x, self.target)[1]


class GradCAMExplainer(_Explainer):
    """Gradient-weighted class activation maps at ``layer``."""

    def __init__(self, model, layer="last-conv", target="AD"):
        self.model = model
        self.layer = layer
        self.target = target

    def _explain(self, x):
        return attribution.grad_cam(self.model.graph_, self.model.params_, x, self.layer, self.target)[1]
