"""Mini-batch training with class-balanced batches."""

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import DataError
from .engine import ParamStore, backward, cross_entropy, cross_entropy_grad, forward, init_params
from .optim import adam_step, nesterov_lookahead, nesterov_step

OPTIMIZERS = ("adam", "nesterov-sgd")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings. Defaults are the VGG schedule."""

    optimizer: str = "adam"
    lr: float = 0.000027
    batch_size: int = 5
    epochs: int = 150
    seed: int = 0
    balanced: bool = True
    momentum: float = 0.9
    dtype: str = "float64"

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1 or (self.balanced and self.batch_size < 2):
            raise ValueError("batch size must be >= 2 when class balancing is on")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    def to_dict(self):
        return asdict(self)


def vgg_config(**overrides):
    return TrainConfig(**{"optimizer": "adam", "lr": 0.000027, "batch_size": 5, "epochs": 150, **overrides})


def resnet_config(**overrides):
    return TrainConfig(**{"optimizer": "nesterov-sgd", "lr": 0.001, "batch_size": 3, "epochs": 150, **overrides})


def default_config(architecture, **overrides):
    """Reference schedule for an architecture key (``"vgg"`` or a ResNet variant)."""
    return vgg_config(**overrides) if architecture == "vgg" else resnet_config(**overrides)


def balanced_batches(labels, batch_size, rng, balanced=True):
    """Split one epoch into batches of sample indices.

    With ``balanced`` every batch holds at least one sample of each class:
    classes are shuffled separately and interleaved by stratified position,
    and a batch that still misses a class has its last slot swapped for a
    random member of that class.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if not balanced:
        order = rng.permutation(n)
    else:
        classes = np.unique(labels)
        if len(classes) < 2:
            raise DataError("class-balanced batching needs samples of both classes")
        keys, order = [], []
        for c in classes:
            members = rng.permutation(np.flatnonzero(labels == c))
            keys.extend((i + 0.5) / len(members) for i in range(len(members)))
            order.extend(members)
        order = np.asarray(order)[np.lexsort((labels[order], np.asarray(keys)))]
    batches = [order[i:i + batch_size].copy() for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    if balanced:
        classes = np.unique(labels)
        for b in batches:
            for c in classes:
                if not np.any(labels[b] == c):
                    pool = np.setdiff1d(np.flatnonzero(labels == c), b)
                    b[-1] = rng.choice(pool)
    return batches


def train(graph, X, y, cfg=None, params=None, callback=None):
    """Fit parameters by minimising two-class cross entropy.

    Parameters
    ----------
    graph : ModelGraph
    X : ndarray, shape (n, D, H, W)
    y : array_like of {0, 1}
        0 = NC, 1 = AD.
    cfg : TrainConfig
    params : ParamStore, optional
        Starting point; freshly initialised from ``cfg.seed`` otherwise.
    callback : callable, optional
        ``callback(epoch, params, history)`` after each epoch; a truthy
        return value stops training.

    Returns
    -------
    (ParamStore, list of float)
        Final parameters and the mean training loss of each epoch.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(X)
    y = np.asarray(y, dtype=np.int64)
    if len(X) != len(y):
        raise DataError(f"{len(X)} volumes but {len(y)} labels")
    rng = np.random.default_rng(cfg.seed)
    params = (params or init_params(graph, seed=cfg.seed)).copy()
    dtype = np.dtype(cfg.dtype).type
    arrays = params.arrays
    state = None
    history = []
    for epoch in range(cfg.epochs):
        losses = []
        for idx in balanced_batches(y, cfg.batch_size, rng, cfg.balanced):
            if cfg.optimizer == "nesterov-sgd":
                at = ParamStore(nesterov_lookahead(arrays, state, cfg.momentum))
            else:
                at = ParamStore(arrays)
            cache = forward(graph, at, X[idx], mode="train", rng=rng, dtype=dtype)
            losses.append(cross_entropy(cache.probs, y[idx]))
            _, grads = backward(graph, at, cache, cross_entropy_grad(cache.probs, y[idx]))
            grads = {k: g.astype(np.float64, copy=False) for k, g in grads.items()}
            if cfg.optimizer == "adam":
                arrays, state = adam_step(arrays, grads, state, lr=cfg.lr)
            else:
                arrays, state = nesterov_step(arrays, grads, state, lr=cfg.lr, momentum=cfg.momentum)
            for key, val in cache.running.items():
                arrays[key] = val.astype(np.float64, copy=False)
        history.append(float(np.mean(losses)))
        params = ParamStore(arrays)
        if callback is not None and callback(epoch, params, history):
            break
    return ParamStore(arrays), history


def predict_proba(graph, params, X, batch_size=8):
    """Eval-mode class probabilities, shape ``(n, 2)`` (columns NC, AD)."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    out = [forward(graph, params, X[i:i + batch_size]).probs for i in range(0, len(X), batch_size)]
    return np.concatenate(out, axis=0)
