"""Classification metrics, repeated cross-validation and heatmap localization curves."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .exceptions import DataError, ShapeError
from .nn.train import TrainConfig, predict_proba, train

N_QUANTILES = 257

__all__ = [
    "LabeledDataset",
    "PRCurve",
    "CVRound",
    "CVReport",
    "pr_curve",
    "pr_evaluate",
    "region_curves",
    "roc_auc",
    "accuracy",
    "stratified_folds",
    "cross_validate",
    "format_table",
]


@dataclass
class LabeledDataset:
    """Volumes with class labels, optional lesion masks and a set-aside flag.

    ``set_aside`` samples are held out of every cross-validation round
    (they are kept for localization studies).
    """

    volumes: np.ndarray
    labels: np.ndarray
    masks: np.ndarray = None
    ids: list = None
    set_aside: np.ndarray = None

    def __post_init__(self):
        self.volumes = np.asarray(self.volumes)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.volumes.ndim != 4 or len(self.volumes) != n:
            raise ShapeError(f"expected volumes (n, X, Y, Z) for {n} labels, got {self.volumes.shape}")
        if not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0 (NC) or 1 (AD)")
        if self.masks is not None:
            self.masks = np.asarray(self.masks, dtype=bool)
            if self.masks.shape != self.volumes.shape:
                raise ShapeError(f"masks {self.masks.shape} do not match volumes {self.volumes.shape}")
        self.ids = [f"s{i:04d}" for i in range(n)] if self.ids is None else list(self.ids)
        if len(self.ids) != n or len(set(self.ids)) != n:
            raise DataError("sample ids must be unique, one per volume")
        self.set_aside = np.zeros(n, dtype=bool) if self.set_aside is None else np.asarray(self.set_aside, bool)

    def __len__(self):
        return len(self.labels)

    @property
    def class_counts(self):
        return np.bincount(self.labels, minlength=2)

    @property
    def pool(self):
        """Indices available for cross-validation."""
        return np.flatnonzero(~self.set_aside)

    def subset(self, idx):
        idx = np.asarray(idx)
        return LabeledDataset(
            self.volumes[idx],
            self.labels[idx],
            None if self.masks is None else self.masks[idx],
            [self.ids[i] for i in idx],
            self.set_aside[idx],
        )

    def with_set_aside(self, n_ad, n_nc, seed=0):
        """Copy with ``n_ad`` AD and ``n_nc`` NC samples drawn at random and set aside."""
        rng = np.random.default_rng(seed)
        flag = np.zeros(len(self), dtype=bool)
        for cls, k in ((1, n_ad), (0, n_nc)):
            members = np.flatnonzero(self.labels == cls)
            if k > len(members):
                raise DataError(f"cannot set aside {k} samples of class {cls}, only {len(members)} exist")
            flag[rng.choice(members, size=k, replace=False)] = True
        return replace(self, set_aside=flag)


@dataclass(frozen=True)
class PRCurve:
    """Precision/recall points ordered by descending threshold."""

    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def __len__(self):
        return len(self.thresholds)

    @property
    def auc(self):
        """Step-wise area (average precision over the swept thresholds)."""
        dr = np.diff(np.concatenate([[0.0], self.recall]))
        return float(np.sum(dr * self.precision))

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist()))


def _check_pair(heatmap, mask):
    h = np.asarray(heatmap, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if h.shape != m.shape:
        raise ShapeError(f"heatmap {h.shape} and mask {m.shape} differ in shape")
    if not m.any():
        raise DataError("mask has no positive voxel")
    return h.ravel(), m.ravel()


def pr_curve(heatmap, mask):
    """PR curve from a threshold sweep over the heatmap's score quantiles.

    Thresholds are the 257 evenly spaced quantiles of the scores (including
    minimum and maximum), deduplicated. A voxel is predicted positive when
    its score is ``>= t``. Only ranks matter, so any increasing rescaling of
    the heatmap yields the same curve.
    """
    h, m = _check_pair(heatmap, mask)
    return _curve(h, m)


def _curve(h, m):
    q = np.quantile(h, np.linspace(0.0, 1.0, N_QUANTILES), method="lower")
    thresholds = np.unique(q)[::-1]
    order = np.argsort(h, kind="stable")
    hs = h[order]
    # positives among the top (n - i) scores, for every cut i
    pos_above = np.concatenate([np.cumsum(m[order][::-1])[::-1], [0]])
    cut = np.searchsorted(hs, thresholds, side="left")
    n_pred = len(h) - cut
    tp = pos_above[cut]
    keep = n_pred > 0
    thresholds, n_pred, tp = thresholds[keep], n_pred[keep], tp[keep]
    return PRCurve(thresholds, tp / n_pred, tp / m.sum())


def pr_evaluate(heatmaps, masks, mode="pooled"):
    """Localization over several scans.

    ``pooled`` sweeps one curve over the voxels of all scans together;
    ``per-scan`` computes one curve per scan and averages their areas.

    Returns
    -------
    (curves, auc)
        ``curves`` is a one-element list in pooled mode.
    """
    if mode not in ("pooled", "per-scan"):
        raise ValueError(f"mode must be 'pooled' or 'per-scan', got {mode!r}")
    pairs = [_check_pair(h, m) for h, m in zip(heatmaps, masks)]
    if not pairs:
        raise DataError("no heatmaps to evaluate")
    if mode == "pooled":
        c = _curve(np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs]))
        return [c], c.auc
    curves = [_curve(h, m) for h, m in pairs]
    return curves, float(np.mean([c.auc for c in curves]))


def region_curves(heatmap, regions):
    """One curve per named region mask plus one for their union (key ``"union"``)."""
    masks = {k: np.asarray(v).astype(bool) for k, v in regions.items()}
    out = {k: pr_curve(heatmap, m) for k, m in masks.items()}
    out["union"] = pr_curve(heatmap, np.logical_or.reduce(list(masks.values())))
    return out


def roc_auc(scores, labels):
    """Area under the ROC curve as the Mann-Whitney statistic (ties count half)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if len(s) != len(y):
        raise ShapeError(f"{len(s)} scores but {len(y)} labels")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc_auc needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probs, labels, threshold=0.5):
    """Fraction correct; AD is predicted when ``P(AD) > threshold``.

    ``probs`` is either ``(n, 2)`` class probabilities or ``(n,)`` values of
    ``P(AD)``.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, 1]
    y = np.asarray(labels).ravel()
    if len(p) == 0 or len(p) != len(y):
        raise ShapeError(f"{len(p)} predictions for {len(y)} labels")
    return float(np.mean((p > threshold).astype(int) == y))


def stratified_folds(labels, folds, rng):
    """Fold number per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=np.int64)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < folds:
            raise DataError(f"class {cls} has {len(members)} samples, fewer than {folds} folds")
        out[rng.permutation(members)] = np.arange(len(members)) % folds
    return out


@dataclass(frozen=True)
class CVRound:
    split: int
    fold: int
    train_ids: tuple
    test_ids: tuple
    labels: np.ndarray
    probs: np.ndarray
    auc: float
    acc: float

    def to_dict(self):
        return {
            "split": self.split,
            "fold": self.fold,
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "labels": self.labels.tolist(),
            "p_ad": self.probs[:, 1].tolist(),
            "auc": self.auc,
            "acc": self.acc,
        }


@dataclass(frozen=True)
class CVReport:
    """Per-round metrics with mean and (population) standard deviation."""

    model: str
    rounds: tuple
    config: dict = field(default_factory=dict)

    def _stat(self, key):
        vals = np.array([getattr(r, key) for r in self.rounds])
        return float(vals.mean()), float(vals.std())

    @property
    def auc(self):
        return self._stat("auc")

    @property
    def acc(self):
        return self._stat("acc")

    def row(self, width=None):
        (am, asd), (cm, csd) = self.auc, self.acc
        name = self.model.ljust(width) if width else self.model
        return f"{name}  {am:.3f}±{asd:.3f}  {cm:.3f}±{csd:.3f}"

    def to_dict(self):
        (am, asd), (cm, csd) = self.auc, self.acc
        return {
            "model": self.model,
            "n_rounds": len(self.rounds),
            "auc_mean": am,
            "auc_std": asd,
            "acc_mean": cm,
            "acc_std": csd,
            "config": self.config,
            "rounds": [r.to_dict() for r in self.rounds],
        }


def format_table(reports):
    """Plain-text table with one row per model."""
    width = max([len("Model")] + [len(r.model) for r in reports])
    lines = [f"{'Model'.ljust(width)}  {'AUC':<11}  {'ACC':<11}"]
    lines += [r.row(width) for r in reports]
    return "\n".join(lines)


def _round_seed(seed, split, fold):
    return int(np.random.SeedSequence([seed, split, fold]).generate_state(1)[0])


def cross_validate(dataset, model_builder, cfg=None, splits=5, folds=5, seed=0, workers=1):
    """Repeated stratified k-fold evaluation (``splits x folds`` rounds).

    Parameters
    ----------
    dataset : LabeledDataset
        Set-aside samples never enter a round.
    model_builder : callable
        ``model_builder()`` returns the ModelGraph to train from scratch
        each round.
    cfg : TrainConfig
        Training settings; the seed of each round is derived from ``seed``
        and the round position.
    workers : int
        Rounds run concurrently when > 1; results keep round order.
    """
    cfg = cfg or TrainConfig()
    if splits < 1 or folds < 2:
        raise ValueError("need splits >= 1 and folds >= 2")
    pool = dataset.pool
    labels = dataset.labels[pool]
    plan = []
    for s in range(splits):
        fold_of = stratified_folds(labels, folds, np.random.default_rng([seed, s]))
        for f in range(folds):
            test = pool[fold_of == f]
            trn = pool[fold_of != f]
            for name, part in (("train", trn), ("test", test)):
                if len(np.unique(dataset.labels[part])) < 2:
                    raise DataError(f"split {s} fold {f}: {name} set lacks a class")
            plan.append((s, f, trn, test))

    def run(item):
        s, f, trn, test = item
        graph = model_builder()
        params, _ = train(graph, dataset.volumes[trn], dataset.labels[trn], replace(cfg, seed=_round_seed(seed, s, f)))
        probs = predict_proba(graph, params, dataset.volumes[test])
        y = dataset.labels[test]
        return CVRound(
            s, f,
            tuple(dataset.ids[i] for i in trn),
            tuple(dataset.ids[i] for i in test),
            y, probs, roc_auc(probs[:, 1], y), accuracy(probs, y),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rounds = list(ex.map(run, plan))
    else:
        rounds = [run(p) for p in plan]
    name = model_builder().name
    return CVReport(name, tuple(rounds), {"splits": splits, "folds": folds, "seed": seed, **cfg.to_dict()})
