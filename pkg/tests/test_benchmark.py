import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from voxplain.benchmark import (
    CVReport,
    CVRound,
    LabeledDataset,
    accuracy,
    cross_validate,
    format_table,
    pr_curve,
    pr_evaluate,
    region_curves,
    roc_auc,
    stratified_folds,
)
from voxplain.exceptions import DataError, ShapeError
from voxplain.nn import TrainConfig
from voxplain.nn.graph import LayerSpec, ModelGraph


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_pr(h, m, thresholds):
    prec, rec = [], []
    for t in thresholds:
        pred = h >= t
        tp = np.sum(pred & m)
        prec.append(tp / pred.sum())
        rec.append(tp / m.sum())
    return np.array(prec), np.array(rec)


class TestPR:
    def test_identical_to_mask(self, rng):
        m = rng.random((6, 6, 6)) < 0.3
        c = pr_curve(m.astype(float), m)
        hits = (c.precision == 1.0) & (c.recall == 1.0)
        assert hits.any()

    def test_anti_mask(self, rng):
        m = rng.random((6, 6, 6)) < 0.3
        c = pr_curve(1.0 - m, m)
        assert np.all(c.precision[c.thresholds < 1][c.recall[c.thresholds < 1] > 0] < 1)
        assert np.all(c.precision[c.thresholds == 1] == 0)

    def test_uniform_random(self):
        rng = np.random.default_rng(0)
        n, q = 40_000, 0.2
        m = np.zeros(n, bool)
        m[: int(n * q)] = True
        h = rng.random(n)
        c = pr_curve(h.reshape(40, 40, 25), m.reshape(40, 40, 25))
        n_pred = np.array([(h >= t).sum() for t in c.thresholds])
        ok = n_pred >= 1000
        sigma = np.sqrt(q * (1 - q) / n_pred[ok])
        assert np.all(np.abs(c.precision[ok] - q) <= 3 * sigma + 1e-12)

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.integers(2, 400), elements=st.floats(-5, 5, allow_nan=False)),
           st.integers(0, 2**32 - 1))
    def test_brute_force_and_monotone(self, h, seed):
        m = np.random.default_rng(seed).random(h.size) < 0.4
        m[0] = True
        c = pr_curve(h, m)
        thresholds = np.unique(np.quantile(h, np.linspace(0, 1, 257), method="lower"))[::-1]
        assert np.array_equal(c.thresholds, thresholds)
        p, r = brute_pr(h, m, thresholds)
        assert np.allclose(c.precision, p) and np.allclose(c.recall, r)
        assert np.all(np.diff(c.recall) >= 0)
        assert np.all((c.precision >= 0) & (c.precision <= 1))

    def test_rescaling_invariant(self, rng):
        h = rng.normal(size=(8, 8, 8))
        m = rng.random((8, 8, 8)) < 0.2
        a, b = pr_curve(h, m), pr_curve(np.exp(3 * h) + 7, m)
        assert np.array_equal(a.precision, b.precision) and np.array_equal(a.recall, b.recall)

    def test_area(self):
        h = np.array([3.0, 2.0, 1.0, 0.0])
        m = np.array([True, False, True, False])
        c = pr_curve(h, m)
        # points (1, .5), (.5, .5), (2/3, 1), (.5, 1)
        assert c.auc == pytest.approx(0.5 * 1 + 0 * 0.5 + 0.5 * (2 / 3) + 0)

    def test_errors(self):
        with pytest.raises(DataError):
            pr_curve(np.ones(4), np.zeros(4, bool))
        with pytest.raises(ShapeError):
            pr_curve(np.ones(4), np.ones(5, bool))

    def test_union_associativity(self, rng):
        h = rng.random((8, 8, 8))
        regions = {k: rng.random((8, 8, 8)) < 0.1 for k in ("cortex", "ventricle", "hippocampus")}
        curves = region_curves(h, regions)
        merged = regions["cortex"] | regions["ventricle"] | regions["hippocampus"]
        u = pr_curve(h, merged)
        assert np.array_equal(curves["union"].precision, u.precision)
        assert set(curves) == {"cortex", "ventricle", "hippocampus", "union"}

    def test_pooled_and_per_scan(self, rng):
        hs = [rng.random((5, 5, 5)) for _ in range(3)]
        ms = [rng.random((5, 5, 5)) < 0.3 for _ in range(3)]
        curves, auc = pr_evaluate(hs, ms)
        assert len(curves) == 1
        assert auc == pytest.approx(pr_curve(np.stack(hs), np.stack(ms)).auc)
        curves, auc = pr_evaluate(hs, ms, "per-scan")
        assert auc == pytest.approx(np.mean([pr_curve(h, m).auc for h, m in zip(hs, ms)]))
        with pytest.raises(ValueError):
            pr_evaluate(hs, ms, "mean")


class TestClassificationMetrics:
    def test_examples(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.3] * 6, [0, 1] * 3) == 0.5
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=50))
    def test_pair_counting(self, data):
        scores = [s / 5 for s, _ in data]
        labels = [y for _, y in data]
        if len(set(labels)) < 2:
            with pytest.raises(DataError):
                roc_auc(scores, labels)
        else:
            assert roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_accuracy(self):
        assert accuracy([0.9, 0.1, 0.7], [1, 0, 1]) == 1.0
        assert accuracy(np.full(4, 0.8), [0, 1, 0, 1]) == 0.5
        assert accuracy(np.array([[0.2, 0.8], [0.6, 0.4], [0.3, 0.7], [0.9, 0.1]]), [1, 0, 0, 0]) == 0.75
        with pytest.raises(ShapeError):
            accuracy([], [])


def tiny_builder():
    layers = (
        LayerSpec("input", "input"),
        LayerSpec("conv", "conv3d", ("input",), channels=1, padding=1),
        LayerSpec("gap", "global-average-pool", ("conv",)),
        LayerSpec("output", "softmax", ("gap",), units=2),
    )
    return ModelGraph("toy", (1, 4, 4, 4), layers, feature_layer="conv")


def toy_dataset(n_per_class, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(2 * n_per_class) % 2
    X = rng.normal(size=(len(y), 4, 4, 4)) + y[:, None, None, None]
    return LabeledDataset(X, y)


class TestCrossValidation:
    def test_folds_stratified(self, rng):
        labels = np.array([0] * 11 + [1] * 9)
        f = stratified_folds(labels, 5, rng)
        for k in range(5):
            counts = np.bincount(labels[f == k], minlength=2)
            assert counts[0] in (2, 3) and counts[1] in (1, 2)

    def test_two_rounds_disjoint(self):
        ds = toy_dataset(2)
        rep = cross_validate(ds, tiny_builder, TrainConfig(epochs=1, batch_size=2), splits=1, folds=2)
        assert len(rep.rounds) == 2
        for r in rep.rounds:
            assert not set(r.train_ids) & set(r.test_ids)
            assert set(r.train_ids) | set(r.test_ids) == set(ds.ids)

    def test_recompute_and_deterministic(self):
        ds = toy_dataset(6).with_set_aside(1, 1, seed=2)
        cfg = TrainConfig(epochs=2, batch_size=4, lr=0.01)
        a = cross_validate(ds, tiny_builder, cfg, splits=2, folds=3, seed=5)
        b = cross_validate(ds, tiny_builder, cfg, splits=2, folds=3, seed=5, workers=2)
        aside = {ds.ids[i] for i in np.flatnonzero(ds.set_aside)}
        for r, s in zip(a.rounds, b.rounds):
            assert r.auc == roc_auc(r.probs[:, 1], r.labels)
            assert r.acc == accuracy(r.probs, r.labels)
            assert np.array_equal(r.probs, s.probs)
            assert not aside & (set(r.train_ids) | set(r.test_ids))
        assert a.to_dict()["n_rounds"] == 6

    def test_too_small(self):
        with pytest.raises(DataError):
            cross_validate(toy_dataset(2), tiny_builder, TrainConfig(epochs=1), splits=1, folds=3)

    def test_report_format(self):
        def rnd(auc, acc):
            return CVRound(0, 0, (), (), np.zeros(0), np.zeros((0, 2)), auc, acc)

        rep = CVReport("3D-VGGNet", (rnd(0.8, 0.7), rnd(0.9, 0.8)))
        assert rep.auc == pytest.approx((0.85, 0.05))  # population std
        assert rep.row() == "3D-VGGNet  0.850±0.050  0.750±0.050"
        assert re.fullmatch(r"\S+\s+\d\.\d{3}±\d\.\d{3}\s+\d\.\d{3}±\d\.\d{3}", rep.row())
        table = format_table([rep, CVReport("3D-ResNet-GAP", (rnd(1.0, 1.0),))]).splitlines()
        assert table[0].startswith("Model") and len(table) == 3


class TestDataset:
    def test_set_aside_counts(self):
        ds = toy_dataset(5).with_set_aside(2, 1, seed=0)
        assert np.bincount(ds.labels[ds.set_aside], minlength=2).tolist() == [1, 2]
        assert len(ds.pool) == 7
        with pytest.raises(DataError):
            toy_dataset(2).with_set_aside(3, 0)

    def test_validation(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 2, 2, 2)), [0, 2])
        with pytest.raises(ShapeError):
            LabeledDataset(np.zeros((2, 2, 2)), [0, 1])
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 2, 2, 2)), [0, 1], ids=["a", "a"])
