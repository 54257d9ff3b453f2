import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from voxplain import attribution
from voxplain.estimators import (
    CAMExplainer,
    GradCAMExplainer,
    HierarchicalOcclusionExplainer,
    OcclusionExplainer,
    VolumeClassifier,
)
from voxplain.exceptions import ArchitectureError, DataError, ShapeError
from voxplain.phantom import PhantomSpec, generate
from voxplain.validation import check_labels, check_volume, check_volume_batch


@pytest.fixture(scope="module")
def fitted():
    ds = generate(PhantomSpec(seed=2), 3)
    clf = VolumeClassifier(epochs=1, seed=0).fit(ds.volumes, ds.labels)
    return clf, ds


def test_params_and_clone():
    clf = VolumeClassifier(architecture="vgg", lr=0.01)
    assert clf.get_params()["lr"] == 0.01
    twin = clone(clf)
    assert twin.get_params() == clf.get_params() and twin is not clf
    ex = GradCAMExplainer(clf, layer="relu4")
    assert clone(ex).get_params()["layer"] == "relu4"


def test_defaults_follow_architecture():
    assert VolumeClassifier(architecture="vgg")._train_config().lr == 0.000027
    assert VolumeClassifier()._train_config().optimizer == "nesterov-sgd"
    assert VolumeClassifier(batch_size=4)._train_config().batch_size == 4


def test_fit_predict(fitted):
    clf, ds = fitted
    proba = clf.predict_proba(ds.volumes)
    assert proba.shape == (6, 2) and np.allclose(proba.sum(1), 1)
    assert np.array_equal(clf.predict(ds.volumes), (proba[:, 1] > 0.5).astype(int))
    d = clf.decision_function(ds.volumes)
    # sigmoid of the logit difference is P(AD)
    assert np.allclose(1 / (1 + np.exp(-d)), proba[:, 1])
    assert len(clf.history_) == 1


def test_save_load(fitted, tmp_path):
    clf, ds = fitted
    clf.save(tmp_path / "clf")
    back = VolumeClassifier.load(tmp_path / "clf.json")
    assert back.architecture == clf.architecture and back.epochs == 1
    assert np.allclose(back.predict_proba(ds.volumes), clf.predict_proba(ds.volumes), atol=1e-5)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        VolumeClassifier().predict(np.zeros((1, 32, 32, 32)))
    with pytest.raises(NotFittedError):
        GradCAMExplainer(VolumeClassifier()).fit()


def test_explainers(fitted):
    clf, ds = fitted
    X = ds.volumes[:2]
    g = GradCAMExplainer(clf).fit(X).transform(X)
    c = CAMExplainer(clf).fit_transform(X)
    assert g.shape == c.shape == (2, 32, 32, 32)
    assert np.allclose(g[0], attribution.grad_cam(clf.graph_, clf.params_, X[0])[1])
    o = OcclusionExplainer(clf, half_extent=3, stride=16).fit().transform(X[0])
    assert o.shape == (1, 32, 32, 32) and np.all(o >= 0)
    s = HierarchicalOcclusionExplainer(clf, n_seeds=8, n_levels=2).fit().transform(X[:1])
    assert s.shape == (1, 32, 32, 32)


def test_cam_explainer_on_dense_head(fitted):
    _, ds = fitted
    clf = VolumeClassifier(architecture="resnet", epochs=0).fit(ds.volumes, ds.labels)
    with pytest.raises(ArchitectureError):
        CAMExplainer(clf).fit_transform(ds.volumes[:1])


def test_fit_validation(fitted):
    _, ds = fitted
    with pytest.raises(ShapeError):
        VolumeClassifier(epochs=0).fit(np.zeros((2, 8, 8, 8)), [0, 1])
    with pytest.raises(ShapeError):
        VolumeClassifier(epochs=0).fit(ds.volumes, ds.labels[:-1])


def test_validation_helpers():
    assert check_labels(["NC", "AD", "AD"]).tolist() == [0, 1, 1]
    with pytest.raises(DataError):
        check_labels(["MCI"])
    with pytest.raises(DataError):
        check_labels([0, 2])
    assert check_volume_batch(np.zeros((3, 3, 3), int)).shape == (1, 3, 3, 3)
    with pytest.raises(DataError):
        check_volume(np.full((2, 2, 2), np.nan))
    with pytest.raises(ShapeError):
        check_volume(np.zeros((2, 2)))
