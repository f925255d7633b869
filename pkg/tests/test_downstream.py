import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone
from sklearn.cluster import KMeans as SkKMeans

from conftest import check_gradients
from tcgan.downstream import (
    KMeans, LabelMapper, LinearClassifier, SupervisedTCGAN, _head_loss, kmeans_plusplus,
)
from tcgan.metrics import nmi


def blobs(seed, k=3, per=30, dim=5, spread=0.3):
    r = np.random.default_rng(seed)
    # one-hot directions put every pair of centres about 6*sqrt(2) apart
    centers = 6.0 * np.eye(k, dim) + r.normal(0, 0.5, size=(k, dim))
    x = np.concatenate([c + r.normal(0, spread, size=(per, dim)) for c in centers])
    return x, np.repeat(np.arange(k), per)


@pytest.mark.parametrize("kind", ["softmax", "hinge"])
def test_head_loss_gradients(kind, rng):
    logits = rng.normal(size=(5, 3))
    targets = np.array([0, 2, 1, 1, 0])
    check_gradients(lambda t: _head_loss(t, targets, kind), [logits])


def test_softmax_loss_closed_form():
    from tcgan.tensor import Tensor
    logits = np.array([[2.0, 0.0], [0.0, 1.0]])
    expected = -np.mean([2 - np.log(np.exp(2) + 1), 1 - np.log(1 + np.e)])
    assert _head_loss(Tensor(logits), np.array([0, 1]), "softmax").item() == pytest.approx(expected)
    # hinge: sum_c max(0, 1 - s_c * f_c) averaged over samples
    assert _head_loss(Tensor(logits), np.array([0, 1]), "hinge").item() == pytest.approx((0 + 1 + 0 + 1) / 2)


@pytest.mark.parametrize("loss", ["softmax", "hinge"])
def test_linear_classifier_learns_separable_data(loss):
    x, y = blobs(0)
    labels = np.array(["a", "b", "c"])[y]
    clf = LinearClassifier(loss, epochs=60, lr=0.01, seed=1).fit(x, labels)
    assert (clf.predict(x) == labels).mean() == 1.0
    assert clf.loss_curve_[-1] < clf.loss_curve_[0]
    proba = clf.predict_proba(x)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert list(clf.classes_) == ["a", "b", "c"]


def test_linear_classifier_is_seeded_and_cloneable():
    x, y = blobs(1)
    a = LinearClassifier(epochs=3, seed=5).fit(x, y)
    b = clone(a).fit(x, y)
    np.testing.assert_array_equal(a.weight_.data, b.weight_.data)
    assert a.get_params()["loss"] == "softmax"


def test_linear_classifier_declared_classes():
    x, y = blobs(2)
    with pytest.warns(UserWarning, match="no training samples"):
        LinearClassifier(epochs=1, classes=[0, 1, 2, 3]).fit(x, y)
    with pytest.raises(ValueError, match="not among"):
        LinearClassifier(epochs=1, classes=[0, 1]).fit(x, y)
    clf = LinearClassifier(epochs=1).fit(x, y)
    with pytest.raises(ValueError, match="features"):
        clf.predict(x[:, :2])


def test_label_mapper_first_seen_order():
    m = LabelMapper(["z", "a", "z", "b"])
    assert m.classes == ["z", "a", "b"]
    assert m.transform(["b", "z"]).tolist() == [2, 0]
    assert m.inverse([1]).tolist() == ["a"]
    with pytest.raises(ValueError):
        m.transform(["q"])


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_kmeans_recovers_blobs_like_sklearn(seed, k):
    x, y = blobs(seed, k=k)
    ours = KMeans(k, n_init=5, seed=seed).fit(x)
    ref = SkKMeans(k, n_init=5, random_state=seed).fit(x)
    assert nmi(y, ours.labels_) == pytest.approx(1.0)
    assert ours.inertia_ == pytest.approx(ref.inertia_, rel=1e-6)
    np.testing.assert_array_equal(ours.predict(x), ours.labels_)


def test_kmeans_inertia_history_is_monotone():
    x = np.random.default_rng(0).normal(size=(200, 3))
    model = KMeans(6, n_init=1, seed=0, tol=0).fit(x)
    h = np.array(model.inertia_history_)
    assert np.all(np.diff(h) <= 1e-9 * h[0])
    assert model.inertia_ == pytest.approx(h[-1])


def test_kmeans_plusplus_picks_distinct_points_and_validates():
    x = np.array([[0.0], [0.0], [10.0], [20.0]])
    centers = kmeans_plusplus(x, 3, np.random.default_rng(0))
    assert sorted(centers[:, 0]) == [0.0, 10.0, 20.0]
    with pytest.raises(ValueError):
        KMeans(5).fit(x)


def test_supervised_baselines():
    from tcgan.data import multiclass4

    ds = multiclass4(seed=0, train_per_class=10, test_per_class=10, n=32)
    tr, te = ds.subset("train"), ds.subset("test")
    kw = dict(channel_widths=(4, 4, 8, 8), epochs=15, lr=0.005, dtype="float64", seed=0)
    trained = SupervisedTCGAN(**kw).fit(tr.series, tr.labels)
    untrained = SupervisedTCGAN(train=False, **kw).fit(tr.series, tr.labels)
    assert untrained.loss_curve_ == []
    assert (trained.predict(te.series) == te.labels).mean() > (untrained.predict(te.series) == te.labels).mean()
    assert trained.predict_proba(te.series).shape == (40, 4)
    assert trained.network_.layers["head"].weight.shape == (8 * 2, 4)
