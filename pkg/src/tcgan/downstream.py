"""Linear heads and clustering over representation vectors.

All estimators follow the scikit-learn protocol (``fit`` / ``predict`` /
``get_params``) so they compose with pipelines and model-selection tools.
"""
from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from . import layers as L
from ._validation import check_features, check_series
from .gan import Discriminator, GanConfig
from .metrics import nmi
from .optim import Adam
from .tensor import Tensor, no_grad


class LabelMapper:
    """Arbitrary labels to dense ids ``0..C-1`` in first-seen order."""

    def __init__(self, labels: Sequence = ()):
        self.classes: list = []
        self.index: dict = {}
        self.update(labels)

    def update(self, labels) -> None:
        for lab in np.asarray(labels).tolist():
            if lab not in self.index:
                self.index[lab] = len(self.classes)
                self.classes.append(lab)

    def transform(self, labels) -> np.ndarray:
        try:
            return np.array([self.index[lab] for lab in np.asarray(labels).tolist()], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None

    def inverse(self, ids) -> np.ndarray:
        return np.asarray(self.classes)[np.asarray(ids)]


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def _fit_classes(y, classes):
    mapper = LabelMapper(classes if classes is not None else ())
    if classes is None:
        mapper.update(y)
    else:
        unseen = set(np.asarray(y).tolist()) - set(mapper.index)
        if unseen:
            raise ValueError(f"labels {sorted(unseen)} are not among the declared classes")
        missing = set(mapper.index) - set(np.asarray(y).tolist())
        if missing:
            warnings.warn(f"classes {sorted(missing)} have no training samples", stacklevel=3)
    return mapper


def _minibatches(rng, n, batch_size):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _head_loss(logits: Tensor, targets: np.ndarray, kind: str) -> Tensor:
    n, c = logits.shape
    if kind == "softmax":
        onehot = np.zeros((n, c), dtype=logits.dtype)
        onehot[np.arange(n), targets] = 1.0
        return -(L.log_softmax(logits) * Tensor(onehot)).sum() * (1.0 / n)
    if kind == "hinge":
        signs = -np.ones((n, c), dtype=logits.dtype)
        signs[np.arange(n), targets] = 1.0
        return L.relu(1.0 - logits * Tensor(signs)).sum() * (1.0 / n)
    raise ValueError(f"unknown loss {kind!r}")


class LinearClassifier(ClassifierMixin, BaseEstimator):
    """Linear head trained with Adam on mini-batches.

    ``loss="softmax"`` minimises cross-entropy (the SM / LR analogue);
    ``loss="hinge"`` minimises a one-vs-rest hinge loss (the LSVC analogue).

    Parameters
    ----------
    loss : {"softmax", "hinge"}
    epochs : int
    lr : float
    batch_size : int
    l2 : float
        Weight of ``0.5 * ||W||^2`` added to the loss.
    beta1, beta2 : float
        Adam moment decay rates.
    classes : sequence, optional
        Full label set; classes absent from ``y`` trigger a warning.
    seed : int, optional
    """

    def __init__(self, loss="softmax", epochs=100, lr=0.0002, batch_size=16, l2=0.0,
                 beta1=0.9, beta2=0.999, classes=None, seed=None):
        self.loss = loss
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.l2 = l2
        self.beta1 = beta1
        self.beta2 = beta2
        self.classes = classes
        self.seed = seed

    def fit(self, X, y):
        X = check_features(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y differ in length")
        self.mapper_ = _fit_classes(y, self.classes)
        self.classes_ = np.asarray(self.mapper_.classes)
        targets = self.mapper_.transform(y)
        n_classes = len(self.classes_)
        rng = np.random.default_rng(self.seed)
        self.weight_ = Tensor(_glorot(rng, X.shape[1], n_classes, np.float64), requires_grad=True)
        self.bias_ = Tensor(np.zeros(n_classes), requires_grad=True)
        opt = Adam({"weight": self.weight_, "bias": self.bias_}, self.lr, self.beta1, self.beta2)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            total = 0.0
            for idx in _minibatches(rng, len(X), self.batch_size):
                opt.zero_grad()
                loss = _head_loss(L.dense(Tensor(X[idx]), self.weight_, self.bias_), targets[idx], self.loss)
                if self.l2:
                    loss = loss + (self.weight_ * self.weight_).sum() * (0.5 * self.l2)
                loss.backward()
                opt.step()
                total += loss.item() * len(idx)
            self.loss_curve_.append(total / len(X))
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "weight_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.weight_.data + self.bias_.data

    def predict_proba(self, X) -> np.ndarray:
        with no_grad():
            return L.softmax(Tensor(self.decision_function(X))).data

    def predict(self, X) -> np.ndarray:
        return self.mapper_.inverse(np.argmax(self.decision_function(X), axis=1))

    def state_arrays(self) -> dict:
        return {"weight": self.weight_.data, "bias": self.bias_.data}


def train_softmax(reps, labels, epochs=100, lr=0.0002, batch=16, seed=None) -> LinearClassifier:
    return LinearClassifier("softmax", epochs=epochs, lr=lr, batch_size=batch, seed=seed).fit(reps, labels)


# --------------------------------------------------------------------------
# k-means


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.maximum(
        np.einsum("ij,ij->i", x, x)[:, None] + np.einsum("ij,ij->i", c, c)[None, :] - 2.0 * x @ c.T, 0.0
    )


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2 seeding: each new centre is drawn proportionally to squared distance."""
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    closest = _sq_dist(x, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(len(x))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.uniform(0, total), side="right"))
            idx = min(idx, len(x) - 1)
        centers[i] = x[idx]
        closest = np.minimum(closest, _sq_dist(x, centers[i : i + 1])[:, 0])
    return centers


def _lloyd(x, centers, max_iter, tol):
    history = []
    threshold = tol * np.mean(np.var(x, axis=0))
    for _ in range(max_iter):
        d2 = _sq_dist(x, centers)
        labels = d2.argmin(axis=1)
        dist = d2[np.arange(len(x)), labels]
        history.append(float(dist.sum()))
        new = np.empty_like(centers)
        for j in range(len(centers)):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                far = int(dist.argmax())
                new[j] = x[far]
                labels[far] = j
                dist[far] = 0.0
        shift = np.sum((new - centers) ** 2)
        centers = new
        if shift <= threshold:
            break
    d2 = _sq_dist(x, centers)
    labels = d2.argmin(axis=1)
    inertia = float(np.sum((x - centers[labels]) ** 2))
    history.append(inertia)
    return centers, labels, inertia, history


class KMeans(ClusterMixin, BaseEstimator):
    """Euclidean k-means with k-means++ seeding and best-of-``n_init`` restarts.

    Lloyd iterations stop once the summed squared centroid shift is at most
    ``tol`` times the mean per-feature variance, or after ``max_iter``.
    An empty cluster is re-seeded at the point farthest from its centroid.
    """

    def __init__(self, n_clusters=8, n_init=10, max_iter=300, tol=1e-4, seed=None):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, X, y=None):
        x = check_features(X)
        if len(x) < self.n_clusters:
            raise ValueError(f"need at least n_clusters={self.n_clusters} samples, got {len(x)}")
        rng = np.random.default_rng(self.seed)
        best = None
        for _ in range(self.n_init):
            init = kmeans_plusplus(x, self.n_clusters, rng)
            result = _lloyd(x, init, self.max_iter, self.tol)
            if best is None or result[2] < best[2]:
                best = result
        self.cluster_centers_, self.labels_, self.inertia_, self.inertia_history_ = best
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "cluster_centers_")
        return _sq_dist(check_features(X), self.cluster_centers_).argmin(axis=1)


def kmeans_fit(reps, k, n_init=10, max_iter=300, tol=1e-4, seed=None) -> KMeans:
    return KMeans(k, n_init, max_iter, tol, seed).fit(reps)


def cluster_eval(model: KMeans, reps, true_labels) -> float:
    return nmi(true_labels, model.predict(reps))


# --------------------------------------------------------------------------
# supervised baseline


class SupervisedTCGAN(ClassifierMixin, BaseEstimator):
    """Discriminator conv stack with a softmax head instead of the sigmoid.

    With ``train=True`` the whole network is trained end to end from scratch
    (TCGAN-D); with ``train=False`` it stays at its random initialisation
    (TCGAN-D-R).
    """

    def __init__(self, channel_widths=(32, 64, 128, 256), kernel_w=10, stride=2, epochs=100,
                 lr=0.0002, batch_size=16, beta1=0.9, beta2=0.999, train=True, dtype="float32", seed=None):
        self.channel_widths = channel_widths
        self.kernel_w = kernel_w
        self.stride = stride
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.train = train
        self.dtype = dtype
        self.seed = seed

    def _config(self, n, d) -> GanConfig:
        return GanConfig(n=n, d=d, channel_widths=self.channel_widths, kernel_w=self.kernel_w,
                         stride=self.stride, dtype=self.dtype, seed=0 if self.seed is None else self.seed)

    def fit(self, X, y):
        X = check_series(X)
        y = np.asarray(y)
        self.mapper_ = _fit_classes(y, None)
        self.classes_ = np.asarray(self.mapper_.classes)
        targets = self.mapper_.transform(y)
        rng = np.random.default_rng(self.seed)
        self.network_ = build_supervised_head(self._config(X.shape[1], X.shape[2]), len(self.classes_), rng)
        self.loss_curve_ = []
        if self.train:
            opt = Adam(self.network_.parameters(), self.lr, self.beta1, self.beta2)
            data = X.astype(self.dtype, copy=False)
            for _ in range(self.epochs):
                total = 0.0
                for idx in _minibatches(rng, len(X), self.batch_size):
                    if len(idx) < 2:
                        continue  # batch-norm statistics need two samples
                    opt.zero_grad()
                    loss = _head_loss(self.network_.logits(Tensor(data[idx]), training=True), targets[idx], "softmax")
                    loss.backward()
                    opt.step()
                    total += loss.item() * len(idx)
                self.loss_curve_.append(total / len(X))
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_series(X).astype(self.dtype, copy=False)
        out = []
        with no_grad():
            for start in range(0, len(X), 256):
                out.append(self.network_.logits(Tensor(X[start : start + 256]), training=False, update_stats=False).data)
        return np.concatenate(out).astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        with no_grad():
            return L.softmax(Tensor(self.decision_function(X))).data

    def predict(self, X) -> np.ndarray:
        return self.mapper_.inverse(np.argmax(self.decision_function(X), axis=1))


def build_supervised_head(cfg: GanConfig, n_classes: int, rng: Optional[np.random.Generator] = None) -> Discriminator:
    """A discriminator whose head emits ``n_classes`` logits."""
    return Discriminator(cfg, rng, n_outputs=n_classes)
