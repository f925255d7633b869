"""Evaluation protocols shared by the command line and the acceptance suite.

Unsupervised steps (GAN pretraining, k-means) see the fused train+test
series without labels; classifiers only see labeled training samples and are
scored on the test split.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .data import Dataset, subsample_labels, synth_sines
from .downstream import KMeans, LinearClassifier, SupervisedTCGAN
from .estimator import TCGAN
from .gan import sample
from .metrics import accuracy, mmd, nmi, nnd, weighted_f1

logger = logging.getLogger(__name__)


@dataclass
class GenerationResult:
    seed: int
    curve: dict = field(default_factory=dict)  # epoch -> {"mmd", "nnd"}
    d_loss_epochs: np.ndarray = None
    g_loss_epochs: np.ndarray = None
    skipped_batches: int = 0
    gating_consistent: bool = True
    seconds_per_epoch: float = 0.0
    infer_seconds: float = 0.0

    @property
    def first(self) -> dict:
        return self.curve[min(self.curve)]

    @property
    def final(self) -> dict:
        return self.curve[max(self.curve)]


def generation_experiment(
    seed: int,
    n_samples: int = 2000,
    epochs: int = 100,
    batch_size: int = 128,
    n: int = 100,
    eval_epochs: Optional[Iterable[int]] = None,
    data: Optional[np.ndarray] = None,
    infer_count: int = 10_000,
    **gan_params,
) -> GenerationResult:
    """Train on Sines and track MMD/NND of an equally sized generated set.

    ``eval_epochs`` are 0-based; by default the first and the last epoch.
    """
    real = synth_sines(n_samples, n=n, seed=seed).series if data is None else np.asarray(data)
    wanted = set(eval_epochs) if eval_epochs is not None else {0, epochs - 1}
    result = GenerationResult(seed=seed)

    def on_epoch_end(epoch, G, D, state):
        if epoch in wanted:
            fake = sample(G, len(real), seed=seed + 7919 * (epoch + 1))
            result.curve[epoch + 1] = {"mmd": mmd(real, fake), "nnd": nnd(real, fake)}
            logger.info("seed %d epoch %d: %s", seed, epoch + 1, result.curve[epoch + 1])

    est = TCGAN(batch_size=batch_size, epochs=epochs, seed=seed, **gan_params)
    est.fit(real, on_epoch_end=on_epoch_end)
    hist = est.history_
    result.d_loss_epochs = hist.epoch_means("d_loss")
    result.g_loss_epochs = hist.epoch_means("g_loss")
    result.skipped_batches = sum(not r["d_updated"] for r in hist.log)
    result.gating_consistent = all(r["d_updated"] == (r["acc_last"] <= est.config_.delta) for r in hist.log)
    result.seconds_per_epoch = float(np.mean(hist.epoch_seconds)) if hist.epoch_seconds else 0.0
    started = time.perf_counter()
    est.sample(infer_count, seed=seed)
    result.infer_seconds = time.perf_counter() - started
    return result


def _sm(train_x, train_y, test_x, seed, epochs, classes) -> np.ndarray:
    clf = LinearClassifier("softmax", epochs=epochs, lr=0.0002, batch_size=16, classes=classes, seed=seed)
    return clf.fit(train_x, train_y).predict(test_x)


def recognition_experiment(
    ds: Dataset,
    seed: int,
    gan_epochs: int = 30,
    gan_batch: int = 16,
    clf_epochs: int = 100,
    fractions: Sequence[float] = (1.0,),
    baselines: bool = True,
    supervised_epochs: Optional[int] = None,
    **gan_params,
) -> dict:
    """Classification and clustering metrics for one seed.

    Returns a flat ``{name: value}`` dict. Keys ending in ``@f`` refer to a
    label fraction ``f``; the unsuffixed keys use all labels.
    """
    train, test = ds.subset("train"), ds.subset("test")
    if len(test) == 0:
        raise ValueError("recognition needs a test split")
    fused = ds.series
    classes = list(range(ds.n_classes))
    out: dict = {}

    started = time.perf_counter()
    gan = TCGAN(batch_size=gan_batch, epochs=gan_epochs, seed=seed, **gan_params).fit(fused)
    out["time_gan_train_s"] = time.perf_counter() - started
    reps = gan.transform(fused)
    reps_train, reps_test = reps[ds.split == "train"], reps[ds.split == "test"]

    ytest = test.labels
    for frac in fractions:
        budget = subsample_labels(ds, frac, seed=seed)
        mask = budget.labels[ds.split == "train"] >= 0
        labeled = budget.subset("train").labeled()
        pred = _sm(reps_train[mask], labeled.labels, reps_test, seed, clf_epochs, classes)
        suffix = "" if frac == 1.0 else f"@{frac:g}"
        out[f"sm_tcgan_acc{suffix}"] = accuracy(pred, ytest)
        out[f"sm_tcgan_f1{suffix}"] = weighted_f1(pred, ytest)
        if baselines:
            sup = SupervisedTCGAN(epochs=supervised_epochs or clf_epochs, seed=seed,
                                  channel_widths=gan.channel_widths, kernel_w=gan.kernel_w, stride=gan.stride)
            pred = sup.fit(labeled.series, labeled.labels).predict(test.series)
            out[f"tcgan_d_acc{suffix}"] = accuracy(pred, ytest)
            out[f"tcgan_d_f1{suffix}"] = weighted_f1(pred, ytest)

    k = ds.n_classes
    out["kmeans_tcgan_nmi"] = nmi(ds.labels, KMeans(k, seed=seed).fit(reps).labels_)
    if baselines:
        raw_train = train.series.reshape(len(train), -1)
        raw_test = test.series.reshape(len(test), -1)
        pred = _sm(raw_train, train.labels, raw_test, seed, clf_epochs, classes)
        out["sm_raw_acc"] = accuracy(pred, ytest)
        out["sm_raw_f1"] = weighted_f1(pred, ytest)

        rand = TCGAN(batch_size=gan_batch, epochs=0, seed=seed, **gan_params).fit(fused)
        rreps = rand.transform(fused)
        pred = _sm(rreps[ds.split == "train"], train.labels, rreps[ds.split == "test"], seed, clf_epochs, classes)
        out["sm_random_acc"] = accuracy(pred, ytest)
        out["sm_random_f1"] = weighted_f1(pred, ytest)

        untrained = SupervisedTCGAN(train=False, seed=seed, channel_widths=gan.channel_widths,
                                    kernel_w=gan.kernel_w, stride=gan.stride)
        pred = untrained.fit(train.series, train.labels).predict(test.series)
        out["tcgan_d_r_acc"] = accuracy(pred, ytest)
        out["tcgan_d_r_f1"] = weighted_f1(pred, ytest)

        out["kmeans_raw_nmi"] = nmi(ds.labels, KMeans(k, seed=seed).fit(fused.reshape(len(fused), -1)).labels_)
    return out


def summarize(rows: Sequence[dict]) -> dict:
    """Mean and population std for every numeric key across seeds."""
    keys = [k for k in rows[0] if isinstance(rows[0][k], (int, float, np.floating))]
    summary = {}
    for k in keys:
        vals = np.array([r[k] for r in rows], dtype=float)
        summary[f"{k}_mean"] = float(vals.mean())
        summary[f"{k}_std"] = float(vals.std())
    return summary
