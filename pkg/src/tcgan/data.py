"""Time-series datasets: Sines synthesis, UCR text files, normalisation, label budgets."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNLABELED = -1
SIGMA_FLOOR = 1e-12


@dataclass
class Dataset:
    """A collection of ``N`` series of shape ``[n, d]``.

    ``labels`` holds dense class ids in ``[0, n_classes)`` or ``-1`` for
    unlabeled samples; ``split`` tags each sample ``"train"`` or ``"test"``.
    """

    series: np.ndarray
    labels: Optional[np.ndarray] = None
    n_classes: int = 0
    split: Optional[np.ndarray] = None
    name: str = ""
    label_map: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = np.asarray(self.series)
        if self.series.ndim == 2:
            self.series = self.series[:, :, None]
        if self.series.ndim != 3:
            raise ValueError(f"series must be [N, n, d], got {self.series.shape}")
        if self.split is None:
            self.split = np.full(len(self.series), "train")
        self.split = np.asarray(self.split)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.series):
                raise ValueError("labels and series differ in length")
            known = self.labels[self.labels != UNLABELED]
            if known.size and (known.min() < 0 or known.max() >= self.n_classes):
                raise ValueError("labels must lie in [0, n_classes)")

    def __len__(self) -> int:
        return len(self.series)

    @property
    def n(self) -> int:
        return self.series.shape[1]

    @property
    def d(self) -> int:
        return self.series.shape[2]

    def subset(self, split: str) -> "Dataset":
        mask = self.split == split
        return replace(
            self,
            series=self.series[mask],
            labels=None if self.labels is None else self.labels[mask],
            split=self.split[mask],
        )

    def labeled(self) -> "Dataset":
        """Only the samples that carry a label."""
        if self.labels is None:
            raise ValueError("dataset has no labels")
        mask = self.labels != UNLABELED
        return replace(self, series=self.series[mask], labels=self.labels[mask], split=self.split[mask])


def _sine(eta: np.ndarray, theta: np.ndarray, n: int) -> np.ndarray:
    t = np.arange(n)
    return np.sin(2.0 * np.pi * eta[..., None] * t + theta[..., None])


def synth_sines(count: int, n: int = 100, d: int = 1, seed=None) -> Dataset:
    """``x_t = sin(2*pi*eta*t + theta)`` per sample and variable, ``t = 0..n-1``.

    ``eta ~ U(0, 1)`` and ``theta ~ U(-pi, pi)`` are drawn independently for
    every (sample, variable) pair. Labels are all zero.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    eta = rng.uniform(0.0, 1.0, size=(count, d))
    theta = rng.uniform(-np.pi, np.pi, size=(count, d))
    series = _sine(eta, theta, n).transpose(0, 2, 1)
    return Dataset(series, np.zeros(count, dtype=np.int64), 1, name=f"SinesD{d}L{n}", label_map={0: 0})


SINES_PRESETS = {
    "sines-d1l100": dict(n=100, d=1),
    "sines-d5l24": dict(n=24, d=5),
}
PRESET_COUNT = 10_000

MULTICLASS4_BANDS = ((0.05, 0.10), (0.15, 0.20), (0.25, 0.30), (0.35, 0.40))


def synth_multiclass(
    count_per_class: int,
    bands: Sequence[tuple[float, float]] = MULTICLASS4_BANDS,
    n: int = 100,
    d: int = 1,
    seed=None,
    split: str = "train",
) -> Dataset:
    """Labeled sines whose frequency band identifies the class."""
    bands = [tuple(map(float, b)) for b in bands]
    for lo, hi in bands:
        if not lo < hi:
            raise ValueError(f"invalid band ({lo}, {hi})")
    ordered = sorted(bands)
    for (lo1, hi1), (lo2, hi2) in zip(ordered, ordered[1:]):
        if lo2 < hi1:
            raise ValueError(f"bands ({lo1}, {hi1}) and ({lo2}, {hi2}) overlap")
    rng = np.random.default_rng(seed)
    series, labels = [], []
    for c, (lo, hi) in enumerate(bands):
        eta = rng.uniform(lo, hi, size=(count_per_class, d))
        theta = rng.uniform(-np.pi, np.pi, size=(count_per_class, d))
        series.append(_sine(eta, theta, n).transpose(0, 2, 1))
        labels.append(np.full(count_per_class, c))
    return Dataset(
        np.concatenate(series),
        np.concatenate(labels),
        len(bands),
        split=np.full(count_per_class * len(bands), split),
        name=f"Multiclass{len(bands)}",
        label_map={c: c for c in range(len(bands))},
    )


def multiclass4(seed=None, train_per_class: int = 100, test_per_class: int = 100, n: int = 100) -> Dataset:
    """Four-band preset with a train and a test split (400/400 by default)."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**32, size=2)
    train = synth_multiclass(train_per_class, MULTICLASS4_BANDS, n, 1, seeds[0], "train")
    test = synth_multiclass(test_per_class, MULTICLASS4_BANDS, n, 1, seeds[1], "test")
    return concat([train, test], name="Multiclass4")


def concat(parts: Sequence[Dataset], name: Optional[str] = None) -> Dataset:
    first = parts[0]
    labels = None if any(p.labels is None for p in parts) else np.concatenate([p.labels for p in parts])
    return Dataset(
        np.concatenate([p.series for p in parts]),
        labels,
        max(p.n_classes for p in parts),
        np.concatenate([p.split for p in parts]),
        name if name is not None else first.name,
        dict(first.label_map),
    )


def z_normalize(x: np.ndarray) -> np.ndarray:
    """Per-series, per-variable standardisation with population std.

    Series with ``std < 1e-12`` become all zeros.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    mu = x.mean(axis=1, keepdims=True)
    sigma = x.std(axis=1, keepdims=True)
    safe = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)
    out = np.where(sigma < SIGMA_FLOOR, 0.0, (x - mu) / safe)
    if squeeze:
        return out[0, :, 0]
    return out


_DELIMITERS = {"comma": ",", "tab": "\t", ",": ",", "\t": "\t"}


def _parse_ucr(path, delimiter: Optional[str]) -> tuple[list, np.ndarray]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    if delimiter is None:
        sep = "\t" if "\t" in lines[0] else ","
    else:
        try:
            sep = _DELIMITERS[delimiter]
        except KeyError:
            raise ValueError(f"unknown delimiter {delimiter!r}") from None
    raw_labels, rows = [], []
    width = None
    for lineno, line in enumerate(lines, 1):
        fields = [f.strip() for f in line.strip().split(sep)]
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} fields, found {len(fields)}")
        if len(fields) < 2:
            raise ValueError(f"{path}:{lineno}: a row needs a label and at least one value")
        try:
            values = [float(f) for f in fields[1:]]
            label = float(fields[0])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric field ({exc})") from None
        raw_labels.append(int(label) if label.is_integer() else label)
        rows.append(values)
    return raw_labels, np.asarray(rows, dtype=np.float64)


def load_ucr(train_path, test_path=None, delimiter: Optional[str] = None, renormalize: bool = False, name: str = "") -> Dataset:
    """Read label-first delimited files into one dataset with split tags.

    Labels are densified in first-seen order (train file first). A test label
    missing from the training file is added with a warning.
    """
    train_labels, train_x = _parse_ucr(train_path, delimiter)
    parts = [("train", train_labels, train_x)]
    if test_path is not None:
        test_labels, test_x = _parse_ucr(test_path, delimiter)
        if test_x.shape[1] != train_x.shape[1]:
            raise ValueError("train and test series differ in length")
        parts.append(("test", test_labels, test_x))

    label_map: dict = {}
    dense, series, split = [], [], []
    for tag, raw, x in parts:
        for lab in raw:
            if lab not in label_map:
                if tag == "test":
                    warnings.warn(f"test label {lab!r} does not occur in the training split", stacklevel=2)
                label_map[lab] = len(label_map)
            dense.append(label_map[lab])
        series.append(x)
        split.extend([tag] * len(x))
    x = np.concatenate(series)[:, :, None]
    if renormalize:
        x = z_normalize(x)
    return Dataset(x, np.asarray(dense), len(label_map), np.asarray(split),
                   name or Path(train_path).stem.replace("_TRAIN", ""), label_map)


def write_ucr(ds: Dataset, path, split: Optional[str] = None, delimiter: str = "comma") -> None:
    """Write a univariate dataset as label-first rows (``repr`` float precision).

    Original labels are restored through ``label_map``; unlabeled samples are
    written with label 0.
    """
    if ds.d != 1:
        raise ValueError("the UCR text format holds univariate series only; flatten first")
    sep = _DELIMITERS[delimiter]
    part = ds.subset(split) if split is not None else ds
    inverse = {v: k for k, v in part.label_map.items()}
    labels = part.labels if part.labels is not None else np.zeros(len(part), dtype=np.int64)
    with open(path, "w") as fh:
        for lab, row in zip(labels, part.series[:, :, 0]):
            orig = inverse.get(int(lab), 0) if lab != UNLABELED else 0
            fh.write(sep.join([str(orig)] + [repr(float(v)) for v in row]) + "\n")


def write_series_csv(x: np.ndarray, path, labels=None) -> None:
    """Write ``[N, n, d]`` series flattened time-major, one row per series."""
    x = np.asarray(x)
    flat = x.reshape(len(x), -1)
    labels = np.zeros(len(x), dtype=np.int64) if labels is None else np.asarray(labels)
    with open(path, "w") as fh:
        for lab, row in zip(labels, flat):
            fh.write(",".join([str(int(lab))] + [repr(float(v)) for v in row]) + "\n")


def subsample_labels(ds: Dataset, fraction: float, seed=None) -> Dataset:
    """Keep ``round(fraction * count_c)`` (at least 1) labels per class in the train split.

    Every other training sample stays in the dataset with label ``-1``.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    labels = ds.labels.copy()
    if fraction == 1.0:
        return replace(ds, labels=labels)
    rng = np.random.default_rng(seed)
    train_idx = np.flatnonzero((ds.split == "train") & (labels != UNLABELED))
    for c in np.unique(labels[train_idx]):
        members = train_idx[labels[train_idx] == c]
        keep = max(1, int(round(fraction * len(members))))
        chosen = rng.choice(members, size=keep, replace=False)
        drop = np.setdiff1d(members, chosen)
        labels[drop] = UNLABELED
    return replace(ds, labels=labels)
