"""Generation and recognition metrics.

Series are flattened time-major before any distance is taken, so a
``[N, n, d]`` set is compared as ``N`` vectors of length ``n * d``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

REPORT_SCHEMA_VERSION = 1


def _flat(x) -> np.ndarray:
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return x.reshape(len(x), -1)


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows, clipped at 0."""
    aa = np.einsum("ij,ij->i", a, a)[:, None]
    bb = np.einsum("ij,ij->i", b, b)[None, :]
    return np.maximum(aa + bb - 2.0 * (a @ b.T), 0.0)


def median_bandwidth(x: np.ndarray, y: np.ndarray) -> float:
    """Median of the pooled pairwise L2 distances between distinct samples."""
    pooled = np.concatenate([x, y], axis=0)
    d2 = squared_distances(pooled, pooled)
    iu = np.triu_indices(len(pooled), k=1)
    sigma = float(np.sqrt(np.median(d2[iu])))
    return sigma if sigma > 0 else 1.0


def mmd(X, Xhat, bandwidth: Optional[float] = None) -> float:
    """Unbiased-within-set estimate of squared MMD with an RBF kernel.

    ``K(a, b) = exp(-||a - b||^2 / (2 sigma^2))``; ``sigma`` defaults to the
    median heuristic over the pooled samples.
    """
    x, y = _flat(X), _flat(Xhat)
    n, m = len(x), len(y)
    if n < 2 or m < 2:
        raise ValueError("mmd needs at least two samples in each set")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    sigma = median_bandwidth(x, y) if bandwidth is None else float(bandwidth)
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * squared_distances(x, x))
    kyy = np.exp(-gamma * squared_distances(y, y))
    kxy = np.exp(-gamma * squared_distances(x, y))
    within_x = (kxx.sum() - np.trace(kxx)) / (n * (n - 1))
    within_y = (kyy.sum() - np.trace(kyy)) / (m * (m - 1))
    return float(within_x + within_y - 2.0 * kxy.mean())


def nnd(X, Xhat) -> float:
    """Mean squared distance from each generated sample to its nearest real one."""
    x, y = _flat(X), _flat(Xhat)
    if len(x) == 0 or len(y) == 0:
        raise ValueError("nnd needs non-empty sets")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    best = np.empty(len(y))
    for start in range(0, len(y), 1024):
        chunk = y[start : start + 1024]
        nearest = squared_distances(chunk, x).argmin(axis=1)
        # recompute directly so identical samples give exactly 0
        best[start : start + 1024] = np.sum((chunk - x[nearest]) ** 2, axis=1)
    return float(best.mean())


def contingency(u, v) -> np.ndarray:
    u, v = np.asarray(u), np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("label assignments must be 1-D and of equal length")
    _, ui = np.unique(u, return_inverse=True)
    _, vi = np.unique(v, return_inverse=True)
    table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table


def nmi_degenerate(u, v) -> bool:
    return len(np.unique(u)) < 2 or len(np.unique(v)) < 2


def nmi(u, v) -> float:
    """Mutual information normalised by the geometric mean of the entropies.

    Returns 0.0 when either assignment has a single cluster.
    """
    table = contingency(u, v)
    n = table.sum()
    if n == 0:
        raise ValueError("nmi needs at least one sample")
    if table.shape[0] < 2 or table.shape[1] < 2:
        return 0.0
    a = table.sum(axis=1).astype(float)
    b = table.sum(axis=0).astype(float)
    nz = table > 0
    nij = table[nz].astype(float)
    outer = np.outer(a, b)[nz]
    mi = np.sum(nij * np.log(n * nij / outer))
    hu = np.sum(a * np.log(a / n))
    hv = np.sum(b * np.log(b / n))
    value = mi / np.sqrt(hu * hv)
    return float(min(max(value, 0.0), 1.0))


def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    if pred.size == 0:
        return 0.0
    return float(np.mean(pred == truth))


def weighted_f1(pred, truth) -> float:
    """Per-class F1 averaged with weights proportional to true-class support."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    if truth.size == 0:
        return 0.0
    total = 0.0
    for c in np.unique(truth):
        tp = np.sum((pred == c) & (truth == c))
        n_pred = np.sum(pred == c)
        n_true = np.sum(truth == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_true
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        total += n_true / truth.size * f1
    return float(total)


@dataclass
class EvalReport:
    """Metric values for one run, serialisable to CSV and JSON."""

    dataset: str
    seed: Optional[int] = None
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "dataset": self.dataset,
            "seed": self.seed,
            "metrics": {k: float(v) for k, v in self.metrics.items()},
            "timings": {k: float(v) for k, v in self.timings.items()},
            "flags": dict(self.flags),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self) -> dict:
        out = {"schema_version": REPORT_SCHEMA_VERSION, "dataset": self.dataset, "seed": self.seed}
        out.update({k: float(v) for k, v in self.metrics.items()})
        out.update({f"time_{k}": float(v) for k, v in self.timings.items()})
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_rows(buf, [self.row()])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["dataset"], d.get("seed"), dict(d.get("metrics", {})),
                   dict(d.get("timings", {})), dict(d.get("flags", {})))


def write_rows(fh, rows: list[dict]) -> None:
    columns: list[str] = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
