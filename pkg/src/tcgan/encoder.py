"""Representation encoder built from a discriminator's convolutional stack."""
from __future__ import annotations

import csv
from typing import Optional

import numpy as np

from . import layers as L
from .gan import Discriminator
from .tensor import Tensor, no_grad


class Encoder:
    """Conv1..Conv4 in inference mode, then max-pool and flatten.

    The sigmoid head of the discriminator is not used. Encoding never
    touches parameters or batch-norm running statistics.
    """

    def __init__(self, discriminator: Discriminator, pool_w: int = 2, pool_stride: int = 1, normalize: bool = False):
        last_len = discriminator.lengths[-1]
        if pool_w > last_len:
            raise ValueError(
                f"last conv feature map has length {last_len}, shorter than the pooling window {pool_w}; "
                "use longer series or fewer strided layers"
            )
        self.discriminator = discriminator
        self.pool_w = pool_w
        self.pool_stride = pool_stride
        self.normalize = normalize
        channels = discriminator.cfg.channel_widths[-1]
        self.n_v = ((last_len - pool_w) // pool_stride + 1) * channels

    @property
    def input_shape(self) -> tuple[int, int]:
        cfg = self.discriminator.cfg
        return cfg.n, cfg.d

    def encode(self, x, chunk: int = 256) -> np.ndarray:
        x = np.asarray(getattr(x, "data", x))
        if x.ndim == 2:
            x = x[:, :, None]
        if x.ndim != 3 or x.shape[1:] != self.input_shape:
            raise ValueError(f"expected series of shape [B, {self.input_shape[0]}, {self.input_shape[1]}], got {x.shape}")
        dtype = np.dtype(self.discriminator.cfg.dtype)
        if len(x) == 0:
            return np.zeros((0, self.n_v), dtype=dtype)
        out = []
        with no_grad():
            for start in range(0, len(x), chunk):
                xb = Tensor(x[start : start + chunk].astype(dtype, copy=False))
                h = self.discriminator.features(xb, training=False, update_stats=False)
                h = L.maxpool1d(h, self.pool_w, self.pool_stride)
                out.append(L.flatten(h).data)
        reps = np.concatenate(out, axis=0)
        if self.normalize:
            norms = np.linalg.norm(reps, axis=1, keepdims=True)
            reps = reps / np.where(norms > 0, norms, 1.0)
        return reps

    __call__ = encode


def build_encoder(discriminator: Discriminator, normalize: bool = False) -> Encoder:
    return Encoder(discriminator, 2, 1, normalize)


def encode(encoder: Encoder, x) -> np.ndarray:
    return encoder.encode(x)


def write_representations(path, reps: np.ndarray, labels=None, ids=None) -> None:
    """CSV with columns ``id, label, f0 .. f{n_v-1}``; label is empty when unknown."""
    reps = np.asarray(reps)
    ids = range(len(reps)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"f{i}" for i in range(reps.shape[1])])
        for i, (rid, row) in enumerate(zip(ids, reps)):
            lab = "" if labels is None or labels[i] < 0 else int(labels[i])
            writer.writerow([rid, lab] + [repr(float(v)) for v in row])


def read_representations(path) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Inverse of :func:`write_representations`: ``(ids, reps, labels)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    ids = np.array([r[0] for r in rows])
    labels = np.array([int(r[1]) if r[1] != "" else -1 for r in rows], dtype=np.int64)
    reps = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
    if np.all(labels < 0):
        labels = None
    return ids, reps, labels
