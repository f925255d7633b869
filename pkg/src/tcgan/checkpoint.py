"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` archive (a zip of ``.npy`` files;
every ``.npy`` header records shape and dtype and the payload is raw
little-endian values). Entries:

``__meta__``
    UTF-8 JSON as a ``uint8`` array: ``{"format_version", "kind", "config",
    "extra"}``.
``param/<name>``
    Trainable parameter arrays, e.g. ``param/generator/fconv1.weight``.
``buffer/<name>``
    Non-trainable state such as batch-norm running statistics.

Arrays are written and read back unchanged, so a save/load round trip is
bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .gan import Discriminator, GanConfig, Generator

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _little_endian(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.dtype.byteorder == ">":
        a = a.astype(a.dtype.newbyteorder("<"))
    return a


def save_checkpoint(path, params: dict, buffers: dict, kind: str, config: Optional[dict] = None,
                    extra: Optional[dict] = None) -> None:
    meta = {"format_version": FORMAT_VERSION, "kind": kind, "config": config or {}, "extra": extra or {}}
    entries = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    entries.update({f"param/{k}": _little_endian(v) for k, v in params.items()})
    entries.update({f"buffer/{k}": _little_endian(v) for k, v in buffers.items()})
    with open(path, "wb") as fh:
        np.savez(fh, **entries)


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Return ``(meta, params, buffers)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as npz:
        if "__meta__" not in npz.files:
            raise CheckpointError(f"{path}: missing __meta__ entry")
        meta = json.loads(npz["__meta__"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')}")
        params = {k[len("param/"):]: npz[k] for k in npz.files if k.startswith("param/")}
        buffers = {k[len("buffer/"):]: npz[k] for k in npz.files if k.startswith("buffer/")}
    return meta, params, buffers


def _prefixed(prefix: str, d: dict) -> dict:
    return {f"{prefix}/{k}": v for k, v in d.items()}


def _restore(model, prefix: str, params: dict, buffers: dict) -> None:
    for name, p in model.parameters().items():
        key = f"{prefix}/{name}"
        if key not in params:
            raise CheckpointError(f"missing parameter {key}")
        if params[key].shape != p.shape:
            raise CheckpointError(f"parameter {key}: shape {params[key].shape} != {p.shape}")
        p.data = params[key].copy()
    for name, buf in model.buffers().items():
        key = f"{prefix}/{name}"
        if key not in buffers:
            raise CheckpointError(f"missing buffer {key}")
        buf[...] = buffers[key]


def save_gan(path, generator: Generator, discriminator: Discriminator, extra: Optional[dict] = None) -> None:
    params = {**_prefixed("generator", {k: p.data for k, p in generator.parameters().items()}),
              **_prefixed("discriminator", {k: p.data for k, p in discriminator.parameters().items()})}
    buffers = {**_prefixed("generator", generator.buffers()),
               **_prefixed("discriminator", discriminator.buffers())}
    save_checkpoint(path, params, buffers, "tcgan", generator.cfg.to_dict(), extra)


def load_gan(path) -> tuple[Generator, Discriminator, dict]:
    meta, params, buffers = load_checkpoint(path)
    if meta["kind"] != "tcgan":
        raise CheckpointError(f"{path}: expected a tcgan checkpoint, found {meta['kind']!r}")
    cfg = GanConfig.from_dict(meta["config"])
    G, D = Generator(cfg), Discriminator(cfg)
    _restore(G, "generator", params, buffers)
    _restore(D, "discriminator", params, buffers)
    return G, D, meta


def save_classifier(path, clf) -> None:
    """Persist a fitted :class:`~tcgan.downstream.LinearClassifier` with its label mapping."""
    config = clf.get_params()
    config["classes"] = None if config["classes"] is None else list(np.asarray(config["classes"]).tolist())
    extra = {"classes": np.asarray(clf.classes_).tolist(), "n_features_in": int(clf.n_features_in_),
             "loss_curve": [float(v) for v in clf.loss_curve_]}
    save_checkpoint(path, clf.state_arrays(), {}, "linear_classifier", config, extra)


def load_classifier(path):
    from .downstream import LabelMapper, LinearClassifier
    from .tensor import Tensor

    meta, params, _ = load_checkpoint(path)
    if meta["kind"] != "linear_classifier":
        raise CheckpointError(f"{path}: expected a linear_classifier checkpoint, found {meta['kind']!r}")
    clf = LinearClassifier(**meta["config"])
    clf.mapper_ = LabelMapper(meta["extra"]["classes"])
    clf.classes_ = np.asarray(clf.mapper_.classes)
    clf.weight_ = Tensor(params["weight"], requires_grad=True)
    clf.bias_ = Tensor(params["bias"], requires_grad=True)
    clf.n_features_in_ = meta["extra"]["n_features_in"]
    clf.loss_curve_ = meta["extra"]["loss_curve"]
    return clf
