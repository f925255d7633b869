"""Convolutional generator/discriminator pair and the adversarial training loop.

The discriminator is updated on a batch only while its accuracy on the
previous batch is at most ``delta``; the generator is updated on every batch
with the non-saturating loss ``-mean(log D(G(z)))``.
"""
from __future__ import annotations

import contextlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import layers as L
from .optim import Adam
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


class TrainingDiverged(FloatingPointError):
    """Raised when a loss becomes NaN or infinite during training."""


@dataclass
class GanConfig:
    n: int = 100
    d: int = 1
    n_z: int = 100
    m: int = 16
    n_epoch: int = 300
    delta: float = 0.75
    alpha: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.9
    channel_widths: tuple = (32, 64, 128, 256)
    kernel_w: int = 10
    stride: int = 2
    noise_low: float = -1.0
    noise_high: float = 1.0
    init_std: float = 0.02
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.channel_widths = tuple(int(c) for c in self.channel_widths)
        if len(self.channel_widths) != 4 or min(self.channel_widths) < 1:
            raise ValueError("channel_widths must be 4 positive integers")
        if not 0.5 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0.5, 1.0), got {self.delta}")
        if self.n < 1 or self.d < 1 or self.n_z < 1 or self.m < 1:
            raise ValueError("n, d, n_z and m must be positive")
        if self.kernel_w < 1 or self.stride < 1:
            raise ValueError("kernel_w and stride must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channel_widths"] = list(self.channel_widths)
        return out

    @classmethod
    def from_dict(cls, values: dict) -> "GanConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in values.items() if k in known})


def _np_dtype(cfg: GanConfig):
    return np.dtype(cfg.dtype)


class Generator:
    """Dense+ReLU, three FConv-BN-ReLU blocks, a final FConv, centered crop."""

    def __init__(self, cfg: GanConfig, rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dt = _np_dtype(cfg)
        self.cfg = cfg
        widths = list(reversed(cfg.channel_widths))
        self.base_len = math.ceil(cfg.n / cfg.stride**4)
        self.full_len = self.base_len * cfg.stride**4
        crop = self.full_len - cfg.n
        self.crop_left = crop // 2
        self.layers: dict[str, L.Layer] = {
            "dense": L.Dense(cfg.n_z, self.base_len * widths[0], rng, dt, cfg.init_std)
        }
        outs = widths[1:] + [cfg.d]
        for i in range(4):
            self.layers[f"fconv{i + 1}"] = L.ConvTranspose1D(
                widths[i], outs[i], cfg.kernel_w, cfg.stride, rng, dt, cfg.init_std
            )
            if i < 3:
                self.layers[f"bn{i + 1}"] = L.BatchNorm1D(outs[i], dtype=dt)

    def __call__(self, z: Tensor, training: bool = True) -> Tensor:
        lay = self.layers
        h = L.relu(lay["dense"](z))
        h = h.reshape(z.shape[0], self.base_len, -1)
        for i in range(1, 4):
            h = L.relu(lay[f"bn{i}"](lay[f"fconv{i}"](h), training))
        h = lay["fconv4"](h)
        if self.full_len != self.cfg.n:
            h = h[:, self.crop_left : self.crop_left + self.cfg.n, :]
        return h

    def parameters(self) -> dict[str, Tensor]:
        return L.collect_parameters(self.layers)

    def buffers(self) -> dict[str, np.ndarray]:
        return L.collect_buffers(self.layers)


class Discriminator:
    """Conv-LeakyReLU, three Conv-BN-LeakyReLU blocks, flatten, dense, sigmoid."""

    def __init__(self, cfg: GanConfig, rng: Optional[np.random.Generator] = None, n_outputs: int = 1):
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        dt = _np_dtype(cfg)
        self.cfg = cfg
        self.lengths = conv_lengths(cfg.n, cfg.stride)
        widths = cfg.channel_widths
        ins = (cfg.d,) + widths[:3]
        self.layers: dict[str, L.Layer] = {}
        for i in range(4):
            self.layers[f"conv{i + 1}"] = L.Conv1D(ins[i], widths[i], cfg.kernel_w, cfg.stride, rng, dt, cfg.init_std)
            if i > 0:
                self.layers[f"bn{i + 1}"] = L.BatchNorm1D(widths[i], dtype=dt)
        self.flat_dim = self.lengths[-1] * widths[-1]
        self.layers["head"] = L.Dense(self.flat_dim, n_outputs, rng, dt, cfg.init_std)

    def features(self, x: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
        """Output of the last convolutional block, shape ``[B, L4, C4]``."""
        if x.ndim != 3 or x.shape[1:] != (self.cfg.n, self.cfg.d):
            raise ValueError(f"expected input [B, {self.cfg.n}, {self.cfg.d}], got {x.shape}")
        lay = self.layers
        h = L.leaky_relu(lay["conv1"](x))
        for i in range(2, 5):
            h = L.leaky_relu(lay[f"bn{i}"](lay[f"conv{i}"](h), training, update_stats))
        return h

    def logits(self, x: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
        return self.layers["head"](L.flatten(self.features(x, training, update_stats)))

    def __call__(self, x: Tensor, training: bool = True, update_stats: bool = True) -> Tensor:
        """Probability that each series is real, shape ``[B]``."""
        p = L.sigmoid(self.logits(x, training, update_stats))
        return p.reshape(x.shape[0])

    def parameters(self) -> dict[str, Tensor]:
        return L.collect_parameters(self.layers)

    def buffers(self) -> dict[str, np.ndarray]:
        return L.collect_buffers(self.layers)


def conv_lengths(n: int, stride: int = 2, depth: int = 4) -> list[int]:
    out, length = [], n
    for _ in range(depth):
        length = math.ceil(length / stride)
        out.append(length)
    return out


def build_generator(cfg: GanConfig, rng: Optional[np.random.Generator] = None) -> Generator:
    return Generator(cfg, rng)


def build_discriminator(cfg: GanConfig, rng: Optional[np.random.Generator] = None) -> Discriminator:
    return Discriminator(cfg, rng)


# --------------------------------------------------------------------------
# losses


def d_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-mean(log D(x) + log(1 - D(G(z))))`` with probabilities clamped to [1e-7, 1-1e-7]."""
    d_real = d_real if isinstance(d_real, Tensor) else Tensor(d_real)
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    real = d_real.clip(PROB_EPS, 1.0 - PROB_EPS).log()
    fake = (1.0 - d_fake.clip(PROB_EPS, 1.0 - PROB_EPS)).log()
    return -(real + fake).mean()


def g_loss(d_fake: Tensor) -> Tensor:
    d_fake = d_fake if isinstance(d_fake, Tensor) else Tensor(d_fake)
    return -d_fake.clip(PROB_EPS, 1.0 - PROB_EPS).log().mean()


def batch_accuracy(d_real, d_fake) -> float:
    """Fraction of correct real/fake calls at threshold 0.5 (exactly 0.5 is wrong)."""
    d_real = np.asarray(getattr(d_real, "data", d_real))
    d_fake = np.asarray(getattr(d_fake, "data", d_fake))
    correct = np.count_nonzero(d_real > 0.5) + np.count_nonzero(d_fake < 0.5)
    return correct / (d_real.size + d_fake.size)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainState:
    acc_last: float
    epoch: int = 0
    batch: int = 0
    log: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    LOG_COLUMNS = ("epoch", "batch", "d_loss", "g_loss", "acc_last", "d_updated")

    def epoch_means(self, column: str) -> np.ndarray:
        if not self.log:
            return np.zeros(0)
        epochs = np.array([r["epoch"] for r in self.log])
        values = np.array([r[column] for r in self.log], dtype=float)
        return np.array([values[epochs == e].mean() for e in np.unique(epochs)])

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.LOG_COLUMNS)
            for r in self.log:
                writer.writerow([r["epoch"], r["batch"], repr(r["d_loss"]), repr(r["g_loss"]),
                                 repr(r["acc_last"]), int(r["d_updated"])])


@contextlib.contextmanager
def _frozen(params: dict[str, Tensor]):
    """Temporarily stop gradient accumulation into ``params``."""
    flags = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = flags[k]


def sample_noise(rng: np.random.Generator, count: int, cfg: GanConfig) -> np.ndarray:
    return rng.uniform(cfg.noise_low, cfg.noise_high, size=(count, cfg.n_z)).astype(_np_dtype(cfg))


def _check_finite(value: float, what: str, state: TrainState) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(
            f"{what} became {value} at epoch {state.epoch}, batch {state.batch}; "
            "try a smaller learning rate or check the input for NaNs"
        )


def train(
    data: np.ndarray,
    cfg: GanConfig,
    generator: Optional[Generator] = None,
    discriminator: Optional[Discriminator] = None,
    on_epoch_end: Optional[Callable[[int, Generator, Discriminator, TrainState], None]] = None,
    gate: Optional[Callable[[float, float], bool]] = None,
) -> tuple[Generator, Discriminator, TrainState]:
    """Adversarial training with accuracy-gated discriminator updates.

    Parameters
    ----------
    data : ndarray, shape (N, n, d)
        z-normalised, unlabeled series.
    cfg : GanConfig
    on_epoch_end : callable, optional
        Called as ``on_epoch_end(epoch, G, D, state)`` after every epoch.
    gate : callable, optional
        Override of the update rule ``acc_last <= delta``; receives
        ``(acc_last, delta)``. Intended for tests.
    """
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[1:] != (cfg.n, cfg.d):
        raise ValueError(f"expected data [N, {cfg.n}, {cfg.d}], got {data.shape}")
    n_sample = data.shape[0]
    if n_sample < cfg.m:
        raise ValueError(f"dataset has {n_sample} series, fewer than the batch size {cfg.m}")
    data = data.astype(_np_dtype(cfg), copy=False)

    rng = np.random.default_rng(cfg.seed)
    G = generator if generator is not None else Generator(cfg, rng)
    D = discriminator if discriminator is not None else Discriminator(cfg, rng)
    g_opt = Adam(G.parameters(), cfg.alpha, cfg.beta1, cfg.beta2)
    d_opt = Adam(D.parameters(), cfg.alpha, cfg.beta1, cfg.beta2)
    gate = gate if gate is not None else (lambda acc, delta: acc <= delta)

    n_batch = n_sample // cfg.m
    state = TrainState(acc_last=cfg.delta)
    for epoch in range(cfg.n_epoch):
        started = time.perf_counter()
        state.epoch = epoch
        order = rng.permutation(n_sample)
        for j in range(n_batch):
            state.batch = j
            x = Tensor(data[order[j * cfg.m : (j + 1) * cfg.m]])
            z = Tensor(sample_noise(rng, cfg.m, cfg))
            acc_prior = state.acc_last
            fake = G(z, training=True)

            update_d = bool(gate(acc_prior, cfg.delta))
            if update_d:
                d_opt.zero_grad()
                p_real = D(x, training=True)
                p_fake = D(fake.detach(), training=True)
                loss_d = d_loss(p_real, p_fake)
                _check_finite(loss_d.item(), "d_loss", state)
                loss_d.backward()
                d_opt.step()
                real_out = p_real.data
            else:
                with no_grad():
                    real_out = D(x, training=True, update_stats=False).data

            g_opt.zero_grad()
            with _frozen(D.parameters()):
                p_fake_g = D(fake, training=True, update_stats=False)
            loss_g = g_loss(p_fake_g)
            _check_finite(loss_g.item(), "g_loss", state)
            loss_g.backward()
            g_opt.step()

            fake_out = p_fake_g.data
            if update_d:
                d_value = loss_d.item()
            else:
                with no_grad():
                    d_value = d_loss(Tensor(real_out), Tensor(fake_out)).item()
            state.acc_last = batch_accuracy(real_out, fake_out)
            state.log.append(
                {
                    "epoch": epoch,
                    "batch": j,
                    "d_loss": d_value,
                    "g_loss": loss_g.item(),
                    "acc_last": acc_prior,
                    "d_updated": update_d,
                }
            )
        state.epoch_seconds.append(time.perf_counter() - started)
        if logger.isEnabledFor(logging.INFO):
            recent = state.log[-n_batch:]
            logger.info(
                "epoch %d: d_loss %.4f g_loss %.4f d_updates %d/%d",
                epoch, np.mean([r["d_loss"] for r in recent]), np.mean([r["g_loss"] for r in recent]),
                sum(r["d_updated"] for r in recent), n_batch,
            )
        if on_epoch_end is not None:
            on_epoch_end(epoch, G, D, state)
    return G, D, state


def sample(generator: Generator, count: int, seed=None, chunk: int = 512) -> np.ndarray:
    """Draw ``count`` series from ``generator`` in inference mode."""
    cfg = generator.cfg
    if count == 0:
        return np.zeros((0, cfg.n, cfg.d), dtype=_np_dtype(cfg))
    rng = np.random.default_rng(seed)
    z = sample_noise(rng, count, cfg)
    out = []
    with no_grad():
        for start in range(0, count, chunk):
            out.append(generator(Tensor(z[start : start + chunk]), training=False).data)
    return np.concatenate(out, axis=0)

