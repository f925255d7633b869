"""scikit-learn style front end: fit a TCGAN on unlabeled series, transform to features."""
from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from ._validation import check_series
from .encoder import Encoder
from .gan import GanConfig, sample, train


class TCGAN(TransformerMixin, BaseEstimator):
    """Adversarially pretrained convolutional encoder for time series.

    ``fit`` trains a generator/discriminator pair on unlabeled series;
    ``transform`` maps series to the max-pooled, flattened output of the
    discriminator's last convolution block. ``epochs=0`` leaves the networks
    at their random initialisation.

    Parameters
    ----------
    n_z : int
        Noise vector length.
    batch_size : int
    epochs : int
    delta : float
        Discriminator update threshold on last-batch accuracy, in (0.5, 1).
    alpha, beta1, beta2 : float
        Adam settings shared by both networks.
    channel_widths : tuple of 4 ints
        Discriminator conv widths; the generator mirrors them.
    kernel_w, stride : int
    normalize : bool
        L2-normalise each representation vector.
    dtype : str
        Float type used for training ("float32" or "float64").
    seed : int, optional
    """

    def __init__(self, n_z=100, batch_size=16, epochs=300, delta=0.75, alpha=0.0002, beta1=0.5, beta2=0.9,
                 channel_widths=(32, 64, 128, 256), kernel_w=10, stride=2, normalize=False, dtype="float32",
                 seed=None):
        self.n_z = n_z
        self.batch_size = batch_size
        self.epochs = epochs
        self.delta = delta
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.channel_widths = channel_widths
        self.kernel_w = kernel_w
        self.stride = stride
        self.normalize = normalize
        self.dtype = dtype
        self.seed = seed

    def make_config(self, n: int, d: int) -> GanConfig:
        return GanConfig(
            n=n, d=d, n_z=self.n_z, m=self.batch_size, n_epoch=self.epochs, delta=self.delta,
            alpha=self.alpha, beta1=self.beta1, beta2=self.beta2, channel_widths=self.channel_widths,
            kernel_w=self.kernel_w, stride=self.stride, dtype=self.dtype,
            seed=0 if self.seed is None else int(self.seed),
        )

    def fit(self, X, y=None, on_epoch_end=None):
        X = check_series(X)
        self.config_ = self.make_config(X.shape[1], X.shape[2])
        started = time.perf_counter()
        self.generator_, self.discriminator_, self.history_ = train(X, self.config_, on_epoch_end=on_epoch_end)
        self.train_seconds_ = time.perf_counter() - started
        self.encoder_ = Encoder(self.discriminator_, normalize=self.normalize)
        self.n_features_in_ = X.shape[1] * X.shape[2]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        X = check_series(X, self.config_.n, self.config_.d)
        return self.encoder_.encode(X)

    def sample(self, count: int, seed=None) -> np.ndarray:
        check_is_fitted(self, "generator_")
        return sample(self.generator_, count, seed)

    @property
    def n_components_(self) -> int:
        check_is_fitted(self, "encoder_")
        return self.encoder_.n_v

    def save(self, path) -> None:
        check_is_fitted(self, "encoder_")
        checkpoint.save_gan(path, self.generator_, self.discriminator_, extra={"estimator": self._json_params()})

    def _json_params(self) -> dict:
        params = self.get_params()
        params["channel_widths"] = list(params["channel_widths"])
        return params

    @classmethod
    def load(cls, path) -> "TCGAN":
        G, D, meta = checkpoint.load_gan(path)
        params = meta.get("extra", {}).get("estimator")
        est = cls(**params) if params else cls()
        est.config_ = G.cfg
        est.generator_, est.discriminator_ = G, D
        est.encoder_ = Encoder(D, normalize=est.normalize)
        est.n_features_in_ = G.cfg.n * G.cfg.d
        return est
