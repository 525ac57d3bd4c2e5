"""scikit-learn style wrappers: a rain synthesizer and the deraining regressor."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .derainnet import BranchConfig, derain_image, init_model
from .metrics import psnr
from .rainmodel import RainConfig, synthesize
from .tensorcore import Tensor
from .trainer import TrainConfig, train
from .validation import check_divisible, check_image_batch, check_paired


class RainSynthesizer(TransformerMixin, BaseEstimator):
    """Adds seeded rain streaks and sensor noise to clean images.

    Image ``i`` of a batch is rendered with seed ``seed + i``.
    """

    def __init__(self, streak_count=40, length_range=(8.0, 20.0), angle_range=(-15.0, 15.0), width=1.5,
                 intensity_range=(0.1, 0.4), noise_sigma=0.02, seed=0):
        self.streak_count = streak_count
        self.length_range = length_range
        self.angle_range = angle_range
        self.width = width
        self.intensity_range = intensity_range
        self.noise_sigma = noise_sigma
        self.seed = seed

    def _config(self, seed) -> RainConfig:
        return RainConfig(self.streak_count, self.length_range, self.angle_range, self.width,
                          self.intensity_range, self.noise_sigma, int(seed))

    def fit(self, X, y=None):
        self._config(self.seed)
        check_image_batch(X, value_range=(0.0, 1.0))
        self.is_fitted_ = True
        return self

    def synthesize_layers(self, X):
        """Return ``(rainy, rain_layer, noise_layer)`` batches for clean ``X``."""
        X = check_image_batch(X, value_range=(0.0, 1.0))
        pairs = [synthesize(Tensor(x[None]), self._config(self.seed + i)) for i, x in enumerate(X)]
        stack = lambda attr: np.concatenate([getattr(p, attr).data for p in pairs])  # noqa: E731
        return stack("y"), stack("r"), stack("noise")

    def transform(self, X):
        return self.synthesize_layers(X)[0]


class DerainRegressor(RegressorMixin, BaseEstimator):
    """Two-branch cascaded deraining network trained with Adam on MSE.

    ``fit(X, y)`` takes rainy images ``X`` and clean targets ``y``, both
    shaped (n, 3, H, W) with values nominally in [0, 1]. ``predict`` returns
    the derained estimates; ``score`` is the mean PSNR in dB.
    """

    def __init__(self, rain_hidden_channels=32, rain_num_blocks=4, rain_shuffle_factor=2,
                 noise_hidden_channels=16, noise_num_blocks=2, noise_shuffle_factor=2,
                 learning_rate=1e-3, epochs=200, batch_size=4, patch_size=48, augment=True,
                 model_seed=0, train_seed=0):
        self.rain_hidden_channels = rain_hidden_channels
        self.rain_num_blocks = rain_num_blocks
        self.rain_shuffle_factor = rain_shuffle_factor
        self.noise_hidden_channels = noise_hidden_channels
        self.noise_num_blocks = noise_num_blocks
        self.noise_shuffle_factor = noise_shuffle_factor
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.augment = augment
        self.model_seed = model_seed
        self.train_seed = train_seed

    def _branch_configs(self):
        rain = BranchConfig(self.rain_hidden_channels, self.rain_num_blocks, self.rain_shuffle_factor, 3)
        noise = BranchConfig(self.noise_hidden_channels, self.noise_num_blocks, self.noise_shuffle_factor, 6)
        return rain, noise

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
                           patch_size=self.patch_size, seed=self.train_seed, augment=self.augment)

    def fit(self, X, y):
        X, y = check_paired(X, y)
        rain_cfg, noise_cfg = self._branch_configs()
        cfg = self._train_config()
        check_divisible(cfg.patch_size, (rain_cfg.shuffle_factor, noise_cfg.shuffle_factor))
        model = init_model(rain_cfg, noise_cfg, seed=self.model_seed)
        self.model_, history = train(list(zip(X, y)), model, cfg)
        self.loss_history_ = list(history.epoch_losses)
        return self

    @classmethod
    def from_model(cls, model):
        """Wrap an already trained model (e.g. a loaded checkpoint)."""
        rc, nc = model.rain_config, model.noise_config
        est = cls(rain_hidden_channels=rc.hidden_channels, rain_num_blocks=rc.num_blocks,
                  rain_shuffle_factor=rc.shuffle_factor, noise_hidden_channels=nc.hidden_channels,
                  noise_num_blocks=nc.num_blocks, noise_shuffle_factor=nc.shuffle_factor,
                  model_seed=model.seed, train_seed=model.train_seed)
        est.model_ = model
        est.loss_history_ = []
        return est

    def decompose(self, X):
        """Return ``(rain, noise, derained)`` estimate batches."""
        check_is_fitted(self, "model_")
        X = check_image_batch(X, dtype=self.model_.dtype)
        outs = [derain_image(self.model_, x) for x in X]
        return tuple(np.stack([o[k] for o in outs]) for k in range(3))

    def predict(self, X):
        return self.decompose(X)[2]

    def score(self, X, y, sample_weight=None):
        pred = self.predict(X)
        _, y = check_paired(pred, y)
        values = np.array([psnr(p, t) for p, t in zip(pred, y)])
        return float(np.average(values, weights=sample_weight))
