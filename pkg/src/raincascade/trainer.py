"""Supervised training of the cascade on (rainy, clean) pairs."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .derainnet import DerainModel, model_forward
from .tensorcore import ContractViolation, Tensor, backward, mean_squared

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 200
    batch_size: int = 4
    patch_size: int = 48
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ContractViolation(f"epochs must be >= 0; got {self.epochs}")
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be positive; got {self.batch_size}")
        if self.patch_size < 1:
            raise ContractViolation(f"patch_size must be positive; got {self.patch_size}")
        if self.learning_rate <= 0:
            raise ContractViolation(f"learning_rate must be positive; got {self.learning_rate}")

    def to_dict(self) -> dict:
        return asdict(self)

    def check_model(self, model: DerainModel) -> None:
        for r in model.shuffle_factors():
            if self.patch_size % r:
                raise ContractViolation(f"patch_size {self.patch_size} not divisible by shuffle factor {r}")


@dataclass
class OptimizerState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "OptimizerState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


@dataclass
class LossHistory:
    epoch_losses: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch_losses)


def batch_loss(model: DerainModel, batch_y: Tensor, batch_x: Tensor) -> Tensor:
    if batch_y.shape != batch_x.shape:
        raise ContractViolation(f"batch shapes differ: {batch_y.shape} vs {batch_x.shape}")
    _, _, x_hat = model_forward(model, batch_y)
    return mean_squared(x_hat, batch_x)


def adam_step(params: Sequence[Tensor], state: OptimizerState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update in place, then clear gradients."""
    if len(state.first_moment) != len(params):
        raise ContractViolation("optimizer state does not match parameter list")
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ContractViolation(f"parameters {missing} have no gradient; run backward first")
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)
        p.grad = None


def augment_pair(y: np.ndarray, x: np.ndarray, rng: np.random.Generator, patch_size: int,
                 enabled: bool = True, flip: Optional[bool] = None) -> tuple[np.ndarray, np.ndarray]:
    """Apply one random horizontal flip + crop to both images of a (C, H, W) pair."""
    if y.shape != x.shape:
        raise ContractViolation(f"pair shapes differ: {y.shape} vs {x.shape}")
    if not enabled:
        return y, x
    h, w = y.shape[-2:]
    if h < patch_size or w < patch_size:
        raise ContractViolation(f"image {h}x{w} smaller than patch {patch_size}")
    do_flip = rng.random() < 0.5 if flip is None else flip
    if do_flip:
        y, x = y[..., ::-1], x[..., ::-1]
    top = int(rng.integers(0, h - patch_size + 1))
    left = int(rng.integers(0, w - patch_size + 1))
    window = (..., slice(top, top + patch_size), slice(left, left + patch_size))
    return np.ascontiguousarray(y[window]), np.ascontiguousarray(x[window])


def _center_crop(arr: np.ndarray, size: int) -> np.ndarray:
    h, w = arr.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return np.ascontiguousarray(arr[..., top:top + size, left:left + size])


def _as_chw(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ContractViolation(f"dataset entries are single images; got {arr.shape}")
        arr = arr[0]
    return arr


def train(dataset: Sequence[tuple], model: DerainModel, cfg: TrainConfig,
          on_epoch: Optional[Callable[[int, float, DerainModel], None]] = None) -> tuple[DerainModel, LossHistory]:
    """Train ``model`` in place on ``(y, x)`` pairs; returns it with per-epoch mean losses.

    Every random draw comes from one generator seeded with ``cfg.seed``, so a
    run is a pure function of (dataset, initial model, cfg).
    """
    if not dataset:
        raise ContractViolation("training needs at least one (y, x) pair")
    cfg.check_model(model)
    pairs = [(_as_chw(y).astype(model.dtype), _as_chw(x).astype(model.dtype)) for y, x in dataset]
    for y, x in pairs:
        if y.shape != x.shape:
            raise ContractViolation(f"pair shapes differ: {y.shape} vs {x.shape}")
        if min(y.shape[-2:]) < cfg.patch_size:
            raise ContractViolation(f"image {y.shape[-2:]} smaller than patch {cfg.patch_size}")

    params = model.parameters()
    state = OptimizerState.for_params(params)
    history = LossHistory()
    rng = np.random.default_rng(cfg.seed)
    model.train_seed = cfg.seed
    model.zero_grad()

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            ys, xs = [], []
            for idx in order[start:start + cfg.batch_size]:
                y, x = pairs[idx]
                if cfg.augment:
                    y, x = augment_pair(y, x, rng, cfg.patch_size)
                else:
                    y, x = _center_crop(y, cfg.patch_size), _center_crop(x, cfg.patch_size)
                ys.append(y)
                xs.append(x)
            loss = batch_loss(model, Tensor(np.stack(ys)), Tensor(np.stack(xs)))
            backward(loss)
            adam_step(params, state, cfg)
            total += loss.item() * len(ys)
            count += len(ys)
        history.epoch_losses.append(total / count)
        log.debug("epoch %d loss %.6g", epoch + 1, history.epoch_losses[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, history.epoch_losses[-1], model)
    return model, history
