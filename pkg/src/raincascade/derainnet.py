"""Two-branch cascaded deraining network.

The rain branch estimates the streak layer from the observation; the noise
branch sees the partially derained image next to the raw observation and
estimates the residual noise. The clean estimate is the explicit difference
``y - r_hat - n_hat``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .tensorcore import (
    ContractViolation,
    Tensor,
    add,
    concat_channels,
    conv2d,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    sub,
)

IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class BranchConfig:
    hidden_channels: int
    num_blocks: int
    shuffle_factor: int
    input_channels: int = IMAGE_CHANNELS

    def __post_init__(self):
        for name in ("hidden_channels", "num_blocks", "shuffle_factor", "input_channels"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ContractViolation(f"BranchConfig.{name} must be a positive integer; got {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_RAIN_BRANCH = BranchConfig(hidden_channels=32, num_blocks=4, shuffle_factor=2, input_channels=3)
DEFAULT_NOISE_BRANCH = BranchConfig(hidden_channels=16, num_blocks=2, shuffle_factor=2, input_channels=6)


@dataclass
class ResidualBlockParams:
    conv1_kernel: Tensor
    conv1_bias: Tensor
    conv2_kernel: Tensor
    conv2_bias: Tensor

    @property
    def channels(self) -> int:
        return self.conv1_kernel.shape[0]


@dataclass
class BranchParams:
    head_kernel: Tensor
    head_bias: Tensor
    blocks: list[ResidualBlockParams]
    tail_kernel: Tensor
    tail_bias: Tensor

    def named_tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.head.kernel", self.head_kernel
        yield f"{prefix}.head.bias", self.head_bias
        for i, block in enumerate(self.blocks):
            yield f"{prefix}.block{i}.conv1.kernel", block.conv1_kernel
            yield f"{prefix}.block{i}.conv1.bias", block.conv1_bias
            yield f"{prefix}.block{i}.conv2.kernel", block.conv2_kernel
            yield f"{prefix}.block{i}.conv2.bias", block.conv2_bias
        yield f"{prefix}.tail.kernel", self.tail_kernel
        yield f"{prefix}.tail.bias", self.tail_bias


@dataclass
class DerainModel:
    rain_branch: BranchParams
    noise_branch: BranchParams
    rain_config: BranchConfig = DEFAULT_RAIN_BRANCH
    noise_config: BranchConfig = DEFAULT_NOISE_BRANCH
    seed: int = 0
    train_seed: int = 0

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return list(self.rain_branch.named_tensors("rain")) + list(self.noise_branch.named_tensors("noise"))

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.parameters())

    @property
    def dtype(self) -> np.dtype:
        return self.rain_branch.head_kernel.dtype

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype) -> "DerainModel":
        """Copy of the model with every parameter cast to ``dtype``."""
        arrays = {name: t.data.astype(dtype) for name, t in self.named_parameters()}
        return model_from_arrays(self.rain_config, self.noise_config, arrays, seed=self.seed, train_seed=self.train_seed)

    def copy(self) -> "DerainModel":
        return self.astype(self.dtype)

    def frozen(self) -> "DerainModel":
        """Parameter-sharing view that builds no gradient graph."""
        arrays = {name: t.data for name, t in self.named_parameters()}
        return model_from_arrays(self.rain_config, self.noise_config, arrays, seed=self.seed,
                                 train_seed=self.train_seed, requires_grad=False)

    def shuffle_factors(self) -> tuple[int, int]:
        return self.rain_config.shuffle_factor, self.noise_config.shuffle_factor


def _branch_shapes(cfg: BranchConfig) -> list[tuple[str, tuple[int, ...]]]:
    r2 = cfg.shuffle_factor ** 2
    c = cfg.hidden_channels
    shapes = [
        ("head.kernel", (c, cfg.input_channels * r2, 3, 3)),
        ("head.bias", (1, c, 1, 1)),
    ]
    for i in range(cfg.num_blocks):
        shapes += [
            (f"block{i}.conv1.kernel", (c, c, 3, 3)),
            (f"block{i}.conv1.bias", (1, c, 1, 1)),
            (f"block{i}.conv2.kernel", (c, c, 3, 3)),
            (f"block{i}.conv2.bias", (1, c, 1, 1)),
        ]
    shapes += [
        ("tail.kernel", (IMAGE_CHANNELS * r2, c, 3, 3)),
        ("tail.bias", (1, IMAGE_CHANNELS * r2, 1, 1)),
    ]
    return shapes


def parameter_shapes(rain_cfg: BranchConfig, noise_cfg: BranchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every parameter, in checkpoint order."""
    return [(f"rain.{n}", s) for n, s in _branch_shapes(rain_cfg)] + [
        (f"noise.{n}", s) for n, s in _branch_shapes(noise_cfg)
    ]


def _assemble_branch(prefix: str, cfg: BranchConfig, arrays: dict, requires_grad: bool) -> BranchParams:
    def t(name):
        return Tensor(arrays[f"{prefix}.{name}"], requires_grad=requires_grad)

    blocks = [
        ResidualBlockParams(
            t(f"block{i}.conv1.kernel"), t(f"block{i}.conv1.bias"),
            t(f"block{i}.conv2.kernel"), t(f"block{i}.conv2.bias"),
        )
        for i in range(cfg.num_blocks)
    ]
    return BranchParams(t("head.kernel"), t("head.bias"), blocks, t("tail.kernel"), t("tail.bias"))


def model_from_arrays(rain_cfg: BranchConfig, noise_cfg: BranchConfig, arrays: dict, seed: int = 0,
                      train_seed: int = 0, requires_grad: bool = True) -> DerainModel:
    expected = parameter_shapes(rain_cfg, noise_cfg)
    missing = [n for n, _ in expected if n not in arrays]
    if missing:
        raise ContractViolation(f"missing parameters: {missing}")
    for name, shape in expected:
        if tuple(arrays[name].shape) != shape:
            raise ContractViolation(f"{name}: expected shape {shape}, got {tuple(arrays[name].shape)}")
    return DerainModel(
        rain_branch=_assemble_branch("rain", rain_cfg, arrays, requires_grad),
        noise_branch=_assemble_branch("noise", noise_cfg, arrays, requires_grad),
        rain_config=rain_cfg,
        noise_config=noise_cfg,
        seed=int(seed),
        train_seed=int(train_seed),
    )


def init_model(rain_cfg: BranchConfig = DEFAULT_RAIN_BRANCH, noise_cfg: BranchConfig = DEFAULT_NOISE_BRANCH,
               seed: int = 0, dtype=np.float32) -> DerainModel:
    """Fan-in scaled uniform kernels, zero biases, drawn from ``seed``."""
    if noise_cfg.input_channels != 2 * IMAGE_CHANNELS:
        raise ContractViolation(
            f"noise branch consumes (y - r_hat, y): input_channels must be {2 * IMAGE_CHANNELS}; "
            f"got {noise_cfg.input_channels}")
    if rain_cfg.input_channels != IMAGE_CHANNELS:
        raise ContractViolation(f"rain branch input_channels must be {IMAGE_CHANNELS}; got {rain_cfg.input_channels}")
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in parameter_shapes(rain_cfg, noise_cfg):
        if name.endswith(".bias"):
            arrays[name] = np.zeros(shape, dtype=dtype)
        else:
            bound = np.sqrt(1.0 / (shape[1] * shape[2] * shape[3]))
            arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return model_from_arrays(rain_cfg, noise_cfg, arrays, seed=seed)


def zero_model(rain_cfg: BranchConfig = DEFAULT_RAIN_BRANCH, noise_cfg: BranchConfig = DEFAULT_NOISE_BRANCH,
               dtype=np.float32) -> DerainModel:
    arrays = {name: np.zeros(shape, dtype=dtype) for name, shape in parameter_shapes(rain_cfg, noise_cfg)}
    return model_from_arrays(rain_cfg, noise_cfg, arrays)


def residual_block_forward(x: Tensor, params: ResidualBlockParams) -> Tensor:
    if x.shape[1] != params.channels:
        raise ContractViolation(f"residual block expects {params.channels} channels; got {x.shape[1]}")
    hidden = relu(conv2d(x, params.conv1_kernel, params.conv1_bias, padding=1))
    residual = conv2d(hidden, params.conv2_kernel, params.conv2_bias, padding=1)
    return relu(add(residual, x))


def _branch_forward(branch: BranchParams, cfg: BranchConfig, x: Tensor) -> Tensor:
    r = cfg.shuffle_factor
    _, _, h, w = x.shape
    if h % r or w % r:
        raise ContractViolation(f"image extents {h}x{w} not divisible by shuffle factor {r}")
    z = pixel_unshuffle(x, r)
    z = conv2d(z, branch.head_kernel, branch.head_bias, padding=1)
    for block in branch.blocks:
        z = residual_block_forward(z, block)
    z = conv2d(z, branch.tail_kernel, branch.tail_bias, padding=1)
    return pixel_shuffle(z, r)


def _check_image_batch(y: Tensor) -> None:
    if y.shape[1] != IMAGE_CHANNELS:
        raise ContractViolation(f"expected {IMAGE_CHANNELS}-channel images; got shape {y.shape}")


def rain_branch_forward(model: DerainModel, y: Tensor) -> Tensor:
    _check_image_batch(y)
    return _branch_forward(model.rain_branch, model.rain_config, y)


def noise_branch_forward(model: DerainModel, y: Tensor, r_hat: Tensor) -> Tensor:
    _check_image_batch(y)
    if r_hat.shape != y.shape:
        raise ContractViolation(f"rain estimate shape {r_hat.shape} does not match input {y.shape}")
    return _branch_forward(model.noise_branch, model.noise_config, concat_channels(sub(y, r_hat), y))


def model_forward(model: DerainModel, y: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Return ``(r_hat, n_hat, x_hat)`` with ``x_hat = y - r_hat - n_hat``."""
    r_hat = rain_branch_forward(model, y)
    n_hat = noise_branch_forward(model, y, r_hat)
    x_hat = sub(sub(y, r_hat), n_hat)
    return r_hat, n_hat, x_hat


def derain_image(model: DerainModel, y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run a frozen forward pass on one (3, H, W) image of any size.

    Extents not divisible by the shuffle factors are reflect-padded on the
    bottom/right and the three outputs cropped back to (H, W).
    """
    y = np.asarray(y, dtype=model.dtype)
    if y.ndim != 3 or y.shape[0] != IMAGE_CHANNELS:
        raise ContractViolation(f"expected a (3, H, W) image; got {y.shape}")
    _, h, w = y.shape
    step = math.lcm(*model.shuffle_factors())
    ph, pw = -h % step, -w % step
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "symmetric"
        y = np.pad(y, ((0, 0), (0, ph), (0, pw)), mode=mode)
    outputs = model_forward(model.frozen(), Tensor(y[None]))
    return tuple(np.ascontiguousarray(t.data[0, :, :h, :w]) for t in outputs)
