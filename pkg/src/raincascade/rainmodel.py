"""Seeded synthetic rain: ``y = x + rain + noise`` with ground-truth layers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensorcore import ContractViolation, Tensor

# FWHM -> standard deviation of a Gaussian profile
_FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class RainConfig:
    streak_count: int = 40
    length_range: tuple[float, float] = (8.0, 20.0)
    angle_range: tuple[float, float] = (-15.0, 15.0)
    width: float = 1.5
    intensity_range: tuple[float, float] = (0.1, 0.4)
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "length_range", tuple(float(v) for v in self.length_range))
        object.__setattr__(self, "angle_range", tuple(float(v) for v in self.angle_range))
        object.__setattr__(self, "intensity_range", tuple(float(v) for v in self.intensity_range))
        if self.streak_count < 0:
            raise ContractViolation(f"streak_count must be >= 0; got {self.streak_count}")
        for name in ("length_range", "angle_range", "intensity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ContractViolation(f"{name}: min {lo} exceeds max {hi}")
        if self.length_range[0] < 0:
            raise ContractViolation(f"length_range must be non-negative; got {self.length_range}")
        if self.intensity_range[0] < 0:
            raise ContractViolation(f"streaks only brighten: intensity_range min must be >= 0; got {self.intensity_range}")
        if self.width < 1:
            raise ContractViolation(f"width must be >= 1 pixel; got {self.width}")
        if self.noise_sigma < 0:
            raise ContractViolation(f"noise_sigma must be >= 0; got {self.noise_sigma}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("length_range", "angle_range", "intensity_range"):
            d[k] = list(d[k])
        return d

    def with_seed(self, seed: int) -> "RainConfig":
        return RainConfig(**{**asdict(self), "seed": int(seed)})


@dataclass
class SyntheticPair:
    x: Tensor
    y: Tensor
    r: Tensor
    noise: Tensor


def _streak(layer: np.ndarray, cx, cy, length, angle_deg, intensity, width):
    """Add one anti-aliased segment with a Gaussian cross-profile into ``layer``."""
    h, w = layer.shape
    theta = math.radians(angle_deg)
    # direction measured from vertical, positive leaning right as it falls
    dx, dy = math.sin(theta), math.cos(theta)
    half = 0.5 * length
    x0, y0 = cx - half * dx, cy - half * dy
    x1, y1 = cx + half * dx, cy + half * dy
    sigma = width * _FWHM_TO_SIGMA
    reach = 3.0 * sigma + 1.0
    c0 = max(int(math.floor(min(x0, x1) - reach)), 0)
    c1 = min(int(math.ceil(max(x0, x1) + reach)) + 1, w)
    r0 = max(int(math.floor(min(y0, y1) - reach)), 0)
    r1 = min(int(math.ceil(max(y0, y1) + reach)) + 1, h)
    if c0 >= c1 or r0 >= r1:
        return
    py, px = np.mgrid[r0:r1, c0:c1]
    px = px + 0.5
    py = py + 0.5
    seg_x, seg_y = x1 - x0, y1 - y0
    seg_len2 = seg_x * seg_x + seg_y * seg_y
    if seg_len2 > 0:
        t = np.clip(((px - x0) * seg_x + (py - y0) * seg_y) / seg_len2, 0.0, 1.0)
    else:
        t = np.zeros_like(px)
    dist2 = (px - (x0 + t * seg_x)) ** 2 + (py - (y0 + t * seg_y)) ** 2
    layer[r0:r1, c0:c1] += intensity * np.exp(-dist2 / (2.0 * sigma * sigma))


def render_rain_layer(height: int, width: int, cfg: RainConfig, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    if height < 1 or width < 1:
        raise ContractViolation(f"extents must be positive; got {height}x{width}")
    layer = np.zeros((height, width), dtype=np.float64)
    for _ in range(cfg.streak_count):
        cx = rng.uniform(0.0, width)
        cy = rng.uniform(0.0, height)
        length = rng.uniform(*cfg.length_range)
        angle = rng.uniform(*cfg.angle_range)
        intensity = rng.uniform(*cfg.intensity_range)
        _streak(layer, cx, cy, length, angle, intensity, cfg.width)
    layer = layer.astype(dtype)
    return Tensor(np.broadcast_to(layer, (1, 3, height, width)).copy())


def render_noise_layer(height: int, width: int, sigma: float, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """i.i.d. Gaussian noise via Box-Muller on the generator's uniforms."""
    if sigma < 0:
        raise ContractViolation(f"sigma must be >= 0; got {sigma}")
    n = 3 * height * width
    if sigma == 0:
        return Tensor(np.zeros((1, 3, height, width), dtype=dtype))
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1]
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])[:n]
    return Tensor((sigma * z).reshape(1, 3, height, width).astype(dtype))


def synthesize(x: Tensor, cfg: RainConfig) -> SyntheticPair:
    """Render rain and noise for clean image ``x`` from ``cfg.seed``."""
    if x.shape[0] != 1 or x.shape[1] != 3:
        raise ContractViolation(f"expected a single RGB image [1, 3, H, W]; got {x.shape}")
    if x.data.size and (x.data.min() < 0 or x.data.max() > 1):
        raise ContractViolation("clean image values must lie in [0, 1]")
    _, _, h, w = x.shape
    rng = np.random.default_rng(cfg.seed)
    r = render_rain_layer(h, w, cfg, rng, dtype=x.dtype)
    noise = render_noise_layer(h, w, cfg.noise_sigma, rng, dtype=x.dtype)
    y = Tensor(x.data + r.data + noise.data)
    return SyntheticPair(x=Tensor(x.data.copy()), y=y, r=r, noise=noise)


def make_scene(height: int, width: int, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """Procedural clean image: smooth gradients, soft blobs and a few flat shapes.

    Stands in for natural photographs when no clean set is available.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)
    img = np.empty((3, height, width))
    base = rng.uniform(0.15, 0.55, size=3)
    gx, gy = rng.uniform(-0.25, 0.25, size=(2, 3))
    for c in range(3):
        img[c] = base[c] + gx[c] * xx + gy[c] * yy
    for _ in range(rng.integers(3, 7)):
        cx, cy = rng.uniform(0, 1, size=2)
        s = rng.uniform(0.08, 0.3)
        amp = rng.uniform(-0.25, 0.25, size=3)
        bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
        img += amp[:, None, None] * bump
    for _ in range(rng.integers(1, 4)):
        x0, x1 = np.sort(rng.uniform(0, 1, size=2))
        y0, y1 = np.sort(rng.uniform(0, 1, size=2))
        mask = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
        img[:, mask] = rng.uniform(0.05, 0.7, size=3)[:, None]
    return Tensor(np.clip(img, 0.0, 1.0)[None].astype(dtype))
