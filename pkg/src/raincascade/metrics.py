"""MSE, PSNR and SSIM on image arrays.

Inputs may be ``Tensor`` objects or arrays shaped ``(C, H, W)``,
``(1, C, H, W)`` or ``(H, W)``; everything is evaluated in 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensorcore import ContractViolation, Tensor


def _as_image(img) -> np.ndarray:
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    arr = arr.astype(np.float64)
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ContractViolation(f"metrics take one image at a time; got batch of {arr.shape[0]}")
        arr = arr[0]
    elif arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ContractViolation(f"unsupported image shape {arr.shape}")
    return arr


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_image(x), _as_image(y)
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse_image(x, y) -> float:
    a, b = _pair(x, y)
    d = a - b
    return float(np.mean(d * d))


def psnr(x, y, peak: float = 1.0) -> float:
    """10 * log10(peak**2 / MSE) in dB; ``inf`` for identical images."""
    if peak <= 0:
        raise ContractViolation(f"peak must be positive; got {peak}")
    err = mse_image(x, y)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    window_size: int = 11
    window_sigma: float = 1.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ContractViolation(f"window_size must be a positive odd integer; got {self.window_size}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid-mode filtering of (C, H, W) with 1-D window ``g``."""
    n = g.size
    rows = sliding_window_view(img, n, axis=1) @ g  # C, H-n+1, W
    return sliding_window_view(rows, n, axis=2) @ g  # C, H-n+1, W-n+1


def ssim_map(x, y, params: SsimParams = SsimParams()) -> np.ndarray:
    a, b = _pair(x, y)
    n = params.window_size
    if a.shape[1] < n or a.shape[2] < n:
        raise ContractViolation(f"image {a.shape[1]}x{a.shape[2]} smaller than the {n}x{n} window")
    g = gaussian_window(n, params.window_sigma)
    mu_x = _filter_valid(a, g)
    mu_y = _filter_valid(b, g)
    var_x = np.maximum(_filter_valid(a * a, g) - mu_x * mu_x, 0.0)
    var_y = np.maximum(_filter_valid(b * b, g) - mu_y * mu_y, 0.0)
    cov = _filter_valid(a * b, g) - mu_x * mu_y
    sd_xy = np.sqrt(var_x) * np.sqrt(var_y)
    c1, c2, c3 = params.c1, params.c2, params.c3

    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    con = (2.0 * sd_xy + c2) / (var_x + var_y + c2)
    struct = (cov + c3) / (sd_xy + c3)
    if params.alpha == params.beta == params.gamma == 1.0:
        return lum * con * struct
    return np.power(lum, params.alpha) * np.power(con, params.beta) * np.power(struct, params.gamma)


def ssim(x, y, params: SsimParams = SsimParams()) -> float:
    """Mean Gaussian-windowed SSIM over valid positions, averaged over channels."""
    return float(np.mean(ssim_map(x, y, params).mean(axis=(1, 2))))
