"""PSNR and SSIM under a configurable channel/border protocol."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from ..imaging import ImagePlanar, quantized, rgb_to_luma, shave_border

IDENTICAL = math.inf  # PSNR of two identical images

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    """How images are compared.

    ``shave=None`` means ``ceil(scale)`` pixels. With ``quantize`` both the LR
    input and the output are rounded to 8 bits first, as if read from and
    written to PNG.
    """

    channel: str = "luma"
    shave: int | None = None
    peak: float = 1.0
    quantize: bool = True

    def __post_init__(self):
        if self.channel not in ("luma", "rgb"):
            raise MetricError(f"channel must be 'luma' or 'rgb', got {self.channel!r}")
        if self.shave is not None and self.shave < 0:
            raise MetricError("shave must be non-negative")

    @classmethod
    def named(cls, name: str) -> "EvalProtocol":
        if name == "luma-shave":
            return cls()
        if name == "rgb-full":
            return cls(channel="rgb", shave=0)
        raise MetricError(f"unknown protocol {name!r} (luma-shave, rgb-full)")

    def border(self, scale: float) -> int:
        return math.ceil(round(scale, 9)) if self.shave is None else self.shave


def prepare(img: ImagePlanar, protocol: EvalProtocol, scale: float) -> np.ndarray:
    """Channel-select and shave; returns float64 (C, H, W)."""
    if protocol.quantize:
        img = quantized(img)
    if protocol.channel == "luma":
        img = rgb_to_luma(img) if img.channels == 3 else img
    return shave_border(img, protocol.border(scale)).data.astype(np.float64)


def _pair(a, b, protocol, scale):
    protocol = protocol or EvalProtocol()
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch {a.shape} vs {b.shape}")
    return prepare(a, protocol, scale), prepare(b, protocol, scale), protocol


def psnr(a: ImagePlanar, b: ImagePlanar, protocol: EvalProtocol | None = None, scale: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; :data:`IDENTICAL` when the MSE is zero."""
    x, y, protocol = _pair(a, b, protocol, scale)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return IDENTICAL
    return 10.0 * math.log10(protocol.peak**2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(t**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    half = len(g) // 2
    out = correlate1d(correlate1d(plane, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[half : plane.shape[0] - half, half : plane.shape[1] - half]


def ssim_planes(x: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM over the valid region, averaged over channels."""
    if x.shape[-2] < SSIM_WINDOW or x.shape[-1] < SSIM_WINDOW:
        raise MetricError(f"image {x.shape[-1]}x{x.shape[-2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    scores = []
    for a, b in zip(x, y):
        mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
        var_a = _filter_valid(a * a, g) - mu_a**2
        var_b = _filter_valid(b * b, g) - mu_b**2
        cov = _filter_valid(a * b, g) - mu_a * mu_b
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


def ssim(a: ImagePlanar, b: ImagePlanar, protocol: EvalProtocol | None = None, scale: float = 1.0) -> float:
    x, y, protocol = _pair(a, b, protocol, scale)
    return ssim_planes(x, y, protocol.peak)
