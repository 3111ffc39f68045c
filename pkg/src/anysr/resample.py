"""Arbitrary-factor bicubic resizing with antialiased downscaling.

Follows the reference ``imresize`` convention: the destination pixel ``d``
samples source coordinate ``(d + 0.5) / scale - 0.5``, the cubic kernel is
stretched by ``1 / scale`` when shrinking, taps outside the image are clamped
to the edge and every row of tap weights is renormalized to sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import ImagePlanar, crop

CUBIC_A = -0.5
# decimal factors like 1.1 are not exact in binary; sizes are snapped to 9 decimals
_SIZE_DECIMALS = 9


class ResampleError(ValueError):
    pass


@dataclass(frozen=True)
class ResizeSpec:
    scale: float
    antialias: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ResampleError(f"scale must be positive and finite, got {self.scale}")


def kernel_weight(x, a: float = CUBIC_A):
    """Keys cubic convolution kernel; accepts scalars or arrays."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    near = (a + 2.0) * ax3 - (a + 3.0) * ax2 + 1.0
    far = a * ax3 - 5.0 * a * ax2 + 8.0 * a * ax - 4.0 * a
    out = np.where(ax <= 1.0, near, np.where(ax < 2.0, far, 0.0))
    return float(out) if out.ndim == 0 else out


def scaled_size(dim: int, scale: float) -> int:
    """Output length ``ceil(dim * scale)``."""
    return int(math.ceil(round(dim * scale, _SIZE_DECIMALS)))


def shrunk_size(dim: int, scale: float) -> int:
    """LR length ``floor(dim / scale)`` used when degrading an HR image."""
    return int(math.floor(round(dim / scale, _SIZE_DECIMALS)))


def axis_weights(in_len: int, out_len: int, scale: float, antialias: bool = True):
    """Tap indices and normalized weights, each shaped ``(out_len, taps)``."""
    if scale < 1.0 and antialias:
        width = 4.0 / scale

        def kernel(t):
            return scale * kernel_weight(scale * t)

    else:
        width = 4.0
        kernel = kernel_weight
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1).astype(np.intp)
    return idx, weights


def _resize_axis(data: np.ndarray, axis: int, out_len: int, scale: float, antialias: bool):
    idx, weights = axis_weights(data.shape[axis], out_len, scale, antialias)
    moved = np.moveaxis(data, axis, -1)
    out = np.zeros(moved.shape[:-1] + (out_len,), dtype=np.float64)
    # fixed tap order keeps the sum bitwise reproducible
    for k in range(idx.shape[1]):
        out += moved[..., idx[:, k]] * weights[:, k]
    return np.moveaxis(out, -1, axis)


def resize(
    img: ImagePlanar,
    spec: ResizeSpec | float,
    out_size: tuple[int, int] | None = None,
) -> ImagePlanar:
    """Resize ``img`` by ``spec.scale``.

    The output is ``ceil(H * scale) x ceil(W * scale)`` unless ``out_size``
    (height, width) pins it; the coordinate mapping always uses the nominal
    scale.
    """
    if not isinstance(spec, ResizeSpec):
        spec = ResizeSpec(float(spec))
    if out_size is None:
        out_h, out_w = scaled_size(img.height, spec.scale), scaled_size(img.width, spec.scale)
    else:
        out_h, out_w = out_size
    if out_h < 1 or out_w < 1:
        raise ResampleError(f"scale {spec.scale} gives empty output from {img.width}x{img.height}")
    if spec.scale == 1.0 and (out_h, out_w) == (img.height, img.width):
        return img
    data = img.data.astype(np.float64)
    data = _resize_axis(data, 2, out_w, spec.scale, spec.antialias)
    data = _resize_axis(data, 1, out_h, spec.scale, spec.antialias)
    return ImagePlanar(data.astype(np.float32))


def degrade_pair(hr: ImagePlanar, scale: float) -> tuple[ImagePlanar, ImagePlanar]:
    """Build an (LR, HR reference) pair for factor ``scale > 1``.

    The LR is ``floor(dim / scale)`` per axis; the reference is the top-left
    crop of ``hr`` to ``ceil(lr_dim * scale)`` so an upscaled LR lines up with
    it exactly. The LR is an antialiased downscale of that crop.
    """
    if not scale > 1.0:
        raise ResampleError(f"degradation scale must exceed 1, got {scale}")
    lr_h, lr_w = shrunk_size(hr.height, scale), shrunk_size(hr.width, scale)
    if lr_h < 1 or lr_w < 1:
        raise ResampleError(f"{hr.width}x{hr.height} image too small for scale {scale}")
    ref = crop(hr, 0, 0, scaled_size(lr_w, scale), scaled_size(lr_h, scale))
    lr = resize(ref, ResizeSpec(1.0 / scale, antialias=True), out_size=(lr_h, lr_w))
    return lr, ref
