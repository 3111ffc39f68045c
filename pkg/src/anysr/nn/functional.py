"""Forward and backward kernels on ``(n, c, h, w)`` arrays.

Every op works in the dtype of its inputs, so gradient checks can run the
same code in float64. Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    pass


def _pad_amount(k: int, pad: str) -> int:
    if pad == "same":
        if k % 2 != 1:
            raise ShapeError(f"same padding needs an odd kernel, got {k}")
        return k // 2
    if pad == "none":
        return 0
    raise ValueError(f"unknown padding {pad!r}")


def im2col(x: np.ndarray, k: int, pad: str = "same") -> np.ndarray:
    """Unfold ``x`` into ``(n, c*k*k, oh*ow)`` columns ordered (c, ky, kx)."""
    n, c, h, w = x.shape
    if k == 1:
        return x.reshape(n, c, h * w)
    p = _pad_amount(k, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    oh, ow = xp.shape[2] - k + 1, xp.shape[3] - k + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"{h}x{w} input smaller than {k}x{k} kernel")
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky : ky + oh, kx : kx + ow]
    return cols.reshape(n, c * k * k, oh * ow)


def col2im(cols: np.ndarray, x_shape, k: int, pad: str = "same") -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    if k == 1:
        return cols.reshape(n, c, h, w)
    p = _pad_amount(k, pad)
    hp, wp = h + 2 * p, w + 2 * p
    oh, ow = hp - k + 1, wp - k + 1
    cols = cols.reshape(n, c, k, k, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for ky in range(k):
        for kx in range(k):
            out[:, :, ky : ky + oh, kx : kx + ow] += cols[:, :, ky, kx]
    return out[:, :, p : p + h, p : p + w] if p else out


def _check_conv(x, weight):
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv expects 4-d input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"square kernels only, got {weight.shape[2:]}")


def conv2d_from_cols(cols, weight, bias, out_hw):
    n = cols.shape[0]
    cout = weight.shape[0]
    y = np.matmul(weight.reshape(cout, -1), cols)
    if bias is not None:
        y += bias[:, None]
    return y.reshape(n, cout, *out_hw)


def conv2d_shifted(x, weight, bias=None):
    """Same-padded convolution as a sum of per-tap matmuls; low memory, forward only."""
    n, c, h, w = x.shape
    cout, _, k, _ = weight.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    y = np.zeros((n, cout, h * w), dtype=np.result_type(x, weight))
    for ky in range(k):
        for kx in range(k):
            window = np.ascontiguousarray(xp[:, :, ky : ky + h, kx : kx + w]).reshape(n, c, h * w)
            y += np.matmul(weight[:, :, ky, kx], window)
    if bias is not None:
        y += bias[:, None]
    return y.reshape(n, cout, h, w)


def conv_out_hw(x_shape, k: int, pad: str = "same") -> tuple[int, int]:
    p = _pad_amount(k, pad) if k > 1 else 0
    return x_shape[2] + 2 * p - k + 1, x_shape[3] + 2 * p - k + 1


def conv2d_forward(x, weight, bias=None, pad: str = "same"):
    _check_conv(x, weight)
    k = weight.shape[2]
    return conv2d_from_cols(im2col(x, k, pad), weight, bias, conv_out_hw(x.shape, k, pad))


def conv2d_backward_from_cols(cols, x_shape, weight, grad_out, pad: str = "same"):
    n, cout = grad_out.shape[:2]
    k = weight.shape[2]
    gy = grad_out.reshape(n, cout, -1)
    grad_w = np.tensordot(gy, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
    grad_b = gy.sum(axis=(0, 2))
    gcols = np.matmul(weight.reshape(cout, -1).T, gy)
    grad_x = col2im(gcols, x_shape, k, pad)
    return grad_x, grad_w, grad_b


def conv2d_backward(x, weight, grad_out, pad: str = "same"):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d_forward`."""
    _check_conv(x, weight)
    k = weight.shape[2]
    expected = (x.shape[0], weight.shape[0]) + conv_out_hw(x.shape, k, pad)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out {grad_out.shape} does not match forward output")
    return conv2d_backward_from_cols(im2col(x, k, pad), x.shape, weight, grad_out, pad)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return grad_out * (x > 0)


def sigmoid_forward(x):
    return expit(x)


def sigmoid_backward(y, grad_out):
    """Gradient given the forward *output* ``y``."""
    return grad_out * y * (1 - y)


def add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def _check_mul(a, b):
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"mul shapes incompatible: {a.shape} vs {b.shape}")
    n, c, h, w = a.shape
    if b.shape not in ((n, c, h, w), (n, c, 1, 1), (n, 1, h, w)):
        raise ShapeError(f"mul shapes incompatible: {a.shape} vs {b.shape}")


def mul_forward(a, b):
    """Elementwise product; ``b`` may be a per-channel ``(n,c,1,1)`` or a single-channel ``(n,1,h,w)`` map."""
    _check_mul(a, b)
    return a * b


def mul_backward(a, b, grad_out):
    grad_a = grad_out * b
    grad_b = grad_out * a
    axes = tuple(i for i in range(4) if b.shape[i] == 1 and a.shape[i] != 1)
    if axes:
        grad_b = grad_b.sum(axis=axes, keepdims=True)
    return grad_a, grad_b


def concat_channels(xs):
    shapes = {(x.shape[0],) + x.shape[2:] for x in xs}
    if len(shapes) != 1:
        raise ShapeError(f"concat needs matching n/h/w, got {[x.shape for x in xs]}")
    return np.concatenate(xs, axis=1)


def split_channels(x, sizes):
    """Inverse of :func:`concat_channels` (also its backward)."""
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split sizes {sizes} do not sum to {x.shape[1]}")
    return np.split(x, np.cumsum(sizes)[:-1], axis=1)


def global_avg_pool_forward(x):
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(x_shape, grad_out):
    h, w = x_shape[2], x_shape[3]
    return np.broadcast_to(grad_out / (h * w), x_shape).copy()
