"""Built-in verification: gradient checks on every trainable fragment and a quick self-test."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import ImagePlanar
from .lfr import LevelGrid, identity_predictor, represent
from .model import LevelPyramidNet, DenseAttentionBlock, ModelConfig
from .nn.core import ChannelAttention, Conv2d, SpatialAttention
from .nn.gradcheck import GradCheckResult, finite_diff_check
from .resample import kernel_weight, resize, scaled_size
from .scheduler import plan, plan_equal


class LevelFragment:
    """A full model seen as a single-output fragment for gradient checking."""

    def __init__(self, model: LevelPyramidNet, level: int):
        self.model, self.level = model, level

    def forward(self, x):
        return self.model.forward(x, {self.level})[self.level]

    def backward(self, grad):
        return self.model.backward({self.level: grad})

    def parameters(self):
        return self.model.parameters()


class CorruptedGradient:
    """Wraps a fragment and scales one parameter's gradient after backward."""

    def __init__(self, fragment, factor: float = 1.05):
        self.fragment, self.factor = fragment, factor

    def forward(self, x):
        return self.fragment.forward(x)

    def backward(self, grad):
        out = self.fragment.backward(grad)
        first = next(iter(self.fragment.parameters().values()))
        first.grad *= self.factor
        return out

    def parameters(self):
        return self.fragment.parameters()


def gradient_fragments(seed: int = 0) -> dict[str, tuple[object, np.ndarray]]:
    """Named ``(fragment, input)`` pairs covering every layer type and the desk model."""
    rng = np.random.default_rng(seed)
    desk = ModelConfig.desk(seed=seed)
    x = lambda *shape: rng.uniform(0.0, 1.0, shape)
    return {
        "conv3x3": (Conv2d(4, 5, 3, rng), x(2, 4, 6, 6)),
        "conv1x1": (Conv2d(6, 3, 1, rng), x(2, 6, 5, 5)),
        "channel_attention": (ChannelAttention(8, 4, rng), x(2, 8, 5, 5)),
        "spatial_attention": (SpatialAttention(3, 3, rng), x(2, 3, 6, 6)),
        "dense_attention_block": (DenseAttentionBlock(desk, rng), x(1, desk.channels, 6, 6)),
        "full_model_desk": (LevelFragment(LevelPyramidNet(desk), 3), x(1, 3, 8, 8)),
    }


def run_gradient_checks(seed: int = 0, tolerance: float = 1e-4) -> dict[str, GradCheckResult]:
    return {
        name: finite_diff_check(frag, inp, tolerance, seed=seed)
        for name, (frag, inp) in gradient_fragments(seed).items()
    }


def brute_force_resize(img: np.ndarray, out_h: int, out_w: int, scale: float) -> np.ndarray:
    """Direct 2-D bicubic resampling of ``(C, H, W)`` data, one output pixel at a time.

    Slow reference for the separable implementation: every source pixel inside
    the (possibly stretched) kernel support contributes ``k(dy) * k(dx)``,
    out-of-range pixels are clamped to the edge and the weights are normalized.
    """
    c, h, w = img.shape
    shrink = scale < 1.0
    support = 2.0 / scale if shrink else 2.0

    def k(t):
        return scale * kernel_weight(scale * t) if shrink else kernel_weight(t)

    out = np.zeros((c, out_h, out_w))
    for i in range(out_h):
        v = (i + 0.5) / scale - 0.5
        rows = range(math.floor(v - support) - 1, math.ceil(v + support) + 2)
        for j in range(out_w):
            u = (j + 0.5) / scale - 0.5
            cols = range(math.floor(u - support) - 1, math.ceil(u + support) + 2)
            acc = np.zeros(c)
            total = 0.0
            for p in rows:
                wy = k(v - p)
                if wy == 0.0:
                    continue
                pc = min(max(p, 0), h - 1)
                for q in cols:
                    wgt = wy * k(u - q)
                    if wgt == 0.0:
                        continue
                    acc += wgt * img[:, pc, min(max(q, 0), w - 1)]
                    total += wgt
            out[:, i, j] = acc / total
    return out


@dataclass(frozen=True)
class CheckLine:
    name: str
    passed: bool
    detail: str


def selftest(seed: int = 0) -> list[CheckLine]:
    """Fast end-to-end checks that need no data or checkpoints."""
    rng = np.random.default_rng(seed)
    lines = []

    worst = 0.0
    for scale in (0.6, 1.37, 2.0):
        img = rng.uniform(0, 1, (3, 9, 7))
        fast = resize(ImagePlanar(img), scale).data
        slow = brute_force_resize(img.astype(np.float32).astype(np.float64), *fast.shape[1:], scale)
        worst = max(worst, float(np.abs(fast - slow).max()))
    lines.append(CheckLine("resize matches brute force", worst <= 1e-6, f"max diff {worst:.2e}"))

    ok = plan(3).steps == (2.0, 1.5) and plan(4).steps == (2.0, 2.0)
    ok = ok and abs(plan_equal(3, 2).steps[0] - math.sqrt(3)) < 1e-12
    lines.append(CheckLine("deployment plans", ok, f"plan(3)={plan(3).label()}"))

    grid = LevelGrid(11)
    lr = ImagePlanar(rng.uniform(0, 1, (3, 10, 10)))
    same = all(represent(r, lr, identity_predictor, grid) == resize(lr, r) for r in (1.1, 1.37, 2.0))
    lines.append(CheckLine("identity levels reduce to bicubic", same, "r in {1.1, 1.37, 2.0}"))

    out = represent(1.5, lr, LevelPyramidNet(ModelConfig.desk(seed=seed)), grid)
    size_ok = out.shape == (3, scaled_size(10, 1.5), scaled_size(10, 1.5))
    lines.append(CheckLine("untrained model renders x1.5", size_ok, f"shape {out.shape}"))

    for name, res in run_gradient_checks(seed).items():
        lines.append(CheckLine(f"gradcheck {name}", res.passed, f"max rel err {res.max_relative_error:.2e}"))
    return lines
