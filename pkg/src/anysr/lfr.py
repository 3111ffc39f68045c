"""Laplacian frequency representation over scales in (1, 2].

A predictor produces one reconstructed HR image per pyramid level ``l`` at
grid scale ``1 + l / (L - 1)``. Any scale in (1, 2] is rendered by blending
the two levels that bracket it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

import numpy as np

from .imaging import ImagePlanar
from .resample import resize

# (L - 1)(r - 1) within this distance of an integer is treated as on-grid
_GRID_SNAP = 1e-10


class LFRError(ValueError):
    pass


@dataclass(frozen=True)
class LevelGrid:
    level_count: int

    def __post_init__(self):
        if self.level_count < 2:
            raise LFRError(f"need at least 2 levels, got {self.level_count}")

    @property
    def scales(self) -> list[float]:
        return [l / (self.level_count - 1) + 1.0 for l in range(self.level_count)]

    def __len__(self):
        return self.level_count


@dataclass(frozen=True)
class PhaseWeight:
    phase: int
    weight: float

    @property
    def on_grid(self) -> bool:
        return self.weight == 0.0


class Predictor(Protocol):
    def __call__(self, x: ImagePlanar, levels: set[int]) -> Mapping[int, ImagePlanar]: ...


def level_scales(level_count: int) -> LevelGrid:
    return LevelGrid(level_count)


def phase_and_weight(r: float, grid: LevelGrid) -> PhaseWeight:
    """Phase ``i = ceil((L-1)(r-1))`` (at least 1) and weight ``w = (L-1)(r_i - r)``."""
    if not (1.0 < r <= 2.0):
        raise LFRError(f"scale {r} outside (1, 2]")
    t = (grid.level_count - 1) * (r - 1.0)
    nearest = round(t)
    if abs(t - nearest) <= _GRID_SNAP * max(1.0, t):
        t = float(nearest)
    phase = max(1, math.ceil(t))
    weight = min(1.0, max(0.0, phase - t))
    return PhaseWeight(phase, weight)


def interpolate_levels(outputs: Mapping[int, ImagePlanar], pw: PhaseWeight) -> ImagePlanar:
    """``(1 - w) * O[i] + w * O[i-1]``, which equals ``O[i] + w * (O[i-1] - O[i])``."""
    missing = levels_needed(pw) - set(outputs)
    if missing:
        raise LFRError(f"levels {sorted(levels_needed(pw))} required, have {sorted(outputs)}")
    if len({img.shape for img in outputs.values()}) > 1:
        raise LFRError(f"level shapes differ: {sorted({img.shape for img in outputs.values()})}")
    if pw.weight == 0.0:
        return outputs[pw.phase]
    if pw.weight == 1.0:
        return outputs[pw.phase - 1]
    upper, lower = outputs[pw.phase], outputs[pw.phase - 1]
    w = pw.weight
    blended = (1.0 - w) * upper.data.astype(np.float64) + w * lower.data.astype(np.float64)
    return ImagePlanar(blended.astype(np.float32))


def levels_needed(pw: PhaseWeight) -> set[int]:
    if pw.weight == 0.0:
        return {pw.phase}
    if pw.weight == 1.0:
        return {pw.phase - 1}
    return {pw.phase - 1, pw.phase}


def represent(
    r: float,
    lr: ImagePlanar,
    predictor: Predictor,
    grid: LevelGrid,
    resampler: Callable[..., ImagePlanar] = resize,
    out_size: tuple[int, int] | None = None,
) -> ImagePlanar:
    """Upscale ``lr`` by ``r`` and render it through the two bracketing levels.

    Only the needed levels are requested from ``predictor``; an on-grid scale
    asks for exactly one.
    """
    pw = phase_and_weight(r, grid)
    upscaled = resampler(lr, r, out_size) if out_size is not None else resampler(lr, r)
    outputs = predictor(upscaled, levels_needed(pw))
    return interpolate_levels(outputs, pw)


def identity_predictor(x: ImagePlanar, levels: set[int]) -> dict[int, ImagePlanar]:
    """Every level returns its input unchanged: rendering reduces to plain bicubic."""
    return {l: x for l in levels}
