"""Recursive deployment: split a large scale into per-pass ratios in (1, 2] and run them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .imaging import ImagePlanar
from .lfr import LevelGrid, Predictor, represent
from .resample import resize

PRODUCT_RTOL = 1e-9


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class DeploymentPlan:
    target: float
    steps: tuple[float, ...]

    def __post_init__(self):
        if not self.steps:
            raise PlanError("a plan needs at least one step")
        for r in self.steps:
            if not (1.0 < r <= 2.0):
                raise PlanError(f"ratio {r} outside (1, 2]")
        product = math.prod(self.steps)
        if abs(product - self.target) > PRODUCT_RTOL * self.target:
            raise PlanError(f"steps multiply to {product}, not {self.target}")

    def __len__(self):
        return len(self.steps)

    def label(self) -> str:
        return ", ".join(f"{r:.3f}" for r in self.steps)


def recursion_count(R: float) -> int:
    """``ceil(log2 R)`` computed exactly: the smallest ``N`` with ``2**N >= R``."""
    n = 0
    while 2.0**n < R:
        n += 1
    return n


def plan(R: float) -> DeploymentPlan:
    """Ratio 2 for the first ``N - 1`` passes, the remainder ``R / 2**(N-1)`` last."""
    if not (math.isfinite(R) and R > 1.0):
        raise PlanError(f"target scale must exceed 1, got {R}")
    n = recursion_count(R)
    last = R / 2.0 ** (n - 1)
    steps = [2.0] * (n - 1) + [last]
    if last <= 1.0 and n > 1:
        # never reached with exact power-of-two division; kept so ratios stay > 1
        steps = [2.0] * (n - 2) + [min(2.0, R / 2.0 ** (n - 2))]
    return DeploymentPlan(R, tuple(steps))


def plan_equal(R: float, n: int) -> DeploymentPlan:
    """``n`` equal ratios ``R ** (1/n)``."""
    if not (math.isfinite(R) and R > 1.0):
        raise PlanError(f"target scale must exceed 1, got {R}")
    if n < 1:
        raise PlanError(f"recursion count must be positive, got {n}")
    r = R ** (1.0 / n)
    if r > 2.0 + 1e-12:
        raise PlanError(f"{n} equal steps need ratio {r:.4f} > 2 for scale {R}")
    return DeploymentPlan(R, tuple([min(r, 2.0)] * n))


def plan_custom(R: float, steps: Sequence[float], rtol: float = 1e-2) -> DeploymentPlan:
    """Plan from user ratios, which are often rounded (e.g. "1.732, 1.732").

    The last ratio is rescaled so the product is exactly ``R`` when the given
    product is within ``rtol``; otherwise the strategy is infeasible.
    """
    steps = [float(s) for s in steps]
    if not steps:
        raise PlanError("empty strategy")
    product = math.prod(steps)
    if abs(product - R) > rtol * R:
        raise PlanError(f"ratios {steps} multiply to {product:.4f}, not {R}")
    steps[-1] = R / math.prod(steps[:-1])
    return DeploymentPlan(R, tuple(steps))


def execute(
    p: DeploymentPlan,
    lr: ImagePlanar,
    predictor: Predictor,
    grid: LevelGrid,
    resampler: Callable[..., ImagePlanar] = resize,
    out_size: tuple[int, int] | None = None,
) -> ImagePlanar:
    """Run the upscale-then-predict cycle once per ratio.

    Intermediates stay in float. ``out_size`` pins only the final pass, so
    plans whose ceil-chains drift can still be compared against one reference.
    """
    current = lr
    last = len(p.steps) - 1
    for n, r in enumerate(p.steps):
        current = represent(
            r, current, predictor, grid, resampler, out_size=out_size if n == last else None
        )
    return current
