"""Central-difference verification of hand-written backward passes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import kink_log
from .optim import l1_loss


class GradientCheckError(RuntimeError):
    pass


@dataclass(frozen=True)
class GradCheckResult:
    max_relative_error: float
    tolerance: float
    checked: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_relative_error <= self.tolerance

    def __float__(self):
        return float(self.max_relative_error)


def default_loss(out0: np.ndarray, rng: np.random.Generator) -> Callable:
    """L1 loss against a target kept at least 0.5 away from the initial output.

    The margin keeps every ``|pred - target|`` term off its kink while parameters
    are nudged by the finite-difference step.
    """
    offset = rng.choice([-1.0, 1.0], size=out0.shape) * rng.uniform(0.5, 1.0, size=out0.shape)
    target = out0 + offset
    return lambda out: l1_loss(out, target)


def finite_diff_check(
    fragment,
    x: np.ndarray,
    tolerance: float = 1e-4,
    *,
    step: float = 1e-3,
    loss_fn: Callable | None = None,
    samples_per_param: int = 12,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckResult:
    """Compare analytic parameter gradients with central differences.

    ``fragment`` needs ``forward(x)``, ``backward(grad)`` and ``parameters()``.
    Parameters are promoted to float64 for the check and restored afterwards.
    The relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    Probes whose +/- step flips the sign of any ReLU input straddle a kink,
    where central differences are meaningless; those are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    params = fragment.parameters()
    dtypes = {name: p.value.dtype for name, p in params.items()}
    for p in params.values():
        p.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def probe():
        with kink_log() as log:
            out = fragment.forward(x)
        loss, _ = loss_fn(out)
        return loss, log

    try:
        with kink_log() as base_pattern:
            out0 = fragment.forward(x)
        if loss_fn is None:
            loss_fn = default_loss(out0, rng)
        for p in params.values():
            p.zero_grad()
        loss, grad = loss_fn(out0)
        if not math.isfinite(loss):
            raise GradientCheckError(f"non-finite loss {loss}")
        fragment.backward(grad)
        analytic = {name: p.grad.copy() for name, p in params.items()}

        worst, checked, skipped = 0.0, 0, 0
        for name, p in params.items():
            flat = p.value.reshape(-1)
            want = min(samples_per_param, flat.size)
            done = 0
            for i in rng.permutation(flat.size):
                if done == want:
                    break
                orig = flat[i]
                flat[i] = orig + step
                plus, plus_pattern = probe()
                flat[i] = orig - step
                minus, minus_pattern = probe()
                flat[i] = orig
                if not (math.isfinite(plus) and math.isfinite(minus)):
                    raise GradientCheckError(f"non-finite loss while probing {name}[{i}]")
                if plus_pattern != base_pattern or minus_pattern != base_pattern:
                    skipped += 1
                    continue
                numeric = (plus - minus) / (2 * step)
                a = analytic[name].reshape(-1)[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
                checked += 1
                done += 1
        # leave no probe activations cached
        fragment.forward(x)
    finally:
        for name, p in params.items():
            p.astype(dtypes[name])
            p.zero_grad()
    return GradCheckResult(float(worst), tolerance, checked, skipped)
