"""Deployment-strategy comparison and level-density sweeps."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..lfr import LevelGrid, Predictor
from ..model import LevelPyramidNet
from ..scheduler import DeploymentPlan, PlanError, execute, plan, plan_custom, plan_equal
from .evaluate import EvalRow, as_model, eval_model, evaluate
from .metrics import EvalProtocol
from .plotting import line_plot


def default_strategies(R: float) -> list[DeploymentPlan]:
    """Largest-first plan, its reverse, and equal-ratio plans with one or two extra passes."""
    base = plan(R)
    plans = [base]
    if len(base) > 1:
        plans.append(plan_custom(R, list(reversed(base.steps))))
    for n in (len(base), len(base) + 1):
        try:
            equal = plan_equal(R, n)
        except PlanError:
            continue
        if equal.steps != base.steps:
            plans.append(equal)
    unique, seen = [], set()
    for p in plans:
        if p.steps not in seen:
            seen.add(p.steps)
            unique.append(p)
    return unique


def bench_strategies(
    directory,
    R: float,
    model: LevelPyramidNet | str | os.PathLike | Predictor,
    strategies: Sequence[DeploymentPlan] | None = None,
    protocol: EvalProtocol | None = None,
    level_count: int | None = None,
) -> list[EvalRow]:
    """One row per strategy, sorted by mean PSNR (best first).

    Every strategy's final pass is pinned to the reference size so all rows
    score the same pixels. ``model`` may be any predictor when
    ``level_count`` is given.
    """
    strategies = list(strategies or default_strategies(R))
    for s in strategies:
        if abs(s.target - R) > 1e-9 * R:
            raise PlanError(f"strategy {s.label()} targets {s.target}, not {R}")
    if level_count is None:
        model = as_model(model)
        level_count = model.config.level_count
    grid = LevelGrid(level_count)
    rows = []
    for s in strategies:
        rows.append(
            evaluate(
                directory,
                R,
                lambda lr, size, s=s: execute(s, lr, model, grid, out_size=size),
                "recursive-model" if len(s) > 1 else "model",
                protocol,
                s.label(),
            )
        )
    return sorted(rows, key=lambda r: -r.psnr)


@dataclass(frozen=True)
class DensityPoint:
    level_count: int
    scale: float
    psnr: float


def density_study(
    directory,
    checkpoints: Mapping[int, LevelPyramidNet | str | os.PathLike],
    scales: Sequence[float],
    protocol: EvalProtocol | None = None,
    out_csv: str | os.PathLike | None = None,
    out_svg: str | os.PathLike | None = None,
) -> list[DensityPoint]:
    """PSNR against scale for models trained with different level counts.

    ``checkpoints`` maps the nominal level count (the curve label) to a model.
    """
    if not checkpoints:
        raise ValueError("no checkpoints given")
    points = []
    for label in sorted(checkpoints):
        model = as_model(checkpoints[label])
        for s in scales:
            points.append(DensityPoint(label, float(s), eval_model(directory, s, model, protocol).psnr))
    if out_csv:
        with open(out_csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["L", "scale", "psnr"])
            for p in points:
                writer.writerow([p.level_count, f"{p.scale:g}", f"{p.psnr:.4f}"])
    if out_svg:
        series = {}
        for label in sorted(checkpoints):
            pts = [p for p in points if p.level_count == label]
            series[f"L={label}"] = ([p.scale for p in pts], [p.psnr for p in pts])
        line_plot(series, out_svg, "scale", "PSNR (dB)", "PSNR across scales by level count")
    return points


def strategy_plot(rows: Sequence[EvalRow], path: str | os.PathLike) -> None:
    """Per-image PSNR lines, one per strategy."""
    series = {}
    for row in rows:
        series[row.strategy] = (list(range(len(row.per_image))), [s.psnr for s in row.per_image])
    line_plot(series, path, "image index", "PSNR (dB)", f"Deployment strategies at x{rows[0].scale:g}")
