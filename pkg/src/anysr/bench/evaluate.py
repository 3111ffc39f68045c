"""Dataset evaluation of the bicubic and model paths."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..imaging import ImagePlanar, list_images, load_image, quantized
from ..lfr import LevelGrid, Predictor, represent
from ..model import LevelPyramidNet, load_checkpoint
from ..resample import degrade_pair, resize
from ..scheduler import DeploymentPlan, execute, plan
from .metrics import EvalProtocol, psnr, ssim

CSV_HEADER = ["dataset", "scale", "method", "strategy", "images", "psnr", "ssim"]


@dataclass(frozen=True)
class ImageScore:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalRow:
    dataset: str
    scale: float
    method: str
    per_image: list[ImageScore] = field(default_factory=list)
    strategy: str = ""

    @property
    def psnr(self) -> float:
        return float(np.mean([s.psnr for s in self.per_image]))

    @property
    def ssim(self) -> float:
        return float(np.mean([s.ssim for s in self.per_image]))

    def csv_fields(self) -> list[str]:
        return [
            self.dataset,
            f"{self.scale:g}",
            self.method,
            self.strategy,
            str(len(self.per_image)),
            f"{self.psnr:.4f}",
            f"{self.ssim:.5f}",
        ]


def write_rows(rows: Sequence[EvalRow], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.csv_fields())


def render(
    lr: ImagePlanar,
    scale: float,
    predictor: Predictor,
    grid: LevelGrid,
    out_size: tuple[int, int] | None = None,
    strategy: DeploymentPlan | None = None,
) -> ImagePlanar:
    """Upscale by ``scale``: one blended pass up to 2, recursive passes above."""
    if scale <= 2.0 and strategy is None:
        return represent(scale, lr, predictor, grid, out_size=out_size)
    return execute(strategy or plan(scale), lr, predictor, grid, out_size=out_size)


def degraded_set(directory: str | os.PathLike, scale: float, protocol: EvalProtocol):
    """Yield ``(name, lr, hr_ref)`` in sorted file order."""
    for path in list_images(directory):
        lr, ref = degrade_pair(load_image(path), scale)
        if protocol.quantize:
            lr = quantized(lr)
        yield os.path.basename(path), lr, ref


def evaluate(
    directory: str | os.PathLike,
    scale: float,
    upscaler: Callable[[ImagePlanar, tuple[int, int]], ImagePlanar],
    method: str,
    protocol: EvalProtocol | None = None,
    strategy: str = "",
) -> EvalRow:
    """Score ``upscaler(lr, (h, w))`` against the HR reference of every image."""
    protocol = protocol or EvalProtocol()
    name = os.path.basename(os.path.normpath(directory))
    row = EvalRow(name, scale, method, strategy=strategy)
    for image, lr, ref in degraded_set(directory, scale, protocol):
        out = upscaler(lr, (ref.height, ref.width))
        row.per_image.append(ImageScore(image, psnr(out, ref, protocol, scale), ssim(out, ref, protocol, scale)))
    if not row.per_image:
        raise FileNotFoundError(f"no PNG images in {directory}")
    return row


def eval_bicubic(directory, scale: float, protocol: EvalProtocol | None = None) -> EvalRow:
    return evaluate(directory, scale, lambda lr, size: resize(lr, scale, size), "bicubic", protocol)


def as_model(model: LevelPyramidNet | str | os.PathLike) -> LevelPyramidNet:
    return model if isinstance(model, LevelPyramidNet) else load_checkpoint(model)


def eval_model(
    directory,
    scale: float,
    model: LevelPyramidNet | str | os.PathLike,
    protocol: EvalProtocol | None = None,
    strategy: DeploymentPlan | None = None,
) -> EvalRow:
    """Blended single pass for ``scale <= 2``; recursive passes otherwise."""
    if not scale > 1.0:
        raise ValueError(f"scale must exceed 1, got {scale}")
    model = as_model(model)
    grid = LevelGrid(model.config.level_count)
    recursive = strategy is not None or scale > 2.0
    method = "recursive-model" if recursive else "model"
    label = (strategy or plan(scale)).label() if recursive else ""
    return evaluate(
        directory,
        scale,
        lambda lr, size: render(lr, scale, model, grid, size, strategy),
        method,
        protocol,
        label,
    )

