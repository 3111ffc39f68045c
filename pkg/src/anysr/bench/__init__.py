"""Metrics, dataset evaluation and result studies."""

from .evaluate import EvalRow, eval_bicubic, eval_model, render, write_rows
from .metrics import IDENTICAL, EvalProtocol, psnr, ssim
from .studies import bench_strategies, default_strategies, density_study

__all__ = [
    "IDENTICAL",
    "EvalProtocol",
    "EvalRow",
    "bench_strategies",
    "default_strategies",
    "density_study",
    "eval_bicubic",
    "eval_model",
    "psnr",
    "render",
    "ssim",
    "write_rows",
]
