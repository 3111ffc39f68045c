"""Training: per-scale LR caches, one-level minibatches, Adam with a step-halved learning rate."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from typing import Mapping

import numpy as np

from .imaging import ImagePlanar, PatchPair, augment, crop, list_images, load_image, save_image
from .lfr import LevelGrid
from .model import LevelPyramidNet, ModelConfig, build, load_checkpoint, save_checkpoint
from .nn.optim import OptimizerConfig, adam_step, l1_loss
from .resample import degrade_pair, resize

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "level", "loss", "lr"]


class DatasetError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    patch_size: int = 48
    initial_lr: float = 1e-4
    lr_half_period: int = 200_000
    total_updates: int = 1_000_000
    seed: int = 0
    checkpoint_every: int = 0
    dataset: str = ""
    cache_dir: str = ""
    out_dir: str = "run"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.patch_size < 8:
            raise ValueError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_half_period < 1:
            raise ValueError(f"lr_half_period must be >= 1, got {self.lr_half_period}")
        if self.total_updates < 0:
            raise ValueError("total_updates must be non-negative")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        model = overrides.pop("model", None) or ModelConfig.desk()
        base = dict(batch_size=8, patch_size=32, total_updates=2000, model=model)
        base.update(overrides)
        return cls(**base)

    def to_mapping(self) -> dict[str, str]:
        flat = {k: str(v) for k, v in asdict(self).items() if k != "model"}
        flat.update({k: str(v) for k, v in asdict(self.model).items()})
        return flat


def parse_key_values(text: str) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are ignored."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def train_config_from_mapping(values: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Overlay string values onto ``base``; model fields share the flat namespace."""
    base = base or TrainConfig.desk()
    model_names = {f.name for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
    unknown = set(values) - model_names - set(train_fields)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for name, raw in values.items():
        if name in train_fields:
            default = getattr(base, name)
            kwargs[name] = type(default)(float(raw)) if isinstance(default, int) else type(default)(raw)
    model_values = {k: v for k, v in values.items() if k in model_names}
    model = base.model
    if model_values:
        merged = {k: str(v) for k, v in asdict(base.model).items()}
        merged.update(model_values)
        model = ModelConfig.from_mapping(merged)
    return replace(base, model=model, **kwargs)


def load_train_config(path: str | os.PathLike, base: TrainConfig | None = None) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return train_config_from_mapping(parse_key_values(fh.read()), base)


def lr_at(step: int, initial_lr: float = 1e-4, half_period: int = 200_000) -> float:
    """``initial_lr * 2 ** -floor(step / half_period)``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    return initial_lr * math.pow(2.0, -(step // half_period))


# ------------------------------------------------------------------- dataset


@dataclass
class ScaleDataset:
    names: list[str]
    hr: list[ImagePlanar]
    lr: dict[int, list[ImagePlanar]]
    grid: LevelGrid
    cache_dir: str


def _scale_tag(scale: float) -> str:
    return f"x{scale:.6f}"


def build_dataset(
    directory: str | os.PathLike,
    grid: LevelGrid,
    patch_size: int = 48,
    cache_dir: str | os.PathLike | None = None,
) -> ScaleDataset:
    """Load HR images and build (or reuse) one 8-bit LR cache per grid scale.

    Grid scale 1.0 gets identity pairs. Images smaller than ``4 * patch_size``
    on either side are skipped with a warning.
    """
    paths = list_images(directory)
    if not paths:
        raise DatasetError(f"no PNG images in {directory}")
    cache_dir = os.fspath(cache_dir or os.path.join(directory, "_lr_cache"))
    names, hrs = [], []
    for path in paths:
        try:
            img = load_image(path)
        except Exception as exc:  # unreadable files are skipped like small ones
            log.warning("skipping %s: %s", path, exc)
            continue
        if min(img.height, img.width) < 4 * patch_size:
            log.warning("skipping %s: %dx%d is smaller than %d", path, img.width, img.height, 4 * patch_size)
            continue
        names.append(os.path.basename(path))
        hrs.append(img)
    if not hrs:
        raise DatasetError(f"no usable training images in {directory}")

    lrs: dict[int, list[ImagePlanar]] = {}
    for level, scale in enumerate(grid.scales):
        level_dir = os.path.join(cache_dir, _scale_tag(scale))
        os.makedirs(level_dir, exist_ok=True)
        lrs[level] = []
        for name, hr in zip(names, hrs):
            cached = os.path.join(level_dir, name)
            if not os.path.exists(cached):
                lr = hr if scale == 1.0 else degrade_pair(hr, scale)[0]
                save_image(lr, cached)
            lrs[level].append(load_image(cached))
    return ScaleDataset(names, hrs, lrs, grid, cache_dir)


@dataclass(frozen=True)
class PatchOrigin:
    image: int
    lr_x: int
    lr_y: int
    margin: int
    window: int


@dataclass
class SampledBatch:
    level: int
    scale: float
    pairs: list[PatchPair]
    origins: list[PatchOrigin]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([p.input.data for p in self.pairs])
        y = np.stack([p.target.data for p in self.pairs])
        return x, y


def lattice_step(scale: float) -> tuple[int, int]:
    """``(q, p)`` with ``scale = p / q``: LR offsets that are multiples of ``q`` land on whole HR pixels."""
    frac = Fraction(scale).limit_denominator(1000)
    return frac.denominator, frac.numerator


def sample_batch(
    ds: ScaleDataset,
    rng: np.random.Generator,
    batch_size: int,
    patch_size: int,
    with_augment: bool = True,
) -> SampledBatch:
    """Draw one level uniformly, then ``batch_size`` aligned patch pairs at that scale.

    The LR window starts on an LR pixel whose HR position ``x * scale`` is an
    integer. The window (plus a margin so border taps see real pixels) is
    bicubic-upscaled and cropped to ``patch_size``; the target is the HR patch
    at the matching position.
    """
    level = int(rng.integers(len(ds.grid)))
    scale = ds.grid.scales[level]
    q, p = lattice_step(scale)
    margin = q * math.ceil(2 / q)
    window = math.ceil(round(patch_size / scale, 9))
    pairs, origins = [], []
    for _ in range(batch_size):
        idx = int(rng.integers(len(ds.hr)))
        hr, lr = ds.hr[idx], ds.lr[level][idx]
        ky = _lattice_range(lr.height, hr.height, window, margin, q, p, patch_size)
        kx = _lattice_range(lr.width, hr.width, window, margin, q, p, patch_size)
        y0 = q * int(rng.integers(ky[0], ky[1] + 1))
        x0 = q * int(rng.integers(kx[0], kx[1] + 1))
        span = window + 2 * margin
        up = resize(crop(lr, x0 - margin, y0 - margin, span, span), scale)
        off = margin * p // q
        inp = crop(up, off, off, patch_size, patch_size)
        target = crop(hr, x0 * p // q, y0 * p // q, patch_size, patch_size)
        pair = PatchPair(inp, target, scale)
        if with_augment:
            pair = augment(pair, rng)
        pairs.append(pair)
        origins.append(PatchOrigin(idx, x0, y0, margin, window))
    return SampledBatch(level, scale, pairs, origins)


def _lattice_range(lr_len, hr_len, window, margin, q, p, patch):
    lo = math.ceil(margin / q)
    hi_lr = (lr_len - window - margin) // q
    hi_hr = (hr_len - patch) * q // (p * q) if p else hi_lr
    hi = min(hi_lr, hi_hr)
    if hi < lo:
        raise DatasetError(f"patch {patch} does not fit a {lr_len}-pixel LR side")
    return lo, hi


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Generator for update ``step``; independent of how many steps ran before."""
    return np.random.default_rng([seed, step])


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: LevelPyramidNet
    rows: list[tuple[int, int, float, float]]
    checkpoint: str
    log_path: str


def _append_rows(path: str, rows, fresh: bool):
    mode = "w" if fresh else "a"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_HEADER)
        for step, level, loss, lr in rows:
            writer.writerow([step, level, repr(loss), repr(lr)])


def train(
    cfg: TrainConfig,
    dataset: ScaleDataset | None = None,
    resume: str | os.PathLike | None = None,
) -> TrainResult:
    """Run ``cfg.total_updates`` updates, each on a single randomly drawn level.

    Writes ``train_log.csv`` (``step,level,loss,lr``), periodic
    ``step_XXXXXXX.ck`` checkpoints and the final ``checkpoint.ck`` into
    ``cfg.out_dir``. A run resumed from a checkpoint of step ``k`` reproduces
    the uninterrupted run from ``k`` on.
    """
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "train_log.csv")
    final_path = os.path.join(cfg.out_dir, "checkpoint.ck")
    if resume is not None:
        model = load_checkpoint(resume)
        if model.config != cfg.model:
            raise ValueError("resume checkpoint was trained with a different model config")
    else:
        model = build(cfg.model)
    grid = LevelGrid(cfg.model.level_count)
    if cfg.total_updates > model.step and dataset is None:
        dataset = build_dataset(cfg.dataset, grid, cfg.patch_size, cfg.cache_dir or None)
    if dataset is not None and len(dataset.grid) != len(grid):
        raise ValueError("dataset grid does not match the model level count")

    params = list(model.parameters().values())
    rows: list[tuple[int, int, float, float]] = []
    pending: list[tuple[int, int, float, float]] = []
    fresh = resume is None or not os.path.exists(log_path)
    if resume is not None and not fresh:
        _truncate_log(log_path, model.step)
    for step in range(model.step, cfg.total_updates):
        batch = sample_batch(dataset, step_rng(cfg.seed, step), cfg.batch_size, cfg.patch_size)
        x, y = batch.arrays()
        out = model.forward(x, {batch.level})
        loss, grad = l1_loss(out[batch.level], y)
        lr = lr_at(step, cfg.initial_lr, cfg.lr_half_period)
        if not math.isfinite(loss):
            pending.append((step, batch.level, loss, lr))
            _append_rows(log_path, pending, fresh)
            raise TrainingDiverged(step, loss)
        model.backward({batch.level: grad})
        adam_step(params, OptimizerConfig(lr=lr), t=step + 1)
        model.step = step + 1
        row = (step, batch.level, loss, lr)
        rows.append(row)
        pending.append(row)
        if cfg.checkpoint_every and model.step % cfg.checkpoint_every == 0:
            _append_rows(log_path, pending, fresh)
            fresh, pending = False, []
            save_checkpoint(model, os.path.join(cfg.out_dir, f"step_{model.step:07d}.ck"))
            log.info("step %d loss %.5f", step, loss)
    _append_rows(log_path, pending, fresh)
    save_checkpoint(model, final_path)
    return TrainResult(model, rows, final_path, log_path)


def _truncate_log(path: str, step: int):
    """Keep the header and rows for steps before ``step`` so a resumed run rewrites the rest."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    kept = [lines[0]] + [ln for ln in lines[1:] if ln and int(ln.split(",", 1)[0]) < step]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("\n".join(kept) + "\n")
