"""Multi-level super-resolution network: a shared feature mapping branch feeding one reconstruction branch per pyramid level.

Feature mapping branch (FMB)
    head 3x3 conv (3 -> C), then ``B`` dense attention blocks wired bi-densely:
    block ``b`` reads a 1x1 fusion of [head, out_1, ..., out_{b-1}] and the
    branch output is a 1x1 fusion of [head, out_1, ..., out_B].
Dense attention block (DAB)
    ``D`` densely concatenated 3x3 conv + ReLU layers of growth ``G``, a 1x1
    compression back to ``C`` and, optionally, channel attention.
Image reconstruction branch (IRB), one per level
    3x3 conv (C -> 3), optional spatial attention, optional skip adding the
    interpolated LR input.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping

import numpy as np

from .imaging import ImagePlanar
from .nn import functional as F
from .nn.core import ChannelAttention, Conv2d, Module, ReLU, SpatialAttention, inference_mode, recording

# restore convs start small so an untrained model is close to its bicubic input
IRB_INIT_GAIN = 0.01


class ConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_blocks: int = 16
    dense_layers: int = 8
    channels: int = 64
    growth: int = 64
    level_count: int = 11
    ca_enabled: bool = True
    sa_enabled: bool = True
    sc_enabled: bool = True
    ca_reduction: int = 16
    sa_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        for name in ("num_blocks", "dense_layers", "channels", "growth", "ca_reduction", "sa_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.level_count < 2:
            raise ConfigError(f"level_count must be >= 2, got {self.level_count}")
        if self.channels % self.ca_reduction:
            raise ConfigError(
                f"ca_reduction {self.ca_reduction} does not divide channels {self.channels}"
            )

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small CPU-trainable configuration."""
        base = dict(num_blocks=2, dense_layers=2, channels=16, growth=16, ca_reduction=4)
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in values:
                continue
            raw = values[f.name]
            if f.type in ("bool", bool):
                kwargs[f.name] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


class DenseAttentionBlock(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c, g = cfg.channels, cfg.growth
        self.dense = [
            self.add_child(f"dense{j}", Conv2d(c + j * g, g, 3, rng)) for j in range(cfg.dense_layers)
        ]
        self.acts = [ReLU() for _ in range(cfg.dense_layers)]
        self.compress = self.add_child("compress", Conv2d(c + cfg.dense_layers * g, c, 1, rng))
        self.ca = (
            self.add_child("ca", ChannelAttention(c, cfg.ca_reduction, rng)) if cfg.ca_enabled else None
        )
        self._sizes = [c] + [g] * cfg.dense_layers

    def forward(self, x):
        feats = [x]
        for conv, act in zip(self.dense, self.acts):
            feats.append(act.forward(conv.forward(F.concat_channels(feats))))
        out = self.compress.forward(F.concat_channels(feats))
        return self.ca.forward(out) if self.ca is not None else out

    def backward(self, grad_out):
        g = self.ca.backward(grad_out) if self.ca is not None else grad_out
        grads = F.split_channels(self.compress.backward(g), self._sizes)
        grads = [gi.copy() for gi in grads]
        for j in reversed(range(len(self.dense))):
            gin = self.dense[j].backward(self.acts[j].backward(grads[j + 1]))
            for k, part in enumerate(F.split_channels(gin, self._sizes[: j + 1])):
                grads[k] += part
        return grads[0]


class FeatureMappingBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c = cfg.channels
        self.head = self.add_child("head", Conv2d(3, c, 3, rng))
        self.fuse = []
        self.blocks = []
        for b in range(cfg.num_blocks):
            self.fuse.append(self.add_child(f"fuse{b}", Conv2d((b + 1) * c, c, 1, rng)))
            self.blocks.append(self.add_child(f"block{b}", DenseAttentionBlock(cfg, rng)))
        self.out_fuse = self.add_child("out_fuse", Conv2d((cfg.num_blocks + 1) * c, c, 1, rng))
        self.channels = c

    def forward(self, x):
        outs = [self.head.forward(x)]
        for fuse, block in zip(self.fuse, self.blocks):
            outs.append(block.forward(fuse.forward(F.concat_channels(outs))))
        return self.out_fuse.forward(F.concat_channels(outs))

    def backward(self, grad_out):
        c = self.channels
        n_blocks = len(self.blocks)
        grads = [g.copy() for g in F.split_channels(self.out_fuse.backward(grad_out), [c] * (n_blocks + 1))]
        for b in reversed(range(n_blocks)):
            gin = self.fuse[b].backward(self.blocks[b].backward(grads[b + 1]))
            for k, part in enumerate(F.split_channels(gin, [c] * (b + 1))):
                grads[k] += part
        return self.head.backward(grads[0])


class ReconstructionBranch(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.restore = self.add_child("restore", Conv2d(cfg.channels, 3, 3, rng, init_gain=IRB_INIT_GAIN))
        self.sa = (
            self.add_child("sa", SpatialAttention(3, cfg.sa_channels, rng)) if cfg.sa_enabled else None
        )
        self.skip = cfg.sc_enabled

    def forward(self, features, x):
        y = self.restore.forward(features)
        if self.sa is not None:
            y = self.sa.forward(y)
        return F.add_forward(y, x) if self.skip else y

    def backward(self, grad_out):
        """Returns ``(grad_features, grad_x)``."""
        g = self.sa.backward(grad_out) if self.sa is not None else grad_out
        grad_x = grad_out if self.skip else np.zeros_like(grad_out)
        return self.restore.backward(g), grad_x


class LevelPyramidNet(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.config = cfg
        self.step = 0
        rng = np.random.default_rng(cfg.seed)
        self.fmb = self.add_child("fmb", FeatureMappingBranch(cfg, rng))
        self.irbs = [self.add_child(f"irb{l}", ReconstructionBranch(cfg, rng)) for l in range(cfg.level_count)]
        self._levels: list[int] = []

    def forward(self, x: np.ndarray, levels: Iterable[int]) -> dict[int, np.ndarray]:
        """Run the shared branch once and the requested level heads on a ``(n, 3, h, w)`` batch."""
        levels = sorted(set(levels))
        if not levels:
            raise ValueError("at least one level must be requested")
        if x.ndim != 4 or x.shape[1] != 3:
            raise F.ShapeError(f"expected (n, 3, h, w) input, got {x.shape}")
        bad = [l for l in levels if not 0 <= l < self.config.level_count]
        if bad:
            raise ValueError(f"levels {bad} outside [0, {self.config.level_count - 1}]")
        features = self.fmb.forward(x)
        self._levels = levels if recording() else []
        return {l: self.irbs[l].forward(features, x) for l in levels}

    def backward(self, grads: Mapping[int, np.ndarray]) -> np.ndarray:
        """Backpropagate per-level output gradients; returns the input gradient."""
        if set(grads) != set(self._levels):
            raise ValueError(f"gradients for {sorted(grads)} but forward ran {self._levels}")
        g_feat = None
        g_x = None
        for l in self._levels:
            gf, gx = self.irbs[l].backward(grads[l])
            g_feat = gf if g_feat is None else g_feat + gf
            g_x = gx if g_x is None else g_x + gx
        self._levels = []
        return g_x + self.fmb.backward(g_feat)

    def predict(self, x: ImagePlanar, levels: set[int]) -> dict[int, ImagePlanar]:
        """Predictor contract used by the LFR renderer."""
        if x.channels != 3:
            raise F.ShapeError(f"model input needs 3 channels, got {x.channels}")
        with inference_mode():
            out = self.forward(x.data[None], levels)
        return {l: ImagePlanar(v[0]) for l, v in out.items()}

    __call__ = predict


def build(config: ModelConfig) -> LevelPyramidNet:
    return LevelPyramidNet(config)


def conv_params(cin: int, cout: int, k: int) -> int:
    return cout * cin * k * k + cout


def ca_params(cfg: ModelConfig) -> int:
    hidden = cfg.channels // cfg.ca_reduction
    return conv_params(cfg.channels, hidden, 1) + conv_params(hidden, cfg.channels, 1)


def sa_params(cfg: ModelConfig) -> int:
    return conv_params(3, cfg.sa_channels, 1) + conv_params(cfg.sa_channels, 1, 1)


def irb_params(cfg: ModelConfig) -> int:
    return conv_params(cfg.channels, 3, 3) + (sa_params(cfg) if cfg.sa_enabled else 0)


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count of :func:`build` for ``cfg``."""
    c, g, d, b = cfg.channels, cfg.growth, cfg.dense_layers, cfg.num_blocks
    dab = sum(conv_params(c + j * g, g, 3) for j in range(d)) + conv_params(c + d * g, c, 1)
    if cfg.ca_enabled:
        dab += ca_params(cfg)
    fmb = conv_params(3, c, 3)
    fmb += sum(conv_params((i + 1) * c, c, 1) for i in range(b)) + b * dab
    fmb += conv_params((b + 1) * c, c, 1)
    return fmb + cfg.level_count * irb_params(cfg)


def channel_attention(features: np.ndarray, unit: ChannelAttention) -> np.ndarray:
    return unit.forward(features)


def spatial_attention(image: np.ndarray, unit: SpatialAttention) -> np.ndarray:
    return unit.forward(image)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"ANYSRCK\x00"
FORMAT_VERSION = 1
_ADAM_PREFIXES = ("adam.m:", "adam.v:")


def _write_record(fh, name: str, array: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def save_checkpoint(model: LevelPyramidNet, path: str | os.PathLike, optimizer_state: bool = True) -> None:
    """Write config, step and parameters (plus Adam moments if requested)."""
    meta = model.config.to_text() + f"step={model.step}\noptimizer={int(optimizer_state)}\n"
    meta_bytes = meta.encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    params = model.parameters()
    for name, p in params.items():
        _write_record(buf, name, p.value)
    if optimizer_state:
        for name, p in params.items():
            _write_record(buf, "adam.m:" + name, p.m)
            _write_record(buf, "adam.v:" + name, p.v)
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u32s(self, count: int) -> tuple[int, ...]:
        return struct.unpack(f"<{count}I", self.take(4 * count))

    @property
    def done(self) -> bool:
        return self.pos >= len(self.data)


def read_checkpoint(path: str | os.PathLike) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Parse a checkpoint into (metadata mapping, named arrays) without building a model."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError("corrupt checkpoint metadata") from exc
    meta = {}
    for line in text.splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    arrays: dict[str, np.ndarray] = {}
    while not r.done:
        try:
            name = r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("corrupt parameter name") from exc
        rank = r.u32()
        if rank > 8:
            raise CheckpointError(f"implausible rank {rank} for {name}")
        dims = r.u32s(rank)
        count = int(np.prod(dims, dtype=np.int64))
        raw = r.take(4 * count)
        if name in arrays:
            raise CheckpointError(f"duplicate record {name}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return meta, arrays


def load_checkpoint(path: str | os.PathLike) -> LevelPyramidNet:
    """Rebuild the model from a checkpoint, restoring parameters, step and Adam state."""
    meta, arrays = read_checkpoint(path)
    try:
        cfg = ModelConfig.from_mapping(meta)
    except (ValueError, ConfigError) as exc:
        raise CheckpointError(f"bad config in checkpoint: {exc}") from exc
    model = LevelPyramidNet(cfg)
    params = model.parameters()
    expected = set(params)
    if meta.get("optimizer", "0") == "1":
        expected |= {prefix + n for prefix in _ADAM_PREFIXES for n in params}
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))[:5]
        extra = sorted(set(arrays) - expected)[:5]
        raise CheckpointError(f"parameter set mismatch (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        for key, attr in ((name, "value"), ("adam.m:" + name, "m"), ("adam.v:" + name, "v")):
            if key not in arrays:
                continue
            if arrays[key].shape != p.shape:
                raise CheckpointError(f"{key} has shape {arrays[key].shape}, config implies {p.shape}")
            setattr(p, attr, arrays[key].copy())
    model.step = int(meta.get("step", 0))
    return model
