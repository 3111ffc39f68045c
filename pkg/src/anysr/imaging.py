"""Planar float images, PNG I/O, luma conversion, cropping and patch augmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageError(Exception):
    """Base class for image I/O and geometry errors."""


class MissingImageError(ImageError, FileNotFoundError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptImageError(ImageError):
    pass


@dataclass(frozen=True)
class ImagePlanar:
    """Float32 image stored channel-major as a ``(channels, height, width)`` array.

    Values are nominally in [0, 1] but are not clamped until saving or metric
    evaluation.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or data.shape[0] not in (1, 3):
            raise ImageError(f"expected (1|3, H, W) planar data, got shape {data.shape}")
        if data.shape[1] < 1 or data.shape[2] < 1:
            raise ImageError(f"empty image {data.shape}")
        data = np.array(data, dtype=np.float32, order="C", copy=True)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def from_hwc(cls, array: np.ndarray) -> "ImagePlanar":
        array = np.asarray(array)
        if array.ndim == 2:
            return cls(array[None])
        return cls(np.transpose(array, (2, 0, 1)))

    def to_hwc(self) -> np.ndarray:
        return np.transpose(self.data, (1, 2, 0))

    def __eq__(self, other):
        if not isinstance(other, ImagePlanar):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class PatchPair:
    input: ImagePlanar
    target: ImagePlanar
    scale: float

    def __post_init__(self):
        if self.input.shape != self.target.shape:
            raise ImageError(
                f"patch input {self.input.shape} and target {self.target.shape} differ"
            )


def load_image(path: str | os.PathLike) -> ImagePlanar:
    """Read an 8- or 16-bit PNG as a 3-channel image in [0, 1].

    Gray images are replicated to three channels; alpha is dropped.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingImageError(f"no such image: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(PNG_SIGNATURE):
        raise UnsupportedFormatError(f"not a PNG file: {path}")
    decoded = cv2.imdecode(np.frombuffer(raw, np.uint8), cv2.IMREAD_UNCHANGED)
    if decoded is None:
        raise CorruptImageError(f"failed to decode PNG: {path}")
    if decoded.dtype == np.uint8:
        peak = 255.0
    elif decoded.dtype == np.uint16:
        peak = 65535.0
    else:
        raise UnsupportedFormatError(f"unsupported sample type {decoded.dtype}: {path}")

    if decoded.ndim == 2:
        rgb = np.repeat(decoded[None], 3, axis=0)
    else:
        if decoded.shape[2] == 4:
            decoded = decoded[:, :, :3]
        if decoded.shape[2] == 2:  # gray + alpha
            rgb = np.repeat(decoded[None, :, :, 0], 3, axis=0)
        else:
            rgb = np.transpose(decoded[:, :, ::-1], (2, 0, 1))
    return ImagePlanar((rgb.astype(np.float64) / peak).astype(np.float32))


def quantize(img: ImagePlanar) -> np.ndarray:
    """Clamp to [0, 1] and round half up to 8-bit, returned planar."""
    clipped = np.clip(img.data.astype(np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


def quantized(img: ImagePlanar) -> ImagePlanar:
    """The image as it would read back after an 8-bit save."""
    return ImagePlanar(quantize(img).astype(np.float32) / np.float32(255.0))


def save_image(img: ImagePlanar, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    planes = quantize(img)
    if img.channels == 1:
        hwc = planes[0]
    else:
        hwc = np.ascontiguousarray(np.transpose(planes[::-1], (1, 2, 0)))
    ok, buf = cv2.imencode(".png", hwc)
    if not ok:
        raise ImageError(f"PNG encoding failed for {path}")
    try:
        with open(path, "wb") as fh:
            fh.write(buf.tobytes())
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def rgb_to_luma(img: ImagePlanar) -> ImagePlanar:
    """BT.601 studio-swing luma of an RGB image in [0, 1]."""
    if img.channels != 3:
        raise ImageError(f"luma needs 3 channels, got {img.channels}")
    r, g, b = img.data.astype(np.float64)
    y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return ImagePlanar(y[None])


def crop(img: ImagePlanar, x0: int, y0: int, w: int, h: int) -> ImagePlanar:
    if x0 < 0 or y0 < 0 or w < 1 or h < 1 or x0 + w > img.width or y0 + h > img.height:
        raise ImageError(
            f"crop ({x0}, {y0}, {w}x{h}) outside {img.width}x{img.height} image"
        )
    return ImagePlanar(img.data[:, y0 : y0 + h, x0 : x0 + w])


def shave_border(img: ImagePlanar, n: int) -> ImagePlanar:
    if n < 0 or 2 * n >= min(img.height, img.width):
        raise ImageError(f"border {n} too large for {img.width}x{img.height} image")
    if n == 0:
        return img
    return crop(img, n, n, img.width - 2 * n, img.height - 2 * n)


# (hflip, quarter turns): 8 dihedral transforms
TRANSFORMS = [(flip, rot) for flip in (False, True) for rot in range(4)]


def apply_transform(data: np.ndarray, flip: bool, quarter_turns: int) -> np.ndarray:
    """Apply an optional horizontal flip then counter-clockwise quarter turns to (C, H, W) data."""
    if flip:
        data = data[:, :, ::-1]
    if quarter_turns % 4:
        if data.shape[1] != data.shape[2]:
            raise ImageError("rotation needs a square patch")
        data = np.rot90(data, quarter_turns, axes=(1, 2))
    return data


def augment(pair: PatchPair, rng: np.random.Generator, transform: int | None = None) -> PatchPair:
    """Apply one random flip/rotation, identically to input and target.

    ``transform`` forces an index into :data:`TRANSFORMS` (0 is the identity).
    """
    if transform is None:
        transform = int(rng.integers(len(TRANSFORMS)))
    flip, rot = TRANSFORMS[transform]
    return PatchPair(
        ImagePlanar(apply_transform(pair.input.data, flip, rot)),
        ImagePlanar(apply_transform(pair.target.data, flip, rot)),
        pair.scale,
    )


def list_images(directory: str | os.PathLike) -> list[str]:
    """Sorted PNG paths directly inside ``directory``."""
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise MissingImageError(f"no such directory: {directory}")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    return [os.path.join(directory, n) for n in names]
