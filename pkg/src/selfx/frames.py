"""Frames, bicubic resampling, frequency-band matching and patch tiling.

Images are numpy float arrays shaped ``(H, W)`` or ``(H, W, C)`` with samples
in [0, 1].  Pixel ``i`` has its centre at coordinate ``i``; resampling maps
output index ``u`` to input coordinate ``(u + 0.5) * n_in / n_out - 0.5``.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
CUBIC_A = -0.5
FRAME_PATTERN = "frame_{:06d}.png"


@dataclass(frozen=True)
class Frame:
    """One video frame. ``data`` is ``(H, W, C)`` with C in {1, 3}."""

    data: np.ndarray
    index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"frame data must be (H, W, 1|3), got {data.shape}")
        if data.size == 0:
            raise ValueError("empty frame")
        if not np.all(np.isfinite(data)):
            raise ValueError("frame contains non-finite samples")
        data = np.clip(data, 0.0, 1.0)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def luma(self) -> np.ndarray:
        return to_luma(self.data)


@dataclass(frozen=True)
class ScaleSequence:
    scales: tuple[float, ...] = (1.2, 1.4, 1.7, 2.1, 2.5, 2.9, 3.5)

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        if not scales:
            raise ValueError("scale sequence is empty")
        if any(s <= 1.0 for s in scales):
            raise ValueError("every scale must be > 1")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly increasing")
        object.__setattr__(self, "scales", scales)

    def __iter__(self):
        return iter(self.scales)

    def __len__(self):
        return len(self.scales)


@dataclass(frozen=True)
class PatchGrid:
    width: int
    height: int
    patch_size: int
    stride: int
    origins: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.origins)


def to_luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an ``(H, W)``, ``(H, W, 1)`` or ``(H, W, 3)`` image."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.shape[2] == 1:
        return image[:, :, 0]
    return image @ LUMA_WEIGHTS


def scaled_size(n: int, factor: float) -> int:
    """``round(n * factor)`` with half-up rounding, at least 1."""
    return max(1, int(math.floor(n * factor + 0.5)))


def cubic_kernel(x: np.ndarray, a: float = CUBIC_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _resample_taps(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray]:
    # Antialiased on downscale: the kernel is stretched by n_in / n_out.
    ratio = n_in / n_out
    support_scale = max(ratio, 1.0)
    centers = (np.arange(n_out) + 0.5) * ratio - 0.5
    ntaps = int(math.ceil(4.0 * support_scale)) + 2
    first = np.floor(centers - 2.0 * support_scale).astype(np.int64) + (1 if support_scale == 1.0 else 0)
    idx = first[:, None] + np.arange(ntaps)[None, :]
    w = cubic_kernel((idx - centers[:, None]) / support_scale)
    w /= w.sum(axis=1, keepdims=True)
    return np.clip(idx, 0, n_in - 1), w


def _apply_taps(image: np.ndarray, idx: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    # fixed tap order so results do not depend on BLAS threading
    shape = [1] * image.ndim
    shape[axis] = idx.shape[0]
    out = None
    for k in range(idx.shape[1]):
        term = np.take(image, idx[:, k], axis=axis) * w[:, k].reshape(shape)
        out = term if out is None else out + term
    return out


def resize(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bicubic (a = -0.5) resize of an array to ``(height, width)``, clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    oh, ow = int(size[0]), int(size[1])
    if oh < 1 or ow < 1:
        raise ValueError(f"invalid output size {size}")
    out = image
    if oh != h:
        out = _apply_taps(out, *_resample_taps(h, oh), axis=0)
    if ow != w:
        out = _apply_taps(out, *_resample_taps(w, ow), axis=1)
    if out is image:
        out = image.copy()
    return np.clip(out, 0.0, 1.0)


def resample_bicubic(frame, factor: float, size: tuple[int, int] | None = None):
    """Scale ``frame`` (Frame or array) by ``factor``; output dims are rounded.

    ``size`` overrides the rounded output size, which lets callers restore an
    exact original shape after a round trip.
    """
    if not factor > 0:
        raise ValueError(f"resample factor must be positive, got {factor}")
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    if data.size == 0:
        raise ValueError("cannot resample an empty image")
    if size is None:
        size = (scaled_size(data.shape[0], factor), scaled_size(data.shape[1], factor))
    out = resize(data, size)
    if isinstance(frame, Frame):
        return Frame(out, frame.index)
    return out


def band_limit(frame, factor: float):
    """Down- then up-sample by ``factor`` so the result has the input's shape."""
    if not factor > 1:
        raise ValueError(f"band_limit factor must be > 1, got {factor}")
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    h, w = data.shape[:2]
    small = resample_bicubic(data, 1.0 / factor)
    out = resample_bicubic(small, factor, size=(h, w))
    if isinstance(frame, Frame):
        return Frame(out, frame.index)
    return out


def _axis_origins(length: int, patch: int, stride: int) -> list[int]:
    origins = list(range(0, length - patch + 1, stride))
    if origins[-1] != length - patch:
        origins.append(length - patch)
    return origins


def make_grid(width: int, height: int, patch_size: int = 32, stride: int = 24) -> PatchGrid:
    if patch_size < 1 or patch_size > min(width, height):
        raise ValueError(f"patch size {patch_size} does not fit a {width}x{height} frame")
    if not 0 < stride <= patch_size:
        raise ValueError(f"stride must be in (0, {patch_size}], got {stride}")
    xs = _axis_origins(width, patch_size, stride)
    ys = _axis_origins(height, patch_size, stride)
    origins = tuple((x, y) for y in ys for x in xs)
    return PatchGrid(width, height, patch_size, stride, origins)


def cut(image: np.ndarray, grid: PatchGrid) -> list[tuple[tuple[int, int], np.ndarray]]:
    p = grid.patch_size
    return [((x, y), image[y:y + p, x:x + p].copy()) for x, y in grid.origins]


def hann_window(size: int) -> np.ndarray:
    """Separable raised-cosine window, strictly positive at the patch edge."""
    w = np.sin(np.pi * (np.arange(size) + 0.5) / size) ** 2
    return np.outer(w, w)


def splice(patches: Sequence[tuple[tuple[int, int], np.ndarray]], width: int, height: int) -> np.ndarray:
    """Blend overlapping patches with normalised Hann weights."""
    if not patches:
        raise ValueError("no patches to splice")
    first = np.asarray(patches[0][1])
    extra = first.shape[2:]
    acc = np.zeros((height, width) + extra)
    wsum = np.zeros((height, width))
    for (x, y), patch in patches:
        patch = np.asarray(patch, dtype=np.float64)
        ph, pw = patch.shape[:2]
        if ph != pw:
            raise ValueError("patches must be square")
        if x < 0 or y < 0 or x + pw > width or y + ph > height:
            raise ValueError(f"patch at {(x, y)} falls outside the {width}x{height} frame")
        win = hann_window(ph)
        acc[y:y + ph, x:x + pw] += patch * win.reshape(win.shape + (1,) * len(extra))
        wsum[y:y + ph, x:x + pw] += win
    missing = np.argwhere(wsum == 0)
    if len(missing):
        yy, xx = missing[0]
        raise ValueError(f"pixel (x={xx}, y={yy}) is not covered by any patch")
    return acc / wsum.reshape(wsum.shape + (1,) * len(extra))


# -- PNG sequences -----------------------------------------------------------

_NUM = re.compile(r"(\d+)")


def _sort_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in _NUM.split(name)]


def list_frames(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    files = [p for p in directory.iterdir() if p.suffix.lower() == ".png"]
    return sorted(files, key=lambda p: _sort_key(p.name))


def load_png(path: str | os.PathLike, index: int = 0) -> Frame:
    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"), dtype=np.float64)
        else:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return Frame(arr / 255.0, index)


def save_png(image, path: str | os.PathLike) -> None:
    data = image.data if isinstance(image, Frame) else np.asarray(image, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    u8 = np.clip(np.floor(np.clip(data, 0.0, 1.0) * 255.0 + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(u8).save(path)


def read_sequence(directory: str | os.PathLike, frames: Iterable[int] | None = None) -> list[Frame]:
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no PNG frames in {directory}")
    wanted = range(len(paths)) if frames is None else frames
    out = []
    for i in wanted:
        try:
            out.append(load_png(paths[i], i))
        except (OSError, IndexError) as exc:
            raise OSError(f"cannot read frame {i}: {exc}") from exc
    return out


def write_sequence(frames: Iterable, directory: str | os.PathLike, start: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, frame in enumerate(frames):
        index = frame.index if isinstance(frame, Frame) else start + i
        path = directory / FRAME_PATTERN.format(index)
        save_png(frame, path)
        written.append(path)
    return written
