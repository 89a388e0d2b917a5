"""Seeded synthetic videos with planted cross-scale recurrence.

Each sprite is a textured square rendered from one high-resolution master.
It first drifts through the early frames at base size, then reappears in a
later block of frames enlarged by its planted scale, so the low-resolution
video holds a sharper copy of the early content.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .frames import ScaleSequence, resample_bicubic, resize


@dataclass(frozen=True)
class Placement:
    sprite: int
    scale: float      # 1.0 in the early block, the planted scale later
    x: int            # HR top-left
    y: int
    size: int         # HR side length


@dataclass
class SyntheticVideo:
    lr: list[np.ndarray]
    hr: list[np.ndarray]
    masks: list[np.ndarray]                 # HR sprite masks (union) per frame
    sprite_masks: list[dict[int, np.ndarray]]
    placements: list[list[Placement]]
    planted_scales: tuple[float, ...]
    upscale: int
    sprite_lr: int
    query_frames: list[int] = field(default_factory=list)

    def region_masks(self, frames=None) -> list[tuple[int, int, np.ndarray]]:
        """``(frame, sprite, mask)`` for every base-size sprite instance."""
        frames = self.query_frames if frames is None else frames
        out = []
        for t in frames:
            for pl in self.placements[t]:
                if pl.scale == 1.0:
                    out.append((t, pl.sprite, self.sprite_masks[t][pl.sprite]))
        return out


def _band_noise(rng, shape, sigmas, channels):
    out = np.zeros(shape + (channels,))
    for s in sigmas:
        n = ndimage.gaussian_filter(rng.standard_normal(shape + (channels,)), (s, s, 0), mode="wrap")
        out += n / n.std()
    return out / np.sqrt(len(sigmas))


def _master_texture(rng, size, channels):
    tex = 0.12 * _band_noise(rng, (size, size), (24, 12, 6, 3, 1.5), channels)
    base = rng.uniform(0.35, 0.65, channels)
    img = base + tex
    # hard-edged strokes, a few master pixels wide, like lettering or markings
    for _ in range(60):
        w = int(rng.integers(3, 14))
        ln = int(rng.integers(20, size // 3))
        x, y = rng.integers(0, size - ln, 2)
        val = rng.uniform(0.05, 0.95, channels)
        if rng.random() < 0.5:
            img[y:y + w, x:x + ln] = val
        else:
            img[y:y + ln, x:x + w] = val
    return np.clip(img, 0.0, 1.0)


def _background(rng, shape, channels):
    smooth = _band_noise(rng, shape, (48, 20), channels)
    fine = _band_noise(rng, shape, (2.0,), channels)
    return np.clip(0.5 + 0.12 * smooth + 0.015 * fine, 0.0, 1.0)


def _layout(frame_lr, sprite_lr, count, margin):
    # base-size sprites on a coarse grid so they never overlap
    per_row = max(1, (frame_lr[1] - margin) // (sprite_lr + margin))
    spots = []
    for i in range(count):
        r, c = divmod(i, per_row)
        spots.append((margin + c * (sprite_lr + 2 * margin), margin + r * (sprite_lr + 2 * margin)))
    return spots


def generate_synthetic(seed: int = 0, frames: int = 24,
                       planted_scales=(1.7, 2.1, 2.9),
                       lr_size: tuple[int, int] = (128, 128), upscale: int = 4,
                       sprite_lr: int = 40, channels: int = 3,
                       scale_sequence: ScaleSequence | None = None) -> SyntheticVideo:
    """Build an LR/HR video pair; HR is ``upscale`` times LR in each axis."""
    planted_scales = tuple(float(s) for s in planted_scales)
    seq = scale_sequence or ScaleSequence()
    if any(s not in seq.scales for s in planted_scales):
        raise ValueError(f"planted scales {planted_scales} not all in {seq.scales}")
    nspr = len(planted_scales)
    if frames < 2 * max(1, nspr):
        raise ValueError(f"need at least {2 * max(1, nspr)} frames for {nspr} sprites")
    if upscale not in (2, 3, 4):
        raise ValueError("upscale must be 2, 3 or 4")
    rng = np.random.default_rng(seed)
    H, W = lr_size[0] * upscale, lr_size[1] * upscale
    drift = 3  # HR px per frame
    bg = _background(rng, (H + drift * frames, W + drift * frames), channels)

    base_hr = sprite_lr * upscale
    largest = int(np.ceil(base_hr * max(planted_scales, default=1.0)))
    master_size = int(2 ** np.ceil(np.log2(largest * 1.1)))
    masters = [_master_texture(rng, master_size, channels) for _ in range(nspr)]
    renders: dict[tuple[int, int], np.ndarray] = {}

    def render(i, size):
        key = (i, size)
        if key not in renders:
            renders[key] = resize(masters[i], (size, size))
        return renders[key]

    early = frames // 2
    block = (frames - early) // max(1, nspr)
    spots = _layout(lr_size, sprite_lr, nspr, 6)
    hr, masks, sprite_masks, placements = [], [], [], []
    for t in range(frames):
        img = bg[t * drift // 2:t * drift // 2 + H, t * drift:t * drift + W].copy()
        frame_masks, frame_pl = {}, []
        for i, gamma in enumerate(planted_scales):
            if t < early:
                size = base_hr
                sx, sy = spots[i]
                x = sx * upscale + drift * t
                y = sy * upscale + (drift * t) // 2
                scale = 1.0
            elif early + i * block <= t < early + (i + 1) * block:
                size = int(round(base_hr * gamma))
                k = t - early - i * block
                x = max(0, (W - size) // 2) - drift * (block // 2) + drift * k
                y = max(0, (H - size) // 2)
                scale = gamma
            else:
                continue
            spr = render(i, size)
            x0, y0 = max(x, 0), max(y, 0)
            x1, y1 = min(x + size, W), min(y + size, H)
            if x1 <= x0 or y1 <= y0:
                continue
            img[y0:y1, x0:x1] = spr[y0 - y:y1 - y, x0 - x:x1 - x]
            m = np.zeros((H, W), dtype=bool)
            m[y0:y1, x0:x1] = True
            # later sprites paint over earlier ones
            for other in frame_masks.values():
                other &= ~m
            frame_masks[i] = m
            frame_pl.append(Placement(i, scale, x, y, size))
        union = np.zeros((H, W), dtype=bool)
        for m in frame_masks.values():
            union |= m
        hr.append(img)
        masks.append(union)
        sprite_masks.append(frame_masks)
        placements.append(frame_pl)
    lr = [resample_bicubic(h, 1.0 / upscale) for h in hr]
    return SyntheticVideo(lr, hr, masks, sprite_masks, placements, planted_scales,
                          upscale, sprite_lr, list(range(early)))
