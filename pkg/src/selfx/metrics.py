"""PSNR, SSIM and Charbonnier distance, all on BT.601 luma in [0, 1]."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import ndimage

from .frames import Frame, to_luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _luma(img) -> np.ndarray:
    data = img.data if isinstance(img, Frame) else np.asarray(img, dtype=np.float64)
    return to_luma(data)


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    a, b = _luma(pred), _luma(gt)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(pred, gt, mask: np.ndarray | None = None) -> float:
    """10 log10(1 / MSE); ``inf`` when the images agree exactly."""
    a, b = _pair(pred, gt)
    d2 = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != d2.shape:
            raise ValueError("mask shape does not match the images")
        if not mask.any():
            raise ValueError("empty mask")
        d2 = d2[mask]
    mse = float(d2.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-r * r / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _valid_filter(img: np.ndarray, g1: np.ndarray) -> np.ndarray:
    n = len(g1)
    out = ndimage.correlate1d(img, g1, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g1, axis=1, mode="constant")
    h = n // 2
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim_map(pred, gt) -> np.ndarray:
    a, b = _pair(pred, gt)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g1 = np.exp(-r * r / (2 * SSIM_SIGMA ** 2))
    g1 /= g1.sum()
    c1, c2 = (SSIM_K1 ** 2), (SSIM_K2 ** 2)
    mu_a, mu_b = _valid_filter(a, g1), _valid_filter(b, g1)
    var_a = _valid_filter(a * a, g1) - mu_a * mu_a
    var_b = _valid_filter(b * b, g1) - mu_b * mu_b
    cov = _valid_filter(a * b, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(pred, gt) -> float:
    """Mean SSIM over every valid 11x11 Gaussian (sigma 1.5) window position."""
    return float(ssim_map(pred, gt).mean())


def charbonnier(pred, gt, epsilon: float = 1e-3, mask: np.ndarray | None = None) -> float:
    """Mean over pixels of sqrt(diff^2 + epsilon^2)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    a, b = _pair(pred, gt)
    d2 = (a - b) ** 2
    # excess over epsilon in cancellation-free form, so identical inputs give epsilon exactly
    v = d2 / (np.sqrt(d2 + epsilon * epsilon) + epsilon)
    if mask is not None:
        v = v[np.asarray(mask, dtype=bool)]
    return float(epsilon + v.mean())


@dataclass
class FrameMetrics:
    frame_index: int
    psnr: float
    ssim: float
    charbonnier: float


@dataclass
class MetricReport:
    per_frame: list[FrameMetrics] = field(default_factory=list)
    region_masks: Mapping[str, Sequence[np.ndarray]] | None = None

    @property
    def psnr(self) -> float:
        return float(np.mean([m.psnr for m in self.per_frame]))

    @property
    def ssim(self) -> float:
        return float(np.mean([m.ssim for m in self.per_frame]))

    @property
    def charbonnier(self) -> float:
        return float(np.mean([m.charbonnier for m in self.per_frame]))

    def region_psnr(self, name: str, preds, gts) -> list[float]:
        masks = (self.region_masks or {})[name]
        return [psnr(p, g, m) for p, g, m in zip(preds, gts, masks) if np.any(m)]


def evaluate(preds: Sequence, gts: Sequence, indices: Sequence[int] | None = None,
             epsilon: float = 1e-3) -> MetricReport:
    if len(preds) != len(gts):
        raise ValueError("prediction and ground-truth counts differ")
    indices = list(range(len(preds))) if indices is None else list(indices)
    rows = [FrameMetrics(i, psnr(p, g), ssim(p, g), charbonnier(p, g, epsilon))
            for i, p, g in zip(indices, preds, gts)]
    return MetricReport(rows)


def write_metrics_csv(report: MetricReport, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame_index", "psnr", "ssim", "charbonnier"])
        for m in report.per_frame:
            w.writerow([m.frame_index, f"{m.psnr:.6f}", f"{m.ssim:.6f}", f"{m.charbonnier:.6f}"])
