"""Softmax fusion of aligned references and high-frequency detail transfer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frames import band_limit, resample_bicubic


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 0.8
    beta: float = 0.2
    temperature: float = 0.1
    distance_weight: float = 1.0
    # low-band agreement (local correlation) mapped linearly onto a [0, 1] gate
    gate_low: float = 0.85
    gate_high: float = 0.97

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not self.gate_high > self.gate_low:
            raise ValueError("gate_high must exceed gate_low")


@dataclass(frozen=True)
class FusionPlan:
    weights: np.ndarray            # (k, H, W), partition of unity over valid refs
    aligned_refs: np.ndarray       # (k, H, W[, C])
    validity: np.ndarray           # (k, H, W) in [0, 1]
    local_refs: tuple[np.ndarray, ...]
    fallback: np.ndarray           # (H, W) pixels where no reference is valid

    @property
    def confidence(self) -> float:
        if self.weights.shape[0] == 0:
            return 0.0
        covered = ~self.fallback
        if not covered.any():
            return 0.0
        return float(self.weights.max(axis=0)[covered].mean())


def compute_weights(similarities: Sequence[np.ndarray], mean_distances: Sequence[float],
                    valid: Sequence[np.ndarray], temperature: float,
                    distance_weight: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel softmax over references of ``(S_r - lambda * mean(D_r)) / T``.

    Invalid references are masked out before the softmax.  Returns the
    ``(k, H, W)`` weights and the mask of pixels with no valid reference (their
    weights are all zero).
    """
    if len(similarities) == 0:
        raise ValueError("need at least one reference")
    if not temperature > 0:
        raise ValueError("temperature must be > 0")
    S = np.stack([np.asarray(s, dtype=np.float64) for s in similarities])
    D = np.asarray(mean_distances, dtype=np.float64).reshape(-1, 1, 1)
    V = np.stack([np.asarray(v) > 0 for v in valid])
    if S.shape != V.shape:
        raise ValueError("similarity and validity maps differ in shape")
    logits = np.where(V, (S - distance_weight * D) / temperature, -np.inf)
    top = logits.max(axis=0)
    fallback = ~V.any(axis=0)
    e = np.where(V, np.exp(logits - np.where(fallback, 0.0, top)), 0.0)
    tot = e.sum(axis=0)
    w = np.divide(e, tot, out=np.zeros_like(e), where=tot > 0)
    return w, fallback


def fuse_global(aligned_refs: Sequence[np.ndarray], weights: np.ndarray,
                valid: Sequence[np.ndarray] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Weighted sum of aligned references; validity is the weight-averaged validity.

    For binary validity masks this is their union.
    """
    refs = np.stack([np.asarray(r, dtype=np.float64) for r in aligned_refs])
    weights = np.asarray(weights, dtype=np.float64)
    if refs.shape[:3] != weights.shape:
        raise ValueError(f"reference shape {refs.shape} does not match weights {weights.shape}")
    wb = weights.reshape(weights.shape + (1,) * (refs.ndim - 3))
    fused = (refs * wb).sum(axis=0)
    if valid is None:
        vmask = (weights.sum(axis=0) > 0).astype(np.float64)
    else:
        V = np.stack([np.asarray(v, dtype=np.float64) for v in valid])
        vmask = np.clip((weights * V).sum(axis=0), 0.0, 1.0)
    return fused, vmask


def detail_band(image: np.ndarray, factor: float) -> np.ndarray:
    """Image minus its band-limited copy (no clamping)."""
    return np.asarray(image, dtype=np.float64) - band_limit(image, factor)


def reconstruct_patch(lr_patch: np.ndarray, fused_global: np.ndarray | None,
                      validity: np.ndarray | None, local_refs: Sequence[np.ndarray],
                      upscale: int, alpha: float = 0.8, beta: float = 0.2) -> np.ndarray:
    """Bicubic base plus global detail where valid, local detail elsewhere."""
    if upscale not in (2, 3, 4):
        raise ValueError(f"upscale must be 2, 3 or 4, got {upscale}")
    lr_patch = np.asarray(lr_patch, dtype=np.float64)
    base = resample_bicubic(lr_patch, upscale)
    out = base.copy()
    v = None
    if fused_global is not None and validity is not None and alpha > 0:
        fused_global = np.asarray(fused_global, dtype=np.float64)
        if fused_global.shape != base.shape:
            raise ValueError(f"fused reference {fused_global.shape} != target {base.shape}")
        v = np.asarray(validity, dtype=np.float64)
        if base.ndim == 3:
            v = v[..., None]
        out = out + alpha * detail_band(fused_global, upscale) * v
    if local_refs and beta > 0:
        local = np.zeros_like(base)
        for ref in local_refs:
            up = resample_bicubic(np.asarray(ref, dtype=np.float64), upscale)
            local += detail_band(up, upscale)
        local /= len(local_refs)
        out = out + beta * local * (1.0 if v is None else (1.0 - v))
    return np.clip(out, 0.0, 1.0)
