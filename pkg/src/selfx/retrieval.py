"""Template-matching search for global (cross-scale) and local self-exemplars.

Similarity is zero-normalised cross-correlation: the cosine between the
mean-free query and each mean-free target window.  Windows (or queries) with
zero variance score exactly 0.  Ties resolve to the smallest ``(y, x)`` and
then the lowest frame index.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft
from scipy import signal

from .frames import ScaleSequence, resample_bicubic, scaled_size
from .store import FrameStore

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class SearchConfig:
    scale_sequence: ScaleSequence = field(default_factory=ScaleSequence)
    patch_size: int = 32
    stride: int = 24
    search_downsample: int = 2
    neighbor_radius: int = 2
    exclude_self_window: int = 16
    local_window: int = 2  # local search reaches +/- local_window * patch_size
    coarse_peaks: int = 2
    refine_frames: int = 4  # frames whose coarse optimum is refined at full resolution

    def __post_init__(self):
        if not isinstance(self.scale_sequence, ScaleSequence):
            object.__setattr__(self, "scale_sequence", ScaleSequence(tuple(self.scale_sequence)))
        if self.search_downsample < 1:
            raise ValueError("search_downsample must be >= 1")
        if self.neighbor_radius < 1:
            raise ValueError("neighbor_radius must be >= 1")
        if not 0 < self.stride <= self.patch_size:
            raise ValueError("stride must be in (0, patch_size]")
        if self.exclude_self_window < 0 or self.local_window < 1 or self.coarse_peaks < 1 \
                or self.refine_frames < 1:
            raise ValueError("invalid search window settings")


@dataclass(frozen=True)
class ExemplarCandidate:
    source_frame: int
    scale: float
    location: tuple[int, int]
    size: int
    score: float
    kind: Literal["global", "local"]

    def __post_init__(self):
        if not -1.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [-1, 1]")
        if self.kind == "global" and not self.scale > 1.0:
            raise ValueError("global exemplars need scale > 1")
        if self.kind == "local" and self.scale != 1.0:
            raise ValueError("local exemplars have scale 1")


@dataclass(frozen=True)
class GlobalResult:
    candidates: tuple[ExemplarCandidate, ...]
    skipped_scales: tuple[float, ...] = ()


# -- zero-normalised cross-correlation ---------------------------------------

def _window_stats(target: np.ndarray, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    c1 = np.pad(target, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    c2 = np.pad(target * target, ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    def box(c):
        return c[h:, w:] - c[:-h, w:] - c[h:, :-w] + c[:-h, :-w]

    return box(c1), box(c2)


class PreparedTarget:
    """A search target with its spectrum and integral images precomputed."""

    def __init__(self, target: np.ndarray):
        self.data = np.asarray(target, dtype=np.float64)
        self.spectrum = sp_fft.rfft2(self.data)
        self.c1 = np.pad(self.data, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
        self.c2 = np.pad(self.data * self.data, ((1, 0), (1, 0))).cumsum(0).cumsum(1)

    @property
    def shape(self):
        return self.data.shape

    @property
    def nbytes(self) -> int:
        return self.data.nbytes + self.spectrum.nbytes + self.c1.nbytes + self.c2.nbytes

    def window_stats(self, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        def box(c):
            return c[h:, w:] - c[:-h, w:] - c[h:, :-w] + c[:-h, :-w]

        return box(self.c1), box(self.c2)

    def correlate(self, kernel: np.ndarray) -> np.ndarray:
        """Valid-mode cross-correlation via the cached spectrum."""
        H, W = self.data.shape
        h, w = kernel.shape
        kf = sp_fft.rfft2(kernel, s=(H, W))
        full = sp_fft.irfft2(self.spectrum * np.conj(kf), s=(H, W))
        return full[:H - h + 1, :W - w + 1]


def ncc_map(query: np.ndarray, target) -> np.ndarray:
    """ZNCC score for every placement of ``query`` inside ``target``.

    ``target`` may be an array or a :class:`PreparedTarget`.
    """
    query = np.asarray(query, dtype=np.float64)
    prepared = target if isinstance(target, PreparedTarget) else None
    tdata = prepared.data if prepared else np.asarray(target, dtype=np.float64)
    h, w = query.shape
    H, W = tdata.shape
    if h > H or w > W:
        raise ValueError(f"query {query.shape} larger than target {tdata.shape}")
    n = h * w
    qz = query - query.mean()
    qn2 = float(np.sum(qz * qz))
    out_shape = (H - h + 1, W - w + 1)
    if qn2 / n < VAR_FLOOR:
        return np.zeros(out_shape)
    if prepared is not None:
        corr = prepared.correlate(qz)
        s1, s2 = prepared.window_stats(h, w)
    else:
        corr = signal.correlate(tdata, qz, mode="valid")
        s1, s2 = _window_stats(tdata, h, w)
    tn2 = s2 - s1 * s1 / n
    ok = tn2 / n >= VAR_FLOOR
    score = np.zeros(out_shape)
    score[ok] = corr[ok] / np.sqrt(qn2 * tn2[ok])
    return np.clip(score, -1.0, 1.0)


def ncc_at(query: np.ndarray, target: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """ZNCC evaluated directly at the given ``(x, y)`` window origins."""
    query = np.asarray(query, dtype=np.float64)
    h, w = query.shape
    locations = np.asarray(locations, dtype=np.int64).reshape(-1, 2)
    if len(locations) == 0:
        return np.zeros(0)
    windows = sliding_window_view(target, (h, w))[locations[:, 1], locations[:, 0]]
    n = h * w
    qz = query - query.mean()
    qn2 = float(np.sum(qz * qz))
    if qn2 / n < VAR_FLOOR:
        return np.zeros(len(locations))
    wz = windows - windows.mean(axis=(1, 2), keepdims=True)
    tn2 = np.sum(wz * wz, axis=(1, 2))
    dots = np.sum(wz * qz, axis=(1, 2))
    score = np.zeros(len(locations))
    ok = tn2 / n >= VAR_FLOOR
    score[ok] = dots[ok] / np.sqrt(qn2 * tn2[ok])
    return np.clip(score, -1.0, 1.0)


def _best(score: np.ndarray) -> tuple[tuple[int, int], float]:
    flat = int(np.argmax(score))  # row-major: first max is smallest (y, x)
    y, x = divmod(flat, score.shape[1])
    return (x, y), float(score[y, x])


def _exclusion(shape, h, w, center, radius) -> np.ndarray | None:
    """Boolean mask of window origins whose centre lies within ``radius``."""
    if center is None or radius <= 0:
        return None
    ys = np.arange(shape[0])[:, None] + (h - 1) / 2.0
    xs = np.arange(shape[1])[None, :] + (w - 1) / 2.0
    return (np.abs(xs - center[0]) < radius) & (np.abs(ys - center[1]) < radius)


def template_match(query: np.ndarray, target: np.ndarray, exclude_center=None,
                   exclude_radius: float = 0) -> tuple[tuple[int, int], float]:
    """Exhaustive full-resolution search; returns ``((x, y), score)``.

    Window origins whose centre lies within ``exclude_radius`` (Chebyshev) of
    ``exclude_center`` are skipped.
    """
    score = ncc_map(query, target)
    mask = _exclusion(score.shape, *np.shape(query), exclude_center, exclude_radius)
    if mask is not None:
        if mask.all():
            raise ValueError("exclusion window removes every placement")
        score = np.where(mask, -np.inf, score)
    return _best(score)


def _coarse_peaks(score: np.ndarray, count: int) -> list[tuple[int, int]]:
    peaks = []
    s = score.copy()
    for _ in range(count):
        (x, y), v = _best(s)
        if not np.isfinite(v):
            break
        peaks.append((x, y))
        s[max(0, y - 1):y + 2, max(0, x - 1):x + 2] = -np.inf
    return peaks


def _coarse_search(query_small: np.ndarray, target_small, full_shape, qshape, downsample,
                   peaks, exclude_center, exclude_radius):
    """Top coarse placements mapped to full-resolution origins, with their best score."""
    coarse = ncc_map(query_small, target_small)
    H, W = full_shape
    hs, ws = target_small.shape
    sy, sx = H / hs, W / ws
    if exclude_center is not None and exclude_radius > 0:
        # slightly narrower than the full-resolution exclusion so refinement reaches its edge
        c = ((exclude_center[0] + 0.5) / sx - 0.5, (exclude_center[1] + 0.5) / sy - 0.5)
        cmask = _exclusion(coarse.shape, *query_small.shape, c, exclude_radius / downsample - 1)
        if cmask is not None:
            coarse = np.where(cmask, -np.inf, coarse)
    found = _coarse_peaks(coarse, peaks)
    top = float(coarse[found[0][1], found[0][0]]) if found else -np.inf
    return [(int(round(cx * sx)), int(round(cy * sy))) for cx, cy in found], top


def _refine(query, target, starts, radius, exclude_center, exclude_radius):
    h, w = query.shape
    H, W = target.shape
    cand = set()
    for fx, fy in starts:
        for yy in range(max(0, fy - radius), min(H - h, fy + radius) + 1):
            for xx in range(max(0, fx - radius), min(W - w, fx + radius) + 1):
                cand.add((yy, xx))
    full_mask = _exclusion((H - h + 1, W - w + 1), h, w, exclude_center, exclude_radius)
    if full_mask is not None:
        cand = {c for c in cand if not full_mask[c]}
    if not cand:
        return None
    order = sorted(cand)  # (y, x) ascending, so argmax ties keep the smallest
    locs = np.array([(x, y) for y, x in order])
    scores = ncc_at(query, target, locs)
    i = int(np.argmax(scores))
    return (int(locs[i, 0]), int(locs[i, 1])), float(scores[i])


def _pyramid_applicable(qshape, tshape, ds) -> bool:
    h, w = qshape
    H, W = tshape
    return ds > 1 and min(h, w) >= 4 * ds and min(H - h, W - w) >= 2 * ds


def template_match_pyramid(query: np.ndarray, target: np.ndarray, downsample: int = 2,
                           peaks: int = 2, exclude_center=None, exclude_radius: float = 0,
                           target_small=None) -> tuple[tuple[int, int], float]:
    """Coarse search on ``downsample``-reduced images, refined at full resolution.

    The ``peaks`` best coarse placements are each refined over a
    ``+/- downsample`` full-resolution window.  ``target_small`` may carry a
    cached reduced target (array or :class:`PreparedTarget`).
    """
    query = np.asarray(query, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if query.shape[0] > target.shape[0] or query.shape[1] > target.shape[1]:
        raise ValueError(f"query {query.shape} larger than target {target.shape}")
    ds = int(downsample)
    if not _pyramid_applicable(query.shape, target.shape, ds):
        return template_match(query, target, exclude_center, exclude_radius)
    if target_small is None:
        target_small = resample_bicubic(target, 1.0 / ds)
    qs = resample_bicubic(query, 1.0 / ds)
    if qs.shape[0] > target_small.shape[0] or qs.shape[1] > target_small.shape[1]:
        return template_match(query, target, exclude_center, exclude_radius)
    starts, _ = _coarse_search(qs, target_small, target.shape, query.shape, ds, peaks,
                               exclude_center, exclude_radius)
    best = _refine(query, target, starts, ds, exclude_center, exclude_radius)
    if best is None:
        return template_match(query, target, exclude_center, exclude_radius)
    return best


# -- exemplar retrieval ------------------------------------------------------

def _query_window(store: FrameStore, t: int, origin: tuple[int, int], scale: float,
                  patch_size: int) -> tuple[np.ndarray, int]:
    up = store.upscaled(t, scale)
    q = scaled_size(patch_size, scale)
    ox = min(int(math.floor(origin[0] * scale + 0.5)), up.shape[1] - q)
    oy = min(int(math.floor(origin[1] * scale + 0.5)), up.shape[0] - q)
    return up[oy:oy + q, ox:ox + q], q


def retrieve_global(store: FrameStore, t: int, patch_origin: tuple[int, int],
                    cfg: SearchConfig) -> GlobalResult:
    """One best cross-scale exemplar per scale, searched over every frame."""
    key = ("global", t, tuple(patch_origin), cfg)
    return store.memo.get(key, lambda: _retrieve_global(store, t, patch_origin, cfg))


def _retrieve_global(store, t, patch_origin, cfg):
    if not 0 <= t < len(store):
        raise IndexError(f"frame {t} outside video of {len(store)} frames")
    p = cfg.patch_size
    x0, y0 = patch_origin
    if x0 < 0 or y0 < 0 or x0 + p > store.width or y0 + p > store.height:
        raise ValueError(f"patch at {patch_origin} is outside the frame")
    ds = cfg.search_downsample
    own = (x0 + (p - 1) / 2.0, y0 + (p - 1) / 2.0)
    out, skipped = [], []
    for scale in cfg.scale_sequence:
        query, q = _query_window(store, t, patch_origin, scale, p)
        if q > store.height or q > store.width:
            skipped.append(scale)
            log.debug("scale %.2f skipped: %d px query exceeds frame", scale, q)
            continue
        best = None
        if _pyramid_applicable(query.shape, (store.height, store.width), ds):
            qs = resample_bicubic(query, 1.0 / ds)
            ranked = []
            for j in range(len(store)):
                small = store.derived(("band_small", j, scale, ds), lambda j=j: PreparedTarget(
                    resample_bicubic(store.band_limited(j, scale), 1.0 / ds)))
                if qs.shape[0] > small.shape[0] or qs.shape[1] > small.shape[1]:
                    continue
                excl = own if j == t else None
                starts, top = _coarse_search(qs, small, (store.height, store.width), query.shape,
                                             ds, cfg.coarse_peaks, excl, cfg.exclude_self_window)
                if starts:
                    ranked.append((-top, j, starts))
            ranked.sort(key=lambda r: (r[0], r[1]))
            for _, j, starts in ranked[:cfg.refine_frames]:
                excl = own if j == t else None
                found = _refine(query, store.band_limited(j, scale), starts, ds, excl,
                                cfg.exclude_self_window)
                if found is None:
                    continue
                loc, score = found
                key = (-score, loc[1], loc[0], j)
                if best is None or key < best[0]:
                    best = (key, j, loc, score)
        else:
            for j in range(len(store)):
                excl = own if j == t else None
                try:
                    loc, score = template_match(query, store.band_limited(j, scale), excl,
                                                cfg.exclude_self_window)
                except ValueError:
                    continue
                key = (-score, loc[1], loc[0], j)
                if best is None or key < best[0]:
                    best = (key, j, loc, score)
        if best is None:
            skipped.append(scale)
            continue
        _, j, loc, score = best
        out.append(ExemplarCandidate(j, scale, loc, q, score, "global"))
    return GlobalResult(tuple(out), tuple(skipped))


def neighbors(t: int, count: int, radius: int) -> list[int]:
    return [j for j in range(t - radius, t + radius + 1) if j != t and 0 <= j < count]


def retrieve_local(store: FrameStore, t: int, patch_origin: tuple[int, int],
                   cfg: SearchConfig, keep: int = 2) -> list[ExemplarCandidate]:
    """Best same-scale match in each neighbouring frame, top ``keep`` by score."""
    key = ("local", t, tuple(patch_origin), cfg)
    found = store.memo.get(key, lambda: _retrieve_local(store, t, patch_origin, cfg))
    return list(found[:keep])


def _retrieve_local(store, t, patch_origin, cfg):
    p = cfg.patch_size
    x0, y0 = patch_origin
    query = store.luma(t)[y0:y0 + p, x0:x0 + p]
    reach = cfg.local_window * p
    xa, xb = max(0, x0 - reach), min(store.width, x0 + p + reach)
    ya, yb = max(0, y0 - reach), min(store.height, y0 + p + reach)
    found = []
    for j in neighbors(t, len(store), cfg.neighbor_radius):
        region = store.luma(j)[ya:yb, xa:xb]
        (x, y), score = template_match(query, region)
        found.append(ExemplarCandidate(j, 1.0, (x + xa, y + ya), p, score, "local"))
    found.sort(key=lambda c: (-c.score, c.location[1], c.location[0], c.source_frame))
    return tuple(found)
