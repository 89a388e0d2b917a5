"""Fixed filter-bank features and dense 3x3 feature-block matching.

Block similarity is the cosine between flattened 3x3xC blocks, accumulated
element by element in ``(dy, dx, channel)`` order.  That fixed order makes the
reported similarities reproducible bit for bit by any loop that sums the same
way, whatever accelerated search found the argmax.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .frames import Frame, to_luma

VARIANCE_FLOOR = 1e-8
MIN_SIZE = 8
# approximate (BLAS) similarities within this margin of the row maximum are
# re-scored exactly; BLAS rounding error is ~1e-14
_CANDIDATE_MARGIN = 1e-9
_CHUNK = 1024


def _gabor_bank() -> list[np.ndarray]:
    r = np.arange(-2, 3, dtype=np.float64)
    yy, xx = np.meshgrid(r, r, indexing="ij")
    envelope = np.exp(-(xx ** 2 + yy ** 2) / (2 * 1.2 ** 2))
    bank = []
    for theta in np.deg2rad([0.0, 45.0, 90.0, 135.0]):
        k = envelope * np.cos(2 * np.pi * 0.25 * (xx * np.cos(theta) + yy * np.sin(theta)))
        k -= envelope * (k.sum() / envelope.sum())
        bank.append(k / np.abs(k).sum())
    return bank


_GABOR = _gabor_bank()
_DX = np.array([[0.0, 0.0, 0.0], [-0.5, 0.0, 0.5], [0.0, 0.0, 0.0]])
_LAPLACE = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
CHANNELS = ("luma", "dx", "dy", "laplacian", "gabor0", "gabor45", "gabor90", "gabor135")


@dataclass(frozen=True)
class FeatureMap:
    data: np.ndarray  # (H, W, C)
    source: str = "query"

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def scaled(self, factor: float) -> "FeatureMap":
        return FeatureMap(self.data * factor, self.source)


@dataclass(frozen=True)
class MatchMaps:
    similarity: np.ndarray       # (Hg, Wg) over query block centres
    distance: np.ndarray         # (Hg, Wg), squared offset / diagonal^2
    correspondences: np.ndarray  # (Hg, Wg, 2) matched reference centre (x, y)

    @property
    def mean_distance(self) -> float:
        return float(self.distance.mean())

    def query_points(self) -> np.ndarray:
        hg, wg = self.similarity.shape
        ys, xs = np.mgrid[1:hg + 1, 1:wg + 1]
        return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    def reference_points(self) -> np.ndarray:
        return self.correspondences.reshape(-1, 2).astype(np.float64)


def extract_features(image, source: str = "query") -> FeatureMap:
    """Eight standardised channels: luma, gradients, Laplacian, four Gabors."""
    data = image.data if isinstance(image, Frame) else np.asarray(image, dtype=np.float64)
    y = to_luma(data)
    if min(y.shape) < MIN_SIZE:
        raise ValueError(f"image {y.shape} smaller than {MIN_SIZE}x{MIN_SIZE}")
    chans = [
        y,
        ndimage.correlate(y, _DX, mode="reflect"),
        ndimage.correlate(y, _DX.T, mode="reflect"),
        ndimage.correlate(y, _LAPLACE, mode="reflect"),
    ]
    chans += [ndimage.correlate(y, k, mode="reflect") for k in _GABOR]
    out = np.empty(y.shape + (len(chans),))
    for i, c in enumerate(chans):
        var = c.var()
        out[:, :, i] = 0.0 if var < VARIANCE_FLOOR else (c - c.mean()) / np.sqrt(var)
    return FeatureMap(out, source)


def unfold_blocks(feat: FeatureMap) -> np.ndarray:
    """Dense 3x3 blocks flattened in (dy, dx, channel) order: (Hg*Wg, 9*C)."""
    win = sliding_window_view(feat.data, (3, 3), axis=(0, 1))  # (Hg, Wg, C, 3, 3)
    win = np.moveaxis(win, 2, -1)                                 # (Hg, Wg, 3, 3, C)
    hg, wg = win.shape[:2]
    return np.ascontiguousarray(win.reshape(hg * wg, -1))


def ordered_norms(blocks: np.ndarray) -> np.ndarray:
    acc = blocks[:, 0] * blocks[:, 0]
    for k in range(1, blocks.shape[1]):
        acc = acc + blocks[:, k] * blocks[:, k]
    return np.sqrt(acc)


def ordered_cosine(a: np.ndarray, b: np.ndarray, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    """Row-wise cosine of paired blocks, summed in fixed element order."""
    acc = a[:, 0] * b[:, 0]
    for k in range(1, a.shape[1]):
        acc = acc + a[:, k] * b[:, k]
    den = na * nb
    out = np.zeros_like(acc)
    ok = den > 0
    out[ok] = acc[ok] / den[ok]
    return np.clip(out, -1.0, 1.0)


def match_blocks(query_feat: FeatureMap, ref_feat: FeatureMap) -> MatchMaps:
    """Best-matching reference block for every query block (exact argmax)."""
    if query_feat.channels != ref_feat.channels:
        raise ValueError(f"channel mismatch: {query_feat.channels} vs {ref_feat.channels}")
    if min(ref_feat.height, ref_feat.width, query_feat.height, query_feat.width) < 3:
        raise ValueError("feature maps must be at least 3x3")
    qb = unfold_blocks(query_feat)
    rb = unfold_blocks(ref_feat)
    qn = ordered_norms(qb)
    rn = ordered_norms(rb)
    qhat = np.divide(qb, qn[:, None], out=np.zeros_like(qb), where=qn[:, None] > 0)
    rhat = np.divide(rb, rn[:, None], out=np.zeros_like(rb), where=rn[:, None] > 0)

    n_q = len(qb)
    best_h = np.zeros(n_q, dtype=np.int64)
    best_s = np.zeros(n_q)
    for lo in range(0, n_q, _CHUNK):
        hi = min(n_q, lo + _CHUNK)
        approx = qhat[lo:hi] @ rhat.T
        rowmax = approx.max(axis=1, keepdims=True)
        live = qn[lo:hi, None] > 0  # zero blocks score 0 everywhere, keep h = 0
        gi, hj = np.nonzero((approx >= rowmax - _CANDIDATE_MARGIN) & live)
        gi = gi + lo
        exact = ordered_cosine(qb[gi], rb[hj], qn[gi], rn[hj])
        # per query block: highest exact score, then smallest reference index
        order = np.lexsort((hj, -exact, gi))
        gi, hj, exact = gi[order], hj[order], exact[order]
        first = np.ones(len(gi), dtype=bool)
        first[1:] = gi[1:] != gi[:-1]
        best_h[gi[first]] = hj[first]
        best_s[gi[first]] = exact[first]

    hg, wg = query_feat.height - 2, query_feat.width - 2
    rw = ref_feat.width - 2
    ry, rx = np.divmod(best_h, rw)
    corr = np.stack([rx + 1, ry + 1], axis=1).reshape(hg, wg, 2)
    qy, qx = np.mgrid[1:hg + 1, 1:wg + 1]
    diag2 = float(query_feat.width ** 2 + query_feat.height ** 2)
    dist = ((qx - corr[:, :, 0]) ** 2 + (qy - corr[:, :, 1]) ** 2) / diag2
    return MatchMaps(best_s.reshape(hg, wg), dist.astype(np.float64), corr)


def swap_blocks(reference: np.ndarray, maps: MatchMaps, cell: int) -> np.ndarray:
    """Feature-swap baseline: paste each matched 3x3 reference block, average overlaps.

    ``reference`` is sampled at ``cell`` pixels per feature cell; the output
    covers the query map at the same sampling.
    """
    reference = np.asarray(reference, dtype=np.float64)
    hg, wg = maps.similarity.shape
    out_h, out_w = (hg + 2) * cell, (wg + 2) * cell
    extra = reference.shape[2:]
    acc = np.zeros((out_h, out_w) + extra)
    cnt = np.zeros((out_h, out_w))
    b = 3 * cell
    for gy in range(hg):
        for gx in range(wg):
            rx, ry = maps.correspondences[gy, gx]
            src = reference[(ry - 1) * cell:(ry - 1) * cell + b, (rx - 1) * cell:(rx - 1) * cell + b]
            acc[gy * cell:gy * cell + b, gx * cell:gx * cell + b] += src
            cnt[gy * cell:gy * cell + b, gx * cell:gx * cell + b] += 1
    return acc / cnt.reshape(cnt.shape + (1,) * len(extra))
