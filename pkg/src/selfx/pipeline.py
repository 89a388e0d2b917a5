"""End-to-end self-exemplar super-resolution of video frames.

Per frame: tile into overlapping patches; for each patch retrieve global and
local exemplars, block-match and select the global ones, align them with an
affine model, fuse, transfer detail onto a bicubic base; splice the patches.
"""
from __future__ import annotations

import csv
import logging
import os
import threading
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy import ndimage

from .align import AffineParams, NoModelError, RansacConfig, fit_affine_ransac, median_translation, \
    refine_affine, warp
from .features import MatchMaps, extract_features, match_blocks, swap_blocks
from .frames import band_limit, make_grid, resample_bicubic, resize, splice, to_luma
from .fusion import FusionConfig, compute_weights, fuse_global, reconstruct_patch
from .metrics import FrameMetrics, MetricReport, charbonnier, psnr, ssim
from .retrieval import ExemplarCandidate, SearchConfig, retrieve_global, retrieve_local
from .selection import SelectionConfig, select
from .store import FrameStore
from .synthetic import SyntheticVideo, generate_synthetic  # noqa: F401  (re-export)

log = logging.getLogger(__name__)

STAGES = ("retrieval", "matching", "alignment", "fusion", "splice")


@dataclass(frozen=True)
class PipelineConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    upscale: int = 4
    local_refs: int = 2
    workers: int = 1
    seed: int = 0
    alignment: Literal["affine", "swap"] = "affine"
    refine_iterations: int = 30
    match_size: int = 0  # feature-matching grid side; 0 means patch_size

    def __post_init__(self):
        if self.upscale not in (2, 3, 4):
            raise ValueError("upscale must be 2, 3 or 4")
        if self.local_refs < 0 or self.workers < 1 or self.refine_iterations < 0:
            raise ValueError("local_refs >= 0, workers >= 1, refine_iterations >= 0 required")
        if self.alignment not in ("affine", "swap"):
            raise ValueError("alignment must be 'affine' or 'swap'")
        m = self.match_cells
        if m < 8 or (self.search.patch_size * self.upscale) % m:
            raise ValueError("match_size must be >= 8 and divide patch_size * upscale")

    @property
    def K(self) -> int:
        return self.selection.k

    @property
    def V(self) -> int:
        return self.local_refs

    @property
    def match_cells(self) -> int:
        return self.match_size or self.search.patch_size

    def with_refs(self, K: int | None = None, V: int | None = None) -> "PipelineConfig":
        sel = self.selection if K is None else replace(self.selection, k=K)
        return replace(self, selection=sel, local_refs=self.local_refs if V is None else V)


@dataclass
class PatchDiagnostics:
    frame: int
    patch: int
    x: int
    y: int
    candidates: int
    skipped_scales: str
    selected_scales: str
    selected_frames: str
    mean_d: str
    fill_count: int
    inlier_fraction: float
    refined: int
    confidence: float
    local_refs: int

    FIELDS = ("frame", "patch", "x", "y", "candidates", "skipped_scales", "selected_scales",
              "selected_frames", "mean_d", "fill_count", "inlier_fraction", "refined",
              "confidence", "local_refs")

    def row(self) -> list:
        out = []
        for name in self.FIELDS:
            v = getattr(self, name)
            out.append(f"{v:.6f}" if isinstance(v, float) else v)
        return out


@dataclass
class RunReport:
    metrics: MetricReport | None = None
    diagnostics: list[PatchDiagnostics] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=lambda: defaultdict(float))

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PatchDiagnostics.FIELDS)
            for d in self.diagnostics:
                w.writerow(d.row())


class _Timer:
    def __init__(self):
        self.lock = threading.Lock()
        self.totals = defaultdict(float)

    def add(self, stage: str, seconds: float) -> None:
        with self.lock:
            self.totals[stage] += seconds


def _fmt_list(values) -> str:
    return ";".join(f"{v:g}" if isinstance(v, float) else str(v) for v in values)


def _patch_seed(seed: int, t: int, patch: int, ref: int) -> int:
    return int(np.random.SeedSequence([seed, t, patch, ref]).generate_state(1)[0])


def _cell_to_pixels(origin: tuple[float, float], size: float, cells: int) -> AffineParams:
    # feature cell m covers pixels of a window of side ``size`` starting at ``origin``
    s = size / cells
    return AffineParams(s, 0.0, 0.0, s, origin[0] + 0.5 * s - 0.5, origin[1] + 0.5 * s - 0.5)


def match_candidates(store: FrameStore, t: int, origin: tuple[int, int], cfg: PipelineConfig
                     ) -> tuple[list[tuple[ExemplarCandidate, MatchMaps]], tuple[float, ...]]:
    """Global candidates for one patch with their block-match maps (memoised)."""
    key = ("maps", t, tuple(origin), cfg.search, cfg.match_cells)
    return store.memo.get(key, lambda: _match_candidates(store, t, origin, cfg))


def _match_candidates(store, t, origin, cfg):
    p, m = cfg.search.patch_size, cfg.match_cells
    x0, y0 = origin
    found = retrieve_global(store, t, origin, cfg.search)
    query = store.luma(t)[y0:y0 + p, x0:x0 + p]
    fq = extract_features(query if m == p else resize(query, (m, m)), "query")
    out = []
    for cand in found.candidates:
        X, Y = cand.location
        q = cand.size
        ref = store.band_limited(cand.source_frame, cand.scale)[Y:Y + q, X:X + q]
        fr = extract_features(resize(ref, (m, m)), f"frame{cand.source_frame}@{cand.scale:g}")
        out.append((cand, match_blocks(fq, fr)))
    return out, found.skipped_scales


def _inlier_weights(maps: MatchMaps, mask: np.ndarray, cells: int, patch: int) -> np.ndarray:
    hg, wg = maps.similarity.shape
    cover = np.zeros((cells, cells))
    for g in np.flatnonzero(mask):
        gy, gx = divmod(int(g), wg)
        cover[gy:gy + 3, gx:gx + 3] = 1.0
    return cover if cells == patch else resize(cover, (patch, patch))


def _align_reference(store, t, origin, cand, maps, cfg, seed):
    """Affine model mapping source-frame coordinates to query-patch coordinates."""
    p, m = cfg.search.patch_size, cfg.match_cells
    qpts, rpts = maps.query_points(), maps.reference_points()
    try:
        model, mask = fit_affine_ransac(qpts, rpts, replace(cfg.ransac, seed=seed))
        inlier_frac = float(mask.mean())
    except NoModelError:
        model, mask = median_translation(qpts, rpts), None
        inlier_frac = 0.0
        if model.degenerate:
            model = AffineParams()
    to_src = _cell_to_pixels(cand.location, cand.size, m)
    to_query = _cell_to_pixels((0.0, 0.0), p, m)
    total = to_src.inverse().then(model).then(to_query)
    refined = 0
    if cfg.refine_iterations and mask is not None:
        x0, y0 = origin
        template = store.luma(t)[y0:y0 + p, x0:x0 + p]
        image = store.band_limited(cand.source_frame, cand.scale)
        weights = _inlier_weights(maps, mask, m, p)
        _, before = refine_affine(template, image, total, 0, weights)
        better, after = refine_affine(template, image, total, cfg.refine_iterations, weights)
        corners = np.array([[0, 0], [p - 1, 0], [0, p - 1], [p - 1, p - 1]], float)
        moved = np.abs(better.inverse().apply(corners) - total.inverse().apply(corners)).max()
        if after > before and moved < 0.25 * p and not better.degenerate:
            total, refined = better, 1
    return total, inlier_frac, refined


def _gate(base_luma: np.ndarray, ref_luma: np.ndarray, upscale: int, fcfg: FusionConfig) -> np.ndarray:
    """Per-pixel trust in a reference from low-band agreement with the bicubic base."""
    low = band_limit(ref_luma, upscale)
    sigma = 1.5 * upscale
    g = lambda a: ndimage.gaussian_filter(a, sigma, mode="nearest")  # noqa: E731
    ma, mb = g(base_luma), g(low)
    va = g(base_luma * base_luma) - ma * ma
    vb = g(low * low) - mb * mb
    cov = g(base_luma * low) - ma * mb
    ncc = cov / np.sqrt(np.maximum(va * vb, 1e-12))
    ratio = np.sqrt(np.maximum(vb, 0) / np.maximum(va, 1e-12))
    gate = np.clip((ncc - fcfg.gate_low) / (fcfg.gate_high - fcfg.gate_low), 0.0, 1.0)
    gate *= (va > 1e-5) & (ratio > 0.6) & (ratio < 1.6)
    return gate


def _similarity_on_grid(maps: MatchMaps, cells: int, size: int) -> np.ndarray:
    s = np.pad(maps.similarity, 1, mode="edge")
    u = (np.arange(size) + 0.5) * cells / size - 0.5
    yy, xx = np.meshgrid(u, u, indexing="ij")
    return ndimage.map_coordinates(s, [yy, xx], order=1, mode="nearest")


def super_resolve_patch(store: FrameStore, t: int, origin: tuple[int, int], cfg: PipelineConfig,
                        patch_index: int = 0, timer: _Timer | None = None
                        ) -> tuple[np.ndarray, PatchDiagnostics]:
    timer = timer or _Timer()
    p, up, m = cfg.search.patch_size, cfg.upscale, cfg.match_cells
    x0, y0 = origin
    lr_patch = store.frames[t][y0:y0 + p, x0:x0 + p]
    hr_size = p * up

    tic = time.perf_counter()
    local = retrieve_local(store, t, origin, cfg.search, cfg.local_refs) if cfg.local_refs else []
    local_imgs = [store.frames[c.source_frame][c.location[1]:c.location[1] + p,
                                                c.location[0]:c.location[0] + p] for c in local]
    cands, skipped = ([], ())
    if cfg.K > 0:
        global_found = retrieve_global(store, t, origin, cfg.search)
        skipped = global_found.skipped_scales
    timer.add("retrieval", time.perf_counter() - tic)

    tic = time.perf_counter()
    if cfg.K > 0:
        cands, skipped = match_candidates(store, t, origin, cfg)
    chosen = select(cands, cfg.selection) if cands else None
    timer.add("matching", time.perf_counter() - tic)

    diag = PatchDiagnostics(t, patch_index, x0, y0, len(cands), _fmt_list(skipped), "", "", "",
                            0, 0.0, 0, 0.0, len(local))
    if chosen is None:
        tic = time.perf_counter()
        out = reconstruct_patch(lr_patch, None, None, local_imgs, up, cfg.fusion.alpha, cfg.fusion.beta)
        timer.add("fusion", time.perf_counter() - tic)
        return out, diag

    tic = time.perf_counter()
    base_luma = to_luma(resample_bicubic(lr_patch, up))
    aligned, gates, sims, mean_ds, inliers, refined = [], [], [], [], [], 0
    for r, (cand, maps) in enumerate(chosen.refs):
        src = store.frames[cand.source_frame]
        if cfg.alignment == "affine":
            model, frac, ref_ok = _align_reference(store, t, origin, cand, maps, cfg,
                                                   _patch_seed(cfg.seed, t, patch_index, r))
            to_hr = AffineParams(up, 0.0, 0.0, up, 0.5 * up - 0.5, 0.5 * up - 0.5)
            img, valid = warp(src, model.then(to_hr), (hr_size, hr_size), order=3)
            img = np.clip(img, 0.0, 1.0)
            refined += ref_ok
        else:
            X, Y = cand.location
            crop = src[Y:Y + cand.size, X:X + cand.size]
            cell = hr_size // m
            img = swap_blocks(resize(crop, (m * cell, m * cell)), maps, cell)
            valid = np.ones((hr_size, hr_size), dtype=bool)
            frac = 0.0
        inliers.append(frac)
        gate = _gate(base_luma, to_luma(img), up, cfg.fusion) * valid
        aligned.append(img)
        gates.append(gate)
        sims.append(_similarity_on_grid(maps, m, hr_size))
        mean_ds.append(maps.mean_distance)
    timer.add("alignment", time.perf_counter() - tic)

    tic = time.perf_counter()
    weights, fallback = compute_weights(sims, mean_ds, gates, cfg.fusion.temperature,
                                        cfg.fusion.distance_weight)
    fused, fvalid = fuse_global(aligned, weights, gates)
    out = reconstruct_patch(lr_patch, fused, fvalid, local_imgs, up, cfg.fusion.alpha, cfg.fusion.beta)
    timer.add("fusion", time.perf_counter() - tic)

    conf_w = weights.max(axis=0)[~fallback]
    diag.selected_scales = _fmt_list([c.scale for c, _ in chosen.refs])
    diag.selected_frames = _fmt_list([c.source_frame for c, _ in chosen.refs])
    diag.mean_d = _fmt_list([round(d, 6) for d in mean_ds])
    diag.fill_count = chosen.fill_count
    diag.inlier_fraction = float(np.mean(inliers))
    diag.refined = refined
    diag.confidence = float(conf_w.mean()) if conf_w.size else 0.0
    return out, diag


def super_resolve_frame(store: FrameStore, t: int, cfg: PipelineConfig,
                        timer: _Timer | None = None) -> tuple[np.ndarray, list[PatchDiagnostics]]:
    """Super-resolve frame ``t`` by ``cfg.upscale``; deterministic for any worker count."""
    if not 0 <= t < len(store):
        raise IndexError(f"frame {t} outside video of {len(store)} frames")
    timer = timer or _Timer()
    p, up = cfg.search.patch_size, cfg.upscale
    grid = make_grid(store.width, store.height, p, cfg.search.stride)
    jobs = list(enumerate(grid.origins))

    def run(job):
        i, origin = job
        return super_resolve_patch(store, t, origin, cfg, i, timer)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    tic = time.perf_counter()
    patches = [((x * up, y * up), res[0]) for (_, (x, y)), res in zip(jobs, results)]
    out = np.clip(splice(patches, store.width * up, store.height * up), 0.0, 1.0)
    timer.add("splice", time.perf_counter() - tic)
    return out, [res[1] for res in results]


def bicubic_frame(store: FrameStore, t: int, upscale: int) -> np.ndarray:
    return resample_bicubic(store.frames[t], upscale)


def run(store: FrameStore, frames: Sequence[int], cfg: PipelineConfig,
        gt: Sequence[np.ndarray] | None = None) -> tuple[list[np.ndarray], RunReport]:
    """Super-resolve ``frames``; with ``gt`` (aligned to ``frames``) also score them."""
    timer = _Timer()
    outputs, report = [], RunReport()
    for t in frames:
        sr, diags = super_resolve_frame(store, t, cfg, timer)
        outputs.append(sr)
        report.diagnostics.extend(diags)
    if gt is not None:
        rows = [FrameMetrics(t, psnr(o, g), ssim(o, g), charbonnier(o, g))
                for t, o, g in zip(frames, outputs, gt)]
        report.metrics = MetricReport(rows)
    report.timings = dict(timer.totals)
    return outputs, report


def analyze_recurrence(store: FrameStore, frames: Sequence[int], cfg: PipelineConfig
                       ) -> list[tuple[int, float, float]]:
    """Per frame and scale: fraction of patches whose candidate passes mean(D) <= delta."""
    grid = make_grid(store.width, store.height, cfg.search.patch_size, cfg.search.stride)
    scales = cfg.search.scale_sequence.scales
    rows = []
    for t in frames:
        passed = dict.fromkeys(scales, 0)
        for origin in grid.origins:
            cands, _ = match_candidates(store, t, origin, cfg)
            for cand, maps in cands:
                if maps.mean_distance <= cfg.selection.delta:
                    passed[cand.scale] += 1
        rows.extend((t, s, passed[s] / grid.n) for s in scales)
    return rows


def sweep_references(store: FrameStore, frames: Sequence[int], cfg: PipelineConfig,
                     K_values: Sequence[int], V_values: Sequence[int],
                     gt: Sequence[np.ndarray], masks: Sequence[np.ndarray] | None = None
                     ) -> list[dict]:
    """PSNR/SSIM for every (K, V) pair; ``delta_psnr`` is relative to the smallest V at that K."""
    pairs = list(dict.fromkeys((int(k), int(v)) for k in K_values for v in V_values))
    rows = []
    for K, V in pairs:
        outputs, report = run(store, frames, cfg.with_refs(K, V), gt)
        row = {"K": K, "V": V, "psnr": report.metrics.psnr, "ssim": report.metrics.ssim}
        if masks is not None:
            row["region_psnr"] = float(np.mean([psnr(o, g, mk) for o, g, mk in zip(outputs, gt, masks)
                                                if np.any(mk)]))
        rows.append(row)
    for row in rows:
        vmin = min(v for k, v in pairs if k == row["K"])
        ref = next(r for r in rows if r["K"] == row["K"] and r["V"] == vmin)
        row["delta_psnr"] = row["psnr"] - ref["psnr"]
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str | os.PathLike) -> None:
    cols = ["K", "V", "psnr", "ssim", "delta_psnr"] + (["region_psnr"] if rows and "region_psnr" in rows[0] else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if c in ("K", "V") else f"{r[c]:+.6f}" if c == "delta_psnr" else f"{r[c]:.6f}"
                        for c in cols])
