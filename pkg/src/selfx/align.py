"""Affine alignment of references: RANSAC fit, inverse-mapped warping, refinement.

An :class:`AffineParams` maps *reference* coordinates to *query* coordinates.
Warping samples the reference at ``T^-1(p)`` for every query pixel ``p``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features import FeatureMap

DET_EPS = 1e-6


class NoModelError(RuntimeError):
    """RANSAC could not produce a non-degenerate affine model."""


@dataclass(frozen=True)
class AffineParams:
    a11: float = 1.0
    a12: float = 0.0
    a21: float = 0.0
    a22: float = 1.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        vals = (self.a11, self.a12, self.a21, self.a22, self.tx, self.ty)
        if not all(np.isfinite(vals)):
            raise ValueError("affine parameters must be finite")

    @classmethod
    def from_matrix(cls, m) -> "AffineParams":
        m = np.asarray(m, dtype=np.float64)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]),
                   float(m[0, 2]), float(m[1, 2]))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineParams":
        return cls(1.0, 0.0, 0.0, 1.0, float(dx), float(dy))

    @classmethod
    def scaling(cls, sx: float, sy: float | None = None) -> "AffineParams":
        return cls(float(sx), 0.0, 0.0, float(sx if sy is None else sy), 0.0, 0.0)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12, self.tx],
                         [self.a21, self.a22, self.ty],
                         [0.0, 0.0, 1.0]])

    @property
    def det(self) -> float:
        return self.a11 * self.a22 - self.a12 * self.a21

    @property
    def degenerate(self) -> bool:
        return abs(self.det) <= DET_EPS

    def as_tuple(self) -> tuple[float, ...]:
        return (self.a11, self.a12, self.a21, self.a22, self.tx, self.ty)

    def apply(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([self.a11 * x + self.a12 * y + self.tx,
                         self.a21 * x + self.a22 * y + self.ty], axis=-1)

    def inverse(self) -> "AffineParams":
        d = self.det
        if abs(d) <= DET_EPS:
            raise ValueError("degenerate affine has no inverse")
        b11, b12 = self.a22 / d, -self.a12 / d
        b21, b22 = -self.a21 / d, self.a11 / d
        return AffineParams(b11, b12, b21, b22,
                            -(b11 * self.tx + b12 * self.ty),
                            -(b21 * self.tx + b22 * self.ty))

    def then(self, other: "AffineParams") -> "AffineParams":
        """The map ``x -> other(self(x))``."""
        return AffineParams.from_matrix(other.matrix @ self.matrix)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_threshold: float = 1.5
    min_inliers: int = 8
    seed: int = 0
    # after the consensus refit, drop inliers beyond this many robust sigmas and refit (0: off)
    trim_sigmas: float = 3.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")
        if not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be > 0")
        if self.trim_sigmas < 0:
            raise ValueError("trim_sigmas must be >= 0")


def _lstsq_affine(src: np.ndarray, dst: np.ndarray) -> AffineParams:
    X = np.column_stack([src, np.ones(len(src))])
    sol, *_ = np.linalg.lstsq(X, dst, rcond=None)
    return AffineParams.from_matrix(np.vstack([sol.T, [0.0, 0.0, 1.0]]))


def fit_affine_ransac(query_pts, ref_pts, cfg: RansacConfig = RansacConfig()
                      ) -> tuple[AffineParams, np.ndarray]:
    """Robust fit of ``T`` with ``query ~= T(ref)``.

    Minimal 3-point samples, consensus by Euclidean residual under
    ``inlier_threshold``, then a least-squares refit over the winning inliers.
    Returns the model and the winning consensus set as a boolean mask.
    """
    dst = np.asarray(query_pts, dtype=np.float64).reshape(-1, 2)
    src = np.asarray(ref_pts, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n != len(dst):
        raise ValueError("point lists differ in length")
    if n < 3:
        raise NoModelError(f"need >= 3 correspondences, got {n}")
    rng = np.random.default_rng(cfg.seed)
    samples = np.stack([rng.choice(n, 3, replace=False) for _ in range(cfg.iterations)])
    S = src[samples]                                      # (I, 3, 2)
    X = np.concatenate([S, np.ones(S.shape[:2] + (1,))], axis=2)
    scale = max(1.0, float(np.ptp(src, axis=0).max()))
    dets = np.linalg.det(X)
    ok = np.abs(dets) > 1e-9 * scale * scale
    if not ok.any():
        raise NoModelError("every sampled triple is collinear")
    models = np.linalg.solve(X[ok], dst[samples[ok]])     # (I', 3, 2)
    x, y = src[:, 0][None, :], src[:, 1][None, :]
    px = models[:, 0, 0, None] * x + models[:, 1, 0, None] * y + models[:, 2, 0, None]
    py = models[:, 0, 1, None] * x + models[:, 1, 1, None] * y + models[:, 2, 1, None]
    resid = np.sqrt((px - dst[None, :, 0]) ** 2 + (py - dst[None, :, 1]) ** 2)
    inliers = resid < cfg.inlier_threshold
    counts = inliers.sum(axis=1)
    best = int(np.argmax(counts))
    mask = inliers[best]
    if counts[best] < min(cfg.min_inliers, n):
        raise NoModelError(f"best consensus {counts[best]} below {cfg.min_inliers}")
    model = _lstsq_affine(src[mask], dst[mask])
    if cfg.trim_sigmas > 0:
        model, mask = _trim(model, src, dst, mask, cfg, scale)
    if model.degenerate:
        raise NoModelError("refit model is degenerate")
    return model, mask


def _trim(model, src, dst, mask, cfg, scale):
    # outliers that fell inside the consensus band still pull the least-squares fit
    r = np.hypot(*(model.apply(src) - dst).T)
    sigma = 1.4826 * np.median(r[mask])
    bound = min(cfg.inlier_threshold, max(cfg.trim_sigmas * sigma, 1e-9 * scale))
    keep = mask & (r <= bound)
    if keep.sum() < max(3, cfg.min_inliers) or np.array_equal(keep, mask):
        return model, mask
    trimmed = _lstsq_affine(src[keep], dst[keep])
    return (model, mask) if trimmed.degenerate else (trimmed, keep)


def median_translation(query_pts, ref_pts) -> AffineParams:
    """Fallback model: the median correspondence offset, or identity."""
    dst = np.asarray(query_pts, dtype=np.float64).reshape(-1, 2)
    src = np.asarray(ref_pts, dtype=np.float64).reshape(-1, 2)
    if len(src) == 0:
        return AffineParams()
    d = np.median(dst - src, axis=0)
    if not np.all(np.isfinite(d)):
        return AffineParams()
    return AffineParams.translation(d[0], d[1])


def _bilinear(image: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.int64)
    fx = np.clip(sx - x0, 0.0, 1.0)
    fy = np.clip(sy - y0, 0.0, 1.0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    if image.ndim == 3:
        fx, fy = fx[..., None], fy[..., None]
    top = image[y0, x0] * (1 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1 - fx) + image[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def warp(image, params: AffineParams, out_shape: tuple[int, int] | None = None,
         order: int = 1):
    """Resample ``image`` onto the query grid; returns ``(warped, valid)``.

    ``order`` 1 is bilinear; 3 uses a cubic spline (scipy) for images whose
    high frequencies must survive.  Samples mapping outside the source are
    zero and flagged invalid.
    """
    if params.degenerate:
        raise ValueError("cannot warp with a degenerate affine")
    is_feat = isinstance(image, FeatureMap)
    data = image.data if is_feat else np.asarray(image, dtype=np.float64)
    h, w = data.shape[:2]
    oh, ow = out_shape if out_shape is not None else (h, w)
    inv = params.inverse()
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    sx = inv.a11 * xs + inv.a12 * ys + inv.tx
    sy = inv.a21 * xs + inv.a22 * ys + inv.ty
    eps = 1e-9
    valid = (sx >= -eps) & (sx <= w - 1 + eps) & (sy >= -eps) & (sy <= h - 1 + eps)
    if order not in (1, 3):
        raise ValueError(f"unsupported interpolation order {order}")
    ix, iy = np.rint(sx), np.rint(sy)
    if np.array_equal(ix, sx) and np.array_equal(iy, sy):
        # every sample sits on a source pixel: gather, so interpolation adds no rounding
        out = data[np.clip(iy, 0, h - 1).astype(np.intp), np.clip(ix, 0, w - 1).astype(np.intp)]
    elif order == 1:
        out = _bilinear(data, sx, sy)
    elif order == 3:
        coords = np.stack([sy, sx])
        if data.ndim == 2:
            out = ndimage.map_coordinates(data, coords, order=3, mode="nearest")
        else:
            out = np.stack([ndimage.map_coordinates(data[:, :, c], coords, order=3, mode="nearest")
                            for c in range(data.shape[2])], axis=2)
    vmask = valid if out.ndim == 2 else valid[..., None]
    out = np.where(vmask, out, 0.0)
    if is_feat:
        return FeatureMap(out, image.source), valid
    return out, valid


def refine_affine(template: np.ndarray, image: np.ndarray, params: AffineParams,
                  iterations: int = 30, weights: np.ndarray | None = None,
                  smooth: float = 0.7) -> tuple[AffineParams, float]:
    """Gauss-Newton polish of ``params`` (image -> template coords) on intensities.

    Fits an affine warp plus gain and bias so that the warped ``image`` matches
    ``template`` in the weighted least-squares sense.  Returns the refined
    model and the final weighted correlation.
    """
    tpl = ndimage.gaussian_filter(np.asarray(template, dtype=np.float64), smooth)
    img = ndimage.gaussian_filter(np.asarray(image, dtype=np.float64), smooth)
    gy_img, gx_img = np.gradient(img)
    h, w = tpl.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs, ys, tv = xs.ravel(), ys.ravel(), tpl.ravel()
    base_w = np.ones_like(tv) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    B = params.inverse().matrix[:2].copy()  # template -> image
    H_img, W_img = img.shape

    def sample(B):
        sx = B[0, 0] * xs + B[0, 1] * ys + B[0, 2]
        sy = B[1, 0] * xs + B[1, 1] * ys + B[1, 2]
        valid = (sx >= 0) & (sx <= W_img - 1) & (sy >= 0) & (sy <= H_img - 1)
        return sx, sy, valid

    def corr(B):
        sx, sy, valid = sample(B)
        wv = base_w * valid
        if wv.sum() < 6:
            return -1.0
        iw = _bilinear(img, sx, sy)
        a = tv - np.average(tv, weights=wv)
        b = iw - np.average(iw, weights=wv)
        den = np.sqrt(np.sum(wv * a * a) * np.sum(wv * b * b))
        return float(np.sum(wv * a * b) / den) if den > 0 else 0.0

    gain, bias = 1.0, 0.0
    for it in range(iterations):
        sx, sy, valid = sample(B)
        wv = base_w * valid
        if wv.sum() < 12:
            break
        iw = _bilinear(img, sx, sy)
        if it == 0:
            A = np.column_stack([tv, np.ones_like(tv)]) * np.sqrt(wv)[:, None]
            (gain, bias), *_ = np.linalg.lstsq(A, iw * np.sqrt(wv), rcond=None)
        gx = _bilinear(gx_img, sx, sy)
        gy = _bilinear(gy_img, sx, sy)
        r = iw - gain * tv - bias
        J = np.column_stack([gx * xs, gx * ys, gx, gy * xs, gy * ys, gy, -tv, -np.ones_like(tv)])
        Jw = J * wv[:, None]
        Hm = J.T @ Jw + 1e-9 * np.eye(8)
        delta = -np.linalg.solve(Hm, Jw.T @ r)
        B[0] += delta[0:3]
        B[1] += delta[3:6]
        gain += delta[6]
        bias += delta[7]
        corners = np.array([[0, 0, 1], [w - 1, 0, 1], [0, h - 1, 1], [w - 1, h - 1, 1]], float)
        if np.abs(corners @ np.vstack([delta[0:3], delta[3:6]]).T).max() < 1e-4:
            break
    full = np.vstack([B, [0.0, 0.0, 1.0]])
    if abs(np.linalg.det(full)) <= DET_EPS or not np.all(np.isfinite(full)):
        return params, corr(params.inverse().matrix[:2])
    refined = AffineParams.from_matrix(np.linalg.inv(full))
    return refined, corr(B)
