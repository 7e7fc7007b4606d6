"""Depth / confidence extraction from a fused DSI and the semi-dense
post-processing chain (adaptive threshold, median cleanup, sub-plane
refinement, point-cloud export).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter

from .dsi import DsiGrid
from .geometry import CameraModel, Se3


@dataclass(eq=False)
class DepthResult:
    """Semi-dense depth and confidence maps at the reference view.

    ``depth`` holds the best-plane depth for every pixel; only entries
    where ``mask`` is set are meaningful. ``confidence`` is the raw peak
    ray density (vote units).
    """

    depth: np.ndarray
    confidence: np.ndarray
    mask: np.ndarray
    ref_pose: Se3
    ref_intrinsics: CameraModel
    z_min: float
    z_max: float

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.mask))

    def normalized_confidence(self) -> np.ndarray:
        """Confidence scaled to [0, 1] by the map's maximum."""
        peak = float(self.confidence.max()) if self.confidence.size else 0.0
        if peak <= 0.0:
            return np.zeros_like(self.confidence)
        return self.confidence / peak

    def masked_depth(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.mask, self.depth, fill)


def extract_depth(fused: DsiGrid) -> DepthResult:
    """Per pixel, take the depth plane with the highest fused ray density.

    Ties break toward the nearest plane (smallest index). Pixels whose
    whole column is zero are left unmasked.
    """
    best = np.argmax(fused.votes, axis=0)  # first max -> nearest plane
    confidence = np.take_along_axis(fused.votes, best[None], axis=0)[0]
    return DepthResult(
        depth=fused.depths[best],
        confidence=confidence,
        mask=confidence > 0.0,
        ref_pose=fused.ref_pose,
        ref_intrinsics=fused.ref_intrinsics,
        z_min=fused.z_min,
        z_max=fused.z_max,
    )


def _parabola_vertex(x1, y1, x2, y2, x3, y3):
    """Vertex abscissa of the parabola through three points; x2 where the
    fit degenerates (collinear / flat)."""
    d21 = x2 - x1
    d23 = x2 - x3
    num = d21 * d21 * (y2 - y3) - d23 * d23 * (y2 - y1)
    den = d21 * (y2 - y3) - d23 * (y2 - y1)
    with np.errstate(invalid="ignore", divide="ignore"):
        vertex = x2 - 0.5 * num / den
    return np.where(den != 0.0, vertex, x2)


def subvoxel_refine(column, i_star: int, inv_depths) -> float:
    """Refined inverse depth for one DSI column around its peak ``i_star``.

    Interior peaks are refined by the vertex of the parabola through the
    three (inverse depth, votes) samples, clamped to the bracketing plane
    interval; boundary or degenerate peaks stay at the sampled plane.
    """
    column = np.asarray(column, dtype=np.float64)
    inv_depths = np.asarray(inv_depths, dtype=np.float64)
    n = len(column)
    if i_star <= 0 or i_star >= n - 1:
        return float(inv_depths[i_star])
    x1, x2, x3 = inv_depths[i_star - 1], inv_depths[i_star], inv_depths[i_star + 1]
    v = _parabola_vertex(
        x1, column[i_star - 1], x2, column[i_star], x3, column[i_star + 1]
    )
    return float(np.clip(v, min(x1, x3), max(x1, x3)))


def refine_result(fused: DsiGrid, result: DepthResult) -> DepthResult:
    """Sub-plane refinement of every masked pixel of ``result``.

    Each pixel is refined around the plane nearest its current depth (the
    argmax plane when extraction output is passed straight through; the
    consensus plane after median filtering). Only interior planes that are
    local vote maxima are refined; anything else keeps its depth.
    """
    inv = fused.inv_depths  # decreasing with plane index
    with np.errstate(divide="ignore"):
        cur = np.where(result.mask, 1.0 / result.depth, inv[0])
    best = np.argmin(np.abs(inv[:, None, None] - cur[None]), axis=0)
    interior = result.mask & (best > 0) & (best < fused.num_planes - 1)
    if not interior.any():
        return replace(result, depth=result.depth.copy())

    iy, ix = np.nonzero(interior)
    i = best[iy, ix]
    y1 = fused.votes[i - 1, iy, ix]
    y2 = fused.votes[i, iy, ix]
    y3 = fused.votes[i + 1, iy, ix]
    peak = (y2 >= y1) & (y2 >= y3)
    x1 = inv[i - 1]
    x2 = inv[i]
    x3 = inv[i + 1]
    vertex = _parabola_vertex(x1, y1, x2, y2, x3, y3)
    vertex = np.clip(vertex, np.minimum(x1, x3), np.maximum(x1, x3))

    depth = result.depth.copy()
    refined = np.where(peak, 1.0 / vertex, depth[iy, ix])
    depth[iy, ix] = refined
    return replace(result, depth=depth)


def adaptive_threshold(confidence, sigma: float, offset: float) -> np.ndarray:
    """Keep pixels whose confidence tops a Gaussian-blurred background.

    mask = c > blur(c, sigma) + offset, restricted to c > 0 so that empty
    pixels can never pass on a negative offset. Reflective borders.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    confidence = np.asarray(confidence, dtype=np.float64)
    background = gaussian_filter(confidence, sigma=sigma, mode="reflect")
    return (confidence > background + offset) & (confidence > 0.0)


def local_peak_mask(confidence, radius: int = 1) -> np.ndarray:
    """Keep pixels that are maxima of their (2r+1)^2 neighborhood.

    Depth is only trustworthy where the ray bundle actually converges; a
    pixel beaten by a neighbor carries that neighbor's ridge, sampled off
    center. Plateaus are kept whole. Zero-confidence pixels never pass.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    confidence = np.asarray(confidence, dtype=np.float64)
    peak = confidence == maximum_filter(confidence, size=2 * radius + 1)
    return peak & (confidence > 0.0)


def median_filter_depth(result: DepthResult, kernel: int) -> DepthResult:
    """Median-smooth masked depths over a k x k neighborhood.

    Each masked pixel's depth becomes the median of the masked depths in
    its neighborhood (truncated at borders); pixels supported by fewer
    than 3 masked neighbors are unmasked. The mask never grows.
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    if kernel == 1 or not result.mask.any():
        return replace(result, depth=result.depth.copy(), mask=result.mask.copy())

    pad = kernel // 2
    padded = np.pad(
        np.where(result.mask, result.depth, np.nan),
        pad, mode="constant", constant_values=np.nan,
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel))
    windows = windows.reshape(*result.depth.shape, -1)
    support = np.count_nonzero(~np.isnan(windows), axis=-1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        medians = np.nanmedian(windows, axis=-1)

    keep = result.mask & (support >= 3)
    depth = result.depth.copy()
    depth[keep] = medians[keep]
    return replace(result, depth=depth, mask=keep)


def to_point_cloud(result: DepthResult):
    """Back-project masked pixels into world-frame points.

    Returns ``(points (N, 3), confidence (N,))`` in row-major pixel order.
    """
    iy, ix = np.nonzero(result.mask)
    z = result.depth[iy, ix]
    k = result.ref_intrinsics
    pts_ref = np.stack(
        [(ix - k.cx) / k.fx * z, (iy - k.cy) / k.fy * z, z], axis=-1
    )
    return result.ref_pose.apply(pts_ref), result.confidence[iy, ix]
