"""Inner voting kernels for the depth sweep.

Each event's viewing ray, expressed in the reference view, projects onto
plane ``z`` at pixel coordinates that are affine in inverse depth:

    u(z) = a_u + b_u / z,    v(z) = a_v + b_v / z

with per-event coefficients precomputed from the ray origin and direction.
Planes behind the ray origin are excluded up front: because the planes are
depth-sorted, the forward planes form one contiguous index range [lo, hi)
per event. The kernels scatter one vote per valid (event, plane) pair into
a ``(num_planes, height, width)`` array and return how many events missed
every plane; an intersection must land inside [0, W) x [0, H), and the
nearest voxel must exist (the top half-pixel edge rounds out of the grid).

Two interchangeable implementations: numba-compiled loops (fast path) and
batched numpy (fallback). Nearest-mode votes are integral adds, so both
produce bit-identical grids; bilinear differs only in summation order.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


_NUMPY_BATCH = 32768


def _sweep_nearest_loops(a_u, a_v, b_u, b_v, lo, hi, inv_zs, votes, width, height):
    n_events = a_u.shape[0]
    skipped = 0
    for k in range(n_events):
        hits = 0
        for i in range(lo[k], hi[k]):
            u = a_u[k] + b_u[k] * inv_zs[i]
            v = a_v[k] + b_v[k] * inv_zs[i]
            if 0.0 <= u < width and 0.0 <= v < height:
                ix = int(np.floor(u + 0.5))
                iy = int(np.floor(v + 0.5))
                if ix < width and iy < height:
                    votes[i, iy, ix] += 1.0
                    hits += 1
        if hits == 0:
            skipped += 1
    return skipped


def _sweep_bilinear_loops(a_u, a_v, b_u, b_v, lo, hi, inv_zs, votes, width, height):
    n_events = a_u.shape[0]
    skipped = 0
    for k in range(n_events):
        hits = 0
        for i in range(lo[k], hi[k]):
            u = a_u[k] + b_u[k] * inv_zs[i]
            v = a_v[k] + b_v[k] * inv_zs[i]
            if 0.0 <= u < width and 0.0 <= v < height:
                x0 = int(np.floor(u))
                y0 = int(np.floor(v))
                wx = u - x0
                wy = v - y0
                votes[i, y0, x0] += (1.0 - wx) * (1.0 - wy)
                if x0 + 1 < width:
                    votes[i, y0, x0 + 1] += wx * (1.0 - wy)
                if y0 + 1 < height:
                    votes[i, y0 + 1, x0] += (1.0 - wx) * wy
                    if x0 + 1 < width:
                        votes[i, y0 + 1, x0 + 1] += wx * wy
                hits += 1
        if hits == 0:
            skipped += 1
    return skipped


if HAVE_NUMBA:
    _sweep_nearest_numba = njit(cache=True, nogil=True)(_sweep_nearest_loops)
    _sweep_bilinear_numba = njit(cache=True, nogil=True)(_sweep_bilinear_loops)


def _sweep_numpy(a_u, a_v, b_u, b_v, lo, hi, inv_zs, votes, width, height, bilinear):
    n_events = a_u.shape[0]
    n_planes = inv_zs.shape[0]
    n_voxels = votes.size
    flat = votes.reshape(-1)
    planes = np.arange(n_planes, dtype=np.int64)[None, :]
    plane_base = planes * (width * height)
    skipped = 0
    for s in range(0, n_events, _NUMPY_BATCH):
        e = min(s + _NUMPY_BATCH, n_events)
        with np.errstate(invalid="ignore", over="ignore"):
            u = a_u[s:e, None] + b_u[s:e, None] * inv_zs[None, :]
            v = a_v[s:e, None] + b_v[s:e, None] * inv_zs[None, :]
            ok = (planes >= lo[s:e, None]) & (planes < hi[s:e, None])
            ok &= (u >= 0.0) & (u < width) & (v >= 0.0) & (v < height)
        u = np.where(ok, u, 0.0)
        v = np.where(ok, v, 0.0)
        if bilinear:
            x0 = np.floor(u)
            y0 = np.floor(v)
            wx = u - x0
            wy = v - y0
            x0 = x0.astype(np.int64)
            y0 = y0.astype(np.int64)
            base = plane_base + y0 * width + x0
            corners = (
                (base, (1.0 - wx) * (1.0 - wy), ok),
                (base + 1, wx * (1.0 - wy), ok & (x0 + 1 < width)),
                (base + width, (1.0 - wx) * wy, ok & (y0 + 1 < height)),
                (base + width + 1, wx * wy, ok & (x0 + 1 < width) & (y0 + 1 < height)),
            )
            for idx, w, sel in corners:
                flat += np.bincount(idx[sel], weights=w[sel], minlength=n_voxels)
            hits = ok.sum(axis=1)
        else:
            ix = np.floor(u + 0.5).astype(np.int64)
            iy = np.floor(v + 0.5).astype(np.int64)
            ok &= (ix < width) & (iy < height)
            idx = plane_base + iy * width + ix
            flat += np.bincount(idx[ok], minlength=n_voxels).astype(np.float64)
            hits = ok.sum(axis=1)
        skipped += int(np.count_nonzero(hits == 0))
    return skipped


def sweep_direct(origins, dirs, lo, hi, zs, intr, votes, width, height, bilinear):
    """Vote near-grazing rays by direct per-plane intersection.

    The affine u = a + b/z form cancels catastrophically when the ray runs
    nearly parallel to the planes (|a|, |b/z| >> |u|); evaluating the
    intersection point explicitly stays well conditioned. Vectorized numpy;
    only the rare ill-conditioned events take this route.
    """
    fx, fy, cx, cy = intr
    n_events = origins.shape[0]
    n_planes = zs.shape[0]
    flat = votes.reshape(-1)
    planes = np.arange(n_planes, dtype=np.int64)[None, :]
    plane_base = planes * (width * height)
    skipped = 0
    for s in range(0, n_events, _NUMPY_BATCH):
        e = min(s + _NUMPY_BATCH, n_events)
        o = origins[s:e]
        d = dirs[s:e]
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            lam = (zs[None, :] - o[:, 2:3]) / d[:, 2:3]
            u = fx * (o[:, 0:1] + lam * d[:, 0:1]) / zs[None, :] + cx
            v = fy * (o[:, 1:2] + lam * d[:, 1:2]) / zs[None, :] + cy
            ok = (planes >= lo[s:e, None]) & (planes < hi[s:e, None])
            ok &= (u >= 0.0) & (u < width) & (v >= 0.0) & (v < height)
        u = np.where(ok, u, 0.0)
        v = np.where(ok, v, 0.0)
        if bilinear:
            x0 = np.floor(u)
            y0 = np.floor(v)
            wx = u - x0
            wy = v - y0
            x0 = x0.astype(np.int64)
            y0 = y0.astype(np.int64)
            base = plane_base + y0 * width + x0
            corners = (
                (base, (1.0 - wx) * (1.0 - wy), ok),
                (base + 1, wx * (1.0 - wy), ok & (x0 + 1 < width)),
                (base + width, (1.0 - wx) * wy, ok & (y0 + 1 < height)),
                (base + width + 1, wx * wy, ok & (x0 + 1 < width) & (y0 + 1 < height)),
            )
            for idx, w, sel in corners:
                flat += np.bincount(idx[sel], weights=w[sel], minlength=votes.size)
            hits = ok.sum(axis=1)
        else:
            ix = np.floor(u + 0.5).astype(np.int64)
            iy = np.floor(v + 0.5).astype(np.int64)
            ok &= (ix < width) & (iy < height)
            idx = plane_base + iy * width + ix
            flat += np.bincount(idx[ok], minlength=votes.size).astype(np.float64)
            hits = ok.sum(axis=1)
        skipped += int(np.count_nonzero(hits == 0))
    return skipped


def run_sweep(prep, inv_zs, votes, width, height, mode, kernel):
    """Dispatch a prepared event batch to the selected kernel.

    ``prep`` is the (a_u, a_v, b_u, b_v, lo, hi) tuple of affine-form
    coefficients; returns the number of events that missed every plane.
    """
    a_u, a_v, b_u, b_v, lo, hi = prep
    if kernel == "auto":
        kernel = "numba" if HAVE_NUMBA else "numpy"
    if kernel == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba kernel requested but numba is unavailable")
        fn = _sweep_bilinear_numba if mode == "bilinear" else _sweep_nearest_numba
        return int(fn(a_u, a_v, b_u, b_v, lo, hi, inv_zs, votes, width, height))
    if kernel == "numpy":
        return _sweep_numpy(
            a_u, a_v, b_u, b_v, lo, hi, inv_zs, votes, width, height,
            bilinear=(mode == "bilinear"),
        )
    raise ValueError(f"unknown kernel {kernel!r}")
