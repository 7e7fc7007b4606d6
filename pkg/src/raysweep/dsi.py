"""Ray-density volumes (DSIs) anchored at a shared reference view, the
voting engine that fills them, and the element-wise fusion operators.

A DSI counts, per reference-view pixel and depth plane, how many event
rays pass through that voxel. Depth planes are sampled uniformly in
inverse depth so disparity resolution is constant across the range.
"""

from __future__ import annotations

import dataclasses
import math
import os
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _sweep
from .errors import InvalidDepthRange, MisalignedDsi
from .events import Event, EventStream
from .geometry import (
    CameraModel,
    PoseTrajectory,
    Se3,
    intersect_ray_with_depth_plane,
    quat_conjugate,
    quat_mul,
    quat_rotate,
    relative_pose,
)

VOTING_MODES = ("nearest", "bilinear")

# Above this coefficient magnitude the affine sweep form loses more than
# ~1e-13 px to cancellation; such rays are intersected directly instead.
_AFFINE_COND_BOUND = 1e3

_RayPrep = namedtuple(
    "_RayPrep",
    ["a_u", "a_v", "b_u", "b_v", "lo", "hi", "origins", "dirs", "affine_ok"],
)


def inverse_depth_samples(z_min: float, z_max: float, num_planes: int) -> np.ndarray:
    """Inverse depths, uniformly spaced from 1/z_min down to 1/z_max."""
    if not (0.0 < z_min < z_max) or num_planes < 2:
        raise InvalidDepthRange(
            f"need 0 < z_min < z_max and num_planes >= 2, got "
            f"({z_min}, {z_max}, {num_planes})"
        )
    return np.linspace(1.0 / z_min, 1.0 / z_max, num_planes)


def plane_depths(z_min: float, z_max: float, num_planes: int) -> np.ndarray:
    """Depth-plane positions: uniform in inverse depth, endpoints exact."""
    zs = 1.0 / inverse_depth_samples(z_min, z_max, num_planes)
    zs[0] = z_min
    zs[-1] = z_max
    return zs


def resolve_workers(workers: int | None = None) -> int:
    """Effective worker count; RAYSWEEP_THREADS caps it (0 = auto)."""
    env = os.environ.get("RAYSWEEP_THREADS", "0")
    try:
        cap = int(env)
    except ValueError:
        raise ValueError(f"RAYSWEEP_THREADS must be an integer, got {env!r}")
    if cap < 0:
        raise ValueError("RAYSWEEP_THREADS must be >= 0")
    if workers is None:
        workers = cap
    if workers < 0:
        raise ValueError("worker count must be >= 0")
    if workers == 0:
        workers = os.cpu_count() or 1
    if cap > 0:
        workers = min(workers, cap)
    return workers


# ---------------------------------------------------------------------------
# grid

@dataclass(eq=False)
class DsiGrid:
    """W x H x Nz nonnegative ray-density volume at a reference view.

    ``votes`` is stored as (num_planes, height, width); the reference view
    is an ideal (distortion-free) pinhole at the left camera's intrinsics.
    """

    width: int
    height: int
    z_min: float
    z_max: float
    inv_depths: np.ndarray
    depths: np.ndarray
    ref_pose: Se3
    ref_intrinsics: CameraModel
    votes: np.ndarray
    skipped_events: int = 0

    @classmethod
    def create(
        cls,
        ref_pose: Se3,
        ref_intrinsics: CameraModel,
        z_min: float,
        z_max: float,
        num_planes: int,
        width: int | None = None,
        height: int | None = None,
    ) -> "DsiGrid":
        width = int(width if width is not None else ref_intrinsics.width)
        height = int(height if height is not None else ref_intrinsics.height)
        if ref_intrinsics.has_distortion or width != ref_intrinsics.width \
                or height != ref_intrinsics.height:
            ref_intrinsics = dataclasses.replace(
                ref_intrinsics, dist=np.zeros(4), width=width, height=height
            )
        inv = inverse_depth_samples(z_min, z_max, num_planes)
        zs = 1.0 / inv
        zs[0] = z_min
        zs[-1] = z_max
        return cls(
            width=width,
            height=height,
            z_min=float(z_min),
            z_max=float(z_max),
            inv_depths=inv,
            depths=zs,
            ref_pose=ref_pose,
            ref_intrinsics=ref_intrinsics,
            votes=np.zeros((num_planes, height, width)),
        )

    @property
    def num_planes(self) -> int:
        return len(self.inv_depths)

    @property
    def inv_depth_spacing(self) -> float:
        """Constant spacing of the inverse-depth sampling (positive)."""
        return float((self.inv_depths[0] - self.inv_depths[-1]) / (self.num_planes - 1))

    def copy_empty(self) -> "DsiGrid":
        return dataclasses.replace(
            self, votes=np.zeros_like(self.votes), skipped_events=0
        )

    def copy(self) -> "DsiGrid":
        return dataclasses.replace(self, votes=self.votes.copy())

    def total_votes(self) -> float:
        return float(self.votes.sum())


def _check_aligned(grids):
    ref = grids[0]
    for g in grids[1:]:
        same = (
            g.width == ref.width
            and g.height == ref.height
            and g.num_planes == ref.num_planes
            and np.array_equal(g.inv_depths, ref.inv_depths)
            and np.array_equal(g.ref_pose.quat, ref.ref_pose.quat)
            and np.array_equal(g.ref_pose.trans, ref.ref_pose.trans)
            and (g.ref_intrinsics.fx, g.ref_intrinsics.fy,
                 g.ref_intrinsics.cx, g.ref_intrinsics.cy)
            == (ref.ref_intrinsics.fx, ref.ref_intrinsics.fy,
                ref.ref_intrinsics.cx, ref.ref_intrinsics.cy)
        )
        if not same:
            raise MisalignedDsi("grids differ in shape, sampling, or reference view")


# ---------------------------------------------------------------------------
# voting

def _camera_poses_at(events: EventStream, cam: CameraModel, traj: PoseTrajectory,
                     pose_batch_s: float = 0.0):
    """Per-event world-from-camera poses as (quats (N,4), trans (N,3)).

    With ``pose_batch_s`` > 0, events are binned to that time quantum and
    share the pose interpolated at their bin center (throughput mode).
    """
    ts = events.t
    if pose_batch_s > 0.0 and len(ts):
        bins = np.floor(ts / pose_batch_s)
        centers = (bins + 0.5) * pose_batch_s
        ts = np.clip(centers, traj.t_start, traj.t_end)
    q_wb, t_wb = traj.interpolate_batch(ts)
    q_bc = cam.T_body_cam.quat
    t_bc = cam.T_body_cam.trans
    q_wc = quat_mul(q_wb, np.broadcast_to(q_bc, q_wb.shape))
    t_wc = t_wb + quat_rotate(q_wb, np.broadcast_to(t_bc, t_wb.shape))
    return q_wc, t_wc


def _prepare_rays(grid: DsiGrid, events: EventStream, cam: CameraModel,
                  q_wc: np.ndarray, t_wc: np.ndarray) -> "_RayPrep":
    """Per-event sweep coefficients and ray geometry.

    The ray is expressed in the reference frame: origin = camera center,
    direction = rotated undistorted bearing (u, v, 1). Projection onto
    plane z is then affine in 1/z, and the planes in front of the ray
    origin (lam > 0) form the contiguous index range [lo, hi).
    """
    # Undistort each distinct pixel once; streams revisit pixels heavily.
    code = events.y.astype(np.int64) * cam.width + events.x.astype(np.int64)
    uniq, inverse = np.unique(code, return_inverse=True)
    upix = np.stack([uniq % cam.width, uniq // cam.width], axis=-1).astype(np.float64)
    bearing = cam.undistort_pixels(upix)[inverse]
    dirs_cam = np.concatenate([bearing, np.ones((len(events), 1))], axis=-1)

    q_ref_inv = quat_conjugate(grid.ref_pose.quat)
    q_rv_cam = quat_mul(np.broadcast_to(q_ref_inv, q_wc.shape), q_wc)
    origins = quat_rotate(q_ref_inv, t_wc - grid.ref_pose.trans)
    dirs = quat_rotate(q_rv_cam, dirs_cam)

    k = grid.ref_intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        dxz = dirs[:, 0] / dirs[:, 2]
        dyz = dirs[:, 1] / dirs[:, 2]
        a_u = k.fx * dxz + k.cx
        a_v = k.fy * dyz + k.cy
        b_u = k.fx * (origins[:, 0] - origins[:, 2] * dxz)
        b_v = k.fy * (origins[:, 1] - origins[:, 2] * dyz)

    o_z = origins[:, 2]
    d_z = dirs[:, 2]
    n = len(events)
    nz = grid.num_planes
    lo = np.zeros(n, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    fwd = d_z > 0.0
    bwd = d_z < 0.0
    # lam = (z_i - o_z) / d_z > 0: planes strictly beyond the origin along
    # the ray; zs is sorted ascending, so the set is one index interval.
    lo[fwd] = np.searchsorted(grid.depths, o_z[fwd], side="right")
    hi[fwd] = nz
    hi[bwd] = np.searchsorted(grid.depths, o_z[bwd], side="left")

    # The affine u = a + b/z form cancels badly for near-grazing rays; flag
    # events whose coefficients dwarf the pixel range for direct evaluation.
    inv_max = float(grid.inv_depths[0])
    with np.errstate(invalid="ignore", over="ignore"):
        scale = np.maximum(
            np.maximum(np.abs(a_u), np.abs(a_v)),
            np.maximum(np.abs(b_u), np.abs(b_v)) * inv_max,
        )
    affine_ok = scale < _AFFINE_COND_BOUND  # False also for NaN/inf
    return _RayPrep(a_u, a_v, b_u, b_v, lo, hi, origins, dirs, affine_ok)


def vote_events(
    grid: DsiGrid,
    events: EventStream,
    cam: CameraModel,
    *,
    traj: PoseTrajectory | None = None,
    pose: Se3 | None = None,
    mode: str = "bilinear",
    kernel: str = "auto",
    workers: int = 1,
    pose_batch_s: float = 0.0,
) -> DsiGrid:
    """Back-project a stream slice into ``grid`` (accumulates in place).

    Camera poses come either from ``traj`` (per-event interpolation) or a
    single fixed ``pose``. With ``workers`` > 1 the events are split into
    contiguous blocks voted into private grids and merged in block order,
    which reproduces the single-worker result (exactly for nearest mode).
    """
    if mode not in VOTING_MODES:
        raise ValueError(f"unknown voting mode {mode!r}")
    if (traj is None) == (pose is None):
        raise ValueError("pass exactly one of traj= or pose=")
    if len(events) == 0:
        return grid

    if traj is not None:
        q_wc, t_wc = _camera_poses_at(events, cam, traj, pose_batch_s)
    else:
        q_wc = np.broadcast_to(pose.quat, (len(events), 4))
        t_wc = np.broadcast_to(pose.trans, (len(events), 3))
    prep = _prepare_rays(grid, events, cam, q_wc, t_wc)

    workers = max(1, min(workers, len(events)))
    if workers == 1:
        grid.skipped_events += _vote_block(grid, prep, slice(None), mode, kernel,
                                           grid.votes)
        return grid

    splits = np.array_split(np.arange(len(events)), workers)
    parts = [np.zeros_like(grid.votes) for _ in splits]

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_vote_block, grid, prep, blk, mode, kernel, out)
            for blk, out in zip(splits, parts)
        ]
        skipped = [f.result() for f in futures]
    for part in parts:  # merge in block order for determinism
        grid.votes += part
    grid.skipped_events += sum(skipped)
    return grid


def _vote_block(grid: DsiGrid, prep: _RayPrep, block, mode: str, kernel: str,
                votes: np.ndarray) -> int:
    """Vote one contiguous event block into ``votes``; returns skip count.

    Well-conditioned rays take the affine-form kernel; near-grazing ones
    are intersected plane by plane.
    """
    sub = _RayPrep(*(a[block] for a in prep))
    skipped = 0
    affine = np.nonzero(sub.affine_ok)[0]
    graze = np.nonzero(~sub.affine_ok)[0]
    if affine.size:
        coeffs = (sub.a_u[affine], sub.a_v[affine], sub.b_u[affine],
                  sub.b_v[affine], sub.lo[affine], sub.hi[affine])
        skipped += _sweep.run_sweep(
            coeffs, grid.inv_depths, votes, grid.width, grid.height, mode, kernel,
        )
    if graze.size:
        k = grid.ref_intrinsics
        skipped += _sweep.sweep_direct(
            sub.origins[graze], sub.dirs[graze], sub.lo[graze], sub.hi[graze],
            grid.depths, (k.fx, k.fy, k.cx, k.cy), votes,
            grid.width, grid.height, bilinear=(mode == "bilinear"),
        )
    return skipped


def vote_event(grid: DsiGrid, event: Event, cam: CameraModel, T_w_cam: Se3,
               mode: str = "bilinear", kernel: str = "auto") -> DsiGrid:
    """Vote a single event whose camera sits at ``T_w_cam``."""
    stream = EventStream.from_events("single", [event])
    return vote_events(grid, stream, cam, pose=T_w_cam, mode=mode, kernel=kernel)


def vote_event_bruteforce(grid: DsiGrid, event: Event, cam: CameraModel,
                          T_w_cam: Se3, mode: str = "bilinear") -> DsiGrid:
    """Reference voter: explicit per-plane ray intersection and projection.

    Shares no sweep math with vote_event (ray built via rotation matrix and
    normalized direction; every plane intersected and projected from the 3D
    point). Used as the differential-testing oracle.
    """
    if mode not in VOTING_MODES:
        raise ValueError(f"unknown voting mode {mode!r}")
    u0, v0 = cam.undistort_pixel((float(event.x), float(event.y)))
    T_rv_cam = relative_pose(grid.ref_pose, T_w_cam)
    d = T_rv_cam.rotation_matrix() @ np.array([u0, v0, 1.0])
    d = d / np.linalg.norm(d)
    origin = T_rv_cam.trans
    k = grid.ref_intrinsics

    hits = 0
    for i in range(grid.num_planes):
        z = float(grid.depths[i])
        pt = intersect_ray_with_depth_plane(origin, d, z)
        if pt is None:
            continue
        u = k.fx * pt[0] / z + k.cx
        v = k.fy * pt[1] / z + k.cy
        if not (0.0 <= u < grid.width and 0.0 <= v < grid.height):
            continue
        if mode == "nearest":
            ix = int(math.floor(u + 0.5))
            iy = int(math.floor(v + 0.5))
            if ix < grid.width and iy < grid.height:
                grid.votes[i, iy, ix] += 1.0
                hits += 1
        else:
            x0 = int(math.floor(u))
            y0 = int(math.floor(v))
            wx = u - x0
            wy = v - y0
            grid.votes[i, y0, x0] += (1.0 - wx) * (1.0 - wy)
            if x0 + 1 < grid.width:
                grid.votes[i, y0, x0 + 1] += wx * (1.0 - wy)
            if y0 + 1 < grid.height:
                grid.votes[i, y0 + 1, x0] += (1.0 - wx) * wy
                if x0 + 1 < grid.width:
                    grid.votes[i, y0 + 1, x0 + 1] += wx * wy
            hits += 1
    if hits == 0:
        grid.skipped_events += 1
    return grid


def merge_partial_grids(parts) -> DsiGrid:
    """Sum aligned partial grids from disjoint event partitions."""
    parts = list(parts)
    if not parts:
        raise ValueError("need at least one grid")
    _check_aligned(parts)
    out = parts[0].copy()
    for p in parts[1:]:
        out.votes += p.votes
        out.skipped_events += p.skipped_events
    return out


# ---------------------------------------------------------------------------
# fusion

_FUSION_KINDS = ("min", "harmonic", "geometric", "arithmetic", "rms", "max", "power")


@dataclass(frozen=True)
class FusionOp:
    """Element-wise n-ary mean used to fuse aligned per-camera DSIs.

    ``power`` is the generalized (power) mean with exponent ``p``; p = -1,
    1, 2 coincide with harmonic, arithmetic, and rms, and p = 0 with the
    geometric mean. Harmonic, geometric, min, and power means with p <= 0
    return 0 wherever any input voxel is 0 (AND logic): a fused voxel is
    high only when every camera saw high ray density there.
    """

    kind: str
    p: float | None = None

    def __post_init__(self):
        if self.kind not in _FUSION_KINDS:
            raise ValueError(f"unknown fusion kind {self.kind!r}")
        if self.kind == "power" and self.p is None:
            raise ValueError("power mean needs an exponent p")

    @classmethod
    def from_string(cls, spec: str) -> "FusionOp":
        spec = spec.strip().lower()
        if spec.startswith("power:"):
            return cls("power", float(spec.split(":", 1)[1]))
        return cls(spec)

    def __str__(self):
        return f"power:{self.p:g}" if self.kind == "power" else self.kind

    def apply(self, stack: np.ndarray) -> np.ndarray:
        """Fuse along axis 0 of ``stack`` (n_grids, ...); inputs >= 0."""
        n = stack.shape[0]
        if self.kind == "min":
            return np.min(stack, axis=0)
        if self.kind == "max":
            return np.max(stack, axis=0)
        if self.kind == "arithmetic":
            return np.mean(stack, axis=0)
        if self.kind == "rms":
            return np.sqrt(np.mean(np.square(stack), axis=0))

        all_pos = np.all(stack > 0.0, axis=0)
        if self.kind == "harmonic":
            with np.errstate(divide="ignore"):
                inv_sum = np.sum(1.0 / np.where(stack > 0.0, stack, 1.0), axis=0)
            return np.where(all_pos, n / inv_sum, 0.0)
        if self.kind == "geometric":
            logs = np.sum(np.log(np.where(stack > 0.0, stack, 1.0)), axis=0)
            return np.where(all_pos, np.exp(logs / n), 0.0)

        p = float(self.p)
        if abs(p) < 1e-4:  # x**p degenerates numerically; use the p->0 limit
            return FusionOp("geometric").apply(stack)
        if p > 0.0:
            return np.power(np.mean(np.power(stack, p), axis=0), 1.0 / p)
        powered = np.mean(np.power(np.where(stack > 0.0, stack, 1.0), p), axis=0)
        return np.where(all_pos, np.power(powered, 1.0 / p), 0.0)


MIN = FusionOp("min")
HARMONIC = FusionOp("harmonic")
GEOMETRIC = FusionOp("geometric")
ARITHMETIC = FusionOp("arithmetic")
RMS = FusionOp("rms")
MAX = FusionOp("max")


def fuse(grids, op: FusionOp) -> DsiGrid:
    """Fuse n >= 2 aligned per-camera DSIs into one, voxel-wise."""
    grids = list(grids)
    if len(grids) < 2:
        raise ValueError("fusion needs at least two grids")
    _check_aligned(grids)
    stack = np.stack([g.votes for g in grids])
    fused = grids[0].copy_empty()
    fused.votes = op.apply(stack)
    fused.skipped_events = sum(g.skipped_events for g in grids)
    return fused
