"""Blend-order, view-consistency, depth, and fidelity metrics.

The sort error quantifies how far a frame's realized blend order is from
the exact per-ray order.  View consistency warps frames along a
trajectory onto each other with optical flow (analytic here, from
rendered depth) and measures the perceptual or squared difference that
camera motion alone cannot explain.  The depth error compares sparse 3D
points against their positions re-derived from rendered depth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import ConfigError
from .flip import flip_error_map
from .rasterizer import (
    FrameOutput,
    RenderConfig,
    SortMode,
    mode_name,
    render_depth,
)
from .scene_io import Camera, SparsePointSet
from .tile_culling import rays_through_points

BORDER_CROP = 20


# ---------------------------------------------------------------------------
# Sort error


@dataclass
class SortErrorStats:
    """Out-of-order blend-depth mass per pixel, in world units."""

    delta_max: float
    delta_avg: float
    per_pixel: np.ndarray


def sort_error(records) -> SortErrorStats:
    """Sum positive depth inversions of consecutive blended pairs.

    ``records`` is either a FrameOutput rendered with record capture or
    the per-pixel record grid itself.  A perfectly sorted frame scores
    exactly zero.
    """
    if isinstance(records, FrameOutput):
        records = records.records
    if records is None:
        raise ConfigError("sort_error needs blend records; render with capture")
    h = len(records)
    w = len(records[0]) if h else 0
    per_pixel = np.zeros((h, w))
    for y in range(h):
        row = records[y]
        for x in range(w):
            d = row[x].depth
            if len(d) > 1:
                gaps = d[:-1] - d[1:]
                pos = gaps[gaps > 0]
                if len(pos):
                    per_pixel[y, x] = pos.sum()
    return SortErrorStats(
        delta_max=float(per_pixel.max()) if per_pixel.size else 0.0,
        delta_avg=float(per_pixel.mean()) if per_pixel.size else 0.0,
        per_pixel=per_pixel,
    )


# ---------------------------------------------------------------------------
# Warping and occlusion


def warp_frame(frame: np.ndarray, flow: np.ndarray):
    """Bilinear backward warp: out[p] = frame[p + flow[p]].

    Returns (warped, valid) where valid marks pixels whose sample point
    lies fully inside the frame.
    """
    frame = np.asarray(frame, dtype=np.float64)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = frame.shape[:2]
    if flow.shape[:2] != (h, w) or flow.shape[-1] != 2:
        raise ConfigError(f"flow dims {flow.shape} do not match frame {frame.shape}")
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    coords = [sy.ravel(), sx.ravel()]
    if frame.ndim == 2:
        warped = map_coordinates(frame, coords, order=1, mode="nearest")
        warped = warped.reshape(h, w)
    else:
        planes = [
            map_coordinates(frame[..., c], coords, order=1, mode="nearest")
            .reshape(h, w)
            for c in range(frame.shape[2])
        ]
        warped = np.stack(planes, axis=-1)
    return warped, valid


def occlusion_mask(
    flow_fwd: np.ndarray,
    flow_bwd: np.ndarray,
    rel: float = 0.01,
    offset: float = 0.5,
) -> np.ndarray:
    """Forward-backward consistency mask; True marks usable pixels.

    A pixel is occluded (unusable) when the round trip through both
    flows misses by more than the relative-plus-offset criterion
    |f + b|^2 > rel*(|f|^2 + |b|^2) + offset.
    """
    bwd_sampled, valid = warp_frame(flow_bwd, flow_fwd)
    rt = flow_fwd + bwd_sampled
    lhs = (rt ** 2).sum(axis=-1)
    rhs = rel * ((flow_fwd ** 2).sum(axis=-1) + (bwd_sampled ** 2).sum(axis=-1))
    return (lhs <= rhs + offset) & valid


def border_crop(height: int, width: int, crop: int = BORDER_CROP) -> int:
    """Crop width in pixels; shrinks proportionally below 64 px sides."""
    side = min(height, width)
    if side >= 64:
        return crop
    return max(0, int(round(crop * side / 64)))


# ---------------------------------------------------------------------------
# View consistency


@dataclass
class ConsistencyReport:
    """Per-offset view-consistency scores over a trajectory."""

    flip_t: dict
    mse_t: dict
    frames_used: int


def view_consistency(
    frames,
    flows_fwd: dict,
    flows_bwd: dict,
    offsets=(1, 7),
    metric: str = "both",
    crop: int | None = None,
) -> ConsistencyReport:
    """Warp-and-compare frames at one or more frame offsets.

    ``frames`` holds RGB images (or FrameOutputs); ``flows_fwd[(i, j)]``
    carries (flow, valid) on frame i's grid mapping into frame j, and
    ``flows_bwd[(j, i)]`` the reverse.  Error maps are computed on full
    frames, then restricted to the cropped, flow-valid, occlusion-free
    region; the per-pixel minimum across the sequence is subtracted
    before averaging, so static rendering error cancels.
    """
    if metric not in ("flip", "mse", "both"):
        raise ConfigError(f"unknown metric {metric!r}")
    colors = [f.color if isinstance(f, FrameOutput) else np.asarray(f)
              for f in frames]
    n = len(colors)
    if isinstance(offsets, int):
        offsets = (offsets,)
    flip_t: dict = {}
    mse_t: dict = {}
    for t in offsets:
        if t < 1:
            raise ConfigError(f"offset must be >= 1, got {t}")
        if n < t + 1:
            raise ConfigError(f"need at least {t + 1} frames for offset {t}, have {n}")
        h, w = colors[0].shape[:2]
        c = border_crop(h, w) if crop is None else crop
        region = (slice(c, h - c), slice(c, w - c))
        flip_maps, mse_maps, masks = [], [], []
        for i in range(n - t):
            j = i + t
            flow, fvalid = flows_fwd[(i, j)]
            warped, wvalid = warp_frame(colors[j], flow)
            usable = occlusion_mask(flow, flows_bwd[(j, i)][0])
            bvalid_w, _ = warp_frame(
                flows_bwd[(j, i)][1].astype(np.float64), flow
            )
            mask = fvalid & wvalid & usable & (bvalid_w > 0.999)
            masks.append(mask[region])
            if metric in ("flip", "both"):
                flip_maps.append(flip_error_map(colors[i], warped)[region])
            if metric in ("mse", "both"):
                diff = colors[i] - warped
                mse_maps.append((diff * diff).mean(axis=-1)[region])
        for name, maps, out in (("flip", flip_maps, flip_t),
                                ("mse", mse_maps, mse_t)):
            if not maps:
                continue
            stack = np.stack(maps)
            mstack = np.stack(masks)
            guarded = np.where(mstack, stack, np.inf)
            minmap = guarded.min(axis=0)
            vals = []
            for i in range(len(maps)):
                sel = mstack[i] & np.isfinite(minmap)
                if sel.any():
                    vals.append(float((stack[i][sel] - minmap[sel]).mean()))
            out[t] = float(np.mean(vals)) if vals else 0.0
    return ConsistencyReport(flip_t=flip_t, mse_t=mse_t, frames_used=n)


# ---------------------------------------------------------------------------
# Analytic flow from rendered depth


def analytic_flow(frame: FrameOutput, cam_i: Camera, cam_j: Camera):
    """Flow from camera i's pixels into camera j via rendered depth.

    Each pixel is pushed to the surface distance implied by its expected
    blend depth (normalized by accumulated opacity), then reprojected.
    Pixels with transmittance above 0.5 carry no surface and are marked
    invalid.  Returns (flow, valid) with flow in pixel units.
    """
    if frame.depth is None:
        raise ConfigError("analytic_flow needs a frame rendered with depth")
    h, w = frame.depth.shape
    tn = frame.transmittance
    coverage = np.maximum(1.0 - tn, 1e-12)
    dist = frame.depth / coverage
    valid = (tn <= 0.5) & (dist > 0)

    xs, ys = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    dirs = rays_through_points(cam_i, pts)
    world = cam_i.position[None, :] + dist.ravel()[:, None] * dirs
    rel = (world - cam_j.position[None, :]) @ cam_j.rotation.T
    z = rel[:, 2]
    front = z > 1e-9
    zsafe = np.where(front, z, 1.0)
    u = cam_j.fx * rel[:, 0] / zsafe + cam_j.cx
    v = cam_j.fy * rel[:, 1] / zsafe + cam_j.cy
    flow = np.stack(
        [u - pts[:, 0], v - pts[:, 1]], axis=1
    ).reshape(h, w, 2)
    valid = valid & front.reshape(h, w)
    # keep flow wherever it is computable, even past the validity cut:
    # low-coverage pixels still warp sensibly and comparing them avoids
    # spurious structure right at the mask boundary.
    computable = front.reshape(h, w) & (dist > 0)
    flow[~computable] = 0.0
    return flow, valid


def trajectory_flows(frames, cams, offsets=(1, 7)):
    """Analytic forward and backward flows for every (i, i+t) pair."""
    fwd: dict = {}
    bwd: dict = {}
    n = len(frames)
    for t in offsets:
        for i in range(n - t):
            j = i + t
            if (i, j) not in fwd:
                fwd[(i, j)] = analytic_flow(frames[i], cams[i], cams[j])
            if (j, i) not in bwd:
                bwd[(j, i)] = analytic_flow(frames[j], cams[j], cams[i])
    return fwd, bwd


def trajectory_consistency(
    scene,
    cams,
    mode: SortMode,
    cfg: RenderConfig | None = None,
    offsets=(1, 7),
    metric: str = "both",
) -> ConsistencyReport:
    """Render a camera path and score its view consistency.

    Flow comes from each frame's own rendered depth, so every mode is
    judged against its own geometry.
    """
    frames = [render_depth(scene, cam, mode, cfg) for cam in cams]
    fwd, bwd = trajectory_flows(frames, cams, offsets)
    return view_consistency(frames, fwd, bwd, offsets, metric)


# ---------------------------------------------------------------------------
# Depth error


@dataclass
class DepthErrorReport:
    """Mean point-reconstruction error per mode over shared points."""

    values: dict
    used: int
    excluded: int
    outside: int


def depth_error(
    scene,
    cams: list[Camera],
    points: SparsePointSet,
    modes,
    cfg: RenderConfig | None = None,
    t_max: float = 1e-2,
) -> DepthErrorReport:
    """Reconstruct sparse points from rendered depth and measure error.

    For each visible (point, camera) pair the depth buffer value at the
    point's projected pixel is pushed along that pixel's ray; the error
    is the distance to the point.  Pairs whose final transmittance
    exceeds ``t_max`` in ANY tested mode are excluded from every mode,
    so all means run over the same pairs.
    """
    if isinstance(modes, (list, tuple)):
        mode_list = list(modes)
    else:
        mode_list = [modes]
    cfg = cfg or RenderConfig()
    names = [mode_name(m) for m in mode_list]

    needed_cams = sorted({c for vis in points.visibility for c in vis})
    rendered = {
        ci: [render_depth(scene, cams[ci], m, cfg) for m in mode_list]
        for ci in needed_cams
    }

    errors: dict[str, list[float]] = {nm: [] for nm in names}
    outside = 0
    excluded = 0
    for p_idx in range(len(points.points)):
        p = points.points[p_idx]
        for ci in points.visibility[p_idx]:
            cam = cams[ci]
            rel = cam.rotation @ (p - cam.position)
            if rel[2] <= cfg.near:
                outside += 1
                continue
            u = cam.fx * rel[0] / rel[2] + cam.cx
            v = cam.fy * rel[1] / rel[2] + cam.cy
            ix, iy = int(np.floor(u)), int(np.floor(v))
            if not (0 <= ix < cam.width and 0 <= iy < cam.height):
                outside += 1
                continue
            frames = rendered[ci]
            if any(f.transmittance[iy, ix] > t_max for f in frames):
                excluded += 1
                continue
            d = rays_through_points(
                cam, np.array([[ix + 0.5, iy + 0.5]])
            )[0]
            for nm, f in zip(names, frames):
                zeta = f.depth[iy, ix]
                p_hat = cam.position + zeta * d
                errors[nm].append(float(np.linalg.norm(p_hat - p)))

    used = len(next(iter(errors.values()))) if errors else 0
    values = {
        nm: (float(np.mean(v)) if v else None) for nm, v in errors.items()
    }
    return DepthErrorReport(
        values=values, used=used, excluded=excluded, outside=outside
    )


# ---------------------------------------------------------------------------
# Fidelity and report formatting


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError(f"image dims differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def format_table(headers, rows) -> str:
    """Aligned-column text table; every cell stringified."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for r_idx, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if r_idx == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
