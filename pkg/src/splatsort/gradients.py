"""Backward pass of the blended image w.r.t. per-splat screen attributes.

The forward pass records each pixel's blend order; the backward pass
walks that order front to back, recovering each contribution's trailing
color by subtraction from the pixel total and dividing the trailing
transmittance terms by (1 - alpha).  A back-to-front reference that
accumulates the trailing sums explicitly is kept as an independent
check.  Chaining stops at (color, opacity, mean2d, conic); sorting is
order selection and carries no gradient.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError
from .gaussian_math import SplatBatch, project_scene
from .rasterizer import FrameOutput, RenderConfig, SortMode, render
from .scene_io import Camera


@dataclass
class SplatGradients:
    """Per-splat gradients; splats touching no pixel stay zero.

    ``d_conic`` is packed as (a, b, c) for the symmetric conic
    [[a, b], [b, c]], matching the projected batch layout.
    """

    d_color: np.ndarray
    d_opacity: np.ndarray
    d_mean2d: np.ndarray
    d_conic: np.ndarray
    d_background: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "SplatGradients":
        return cls(
            d_color=np.zeros((n, 3)),
            d_opacity=np.zeros(n),
            d_mean2d=np.zeros((n, 2)),
            d_conic=np.zeros((n, 3)),
            d_background=np.zeros(3),
        )


def loss_l2(rendered: np.ndarray, target: np.ndarray):
    """Mean squared error over all pixels and channels, plus its gradient.

    The gradient is 2(rendered - target) / (number of scalar entries),
    so it matches finite differences of the scalar loss directly.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DataError(
            f"image dims differ: {rendered.shape} vs {target.shape}"
        )
    diff = rendered - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def _as_batch(scene, cam: Camera, cfg: RenderConfig) -> SplatBatch:
    if isinstance(scene, SplatBatch):
        return scene
    batch, _ = project_scene(
        scene,
        cam,
        near=cfg.near,
        guard=cfg.guard_band,
        dilation=cfg.dilation,
        inv_scale_clamp=cfg.inv_scale_clamp,
        eps=cfg.opacity_eps,
    )
    return batch


def backward_render(
    scene,
    cam: Camera,
    mode: SortMode,
    upstream: np.ndarray,
    cfg: RenderConfig | None = None,
) -> SplatGradients:
    """Render forward with record capture, then run the backward pass.

    ``upstream`` is the H x W x 3 gradient of the loss w.r.t. the output
    image.  Gradients are w.r.t. the projected batch attributes; pass a
    ``SplatBatch`` as the scene to control exactly which attributes are
    perturbed in finite-difference checks.
    """
    cfg = replace(cfg or RenderConfig(), capture_records=True)
    batch = _as_batch(scene, cam, cfg)
    frame = render(batch, cam, mode, cfg)
    return gradients_from_records(batch, cam, frame, upstream, cfg)


def gradients_from_records(
    batch: SplatBatch,
    cam: Camera,
    frame: FrameOutput,
    upstream: np.ndarray,
    cfg: RenderConfig | None = None,
) -> SplatGradients:
    """Front-to-back backward pass over a frame's blend records."""
    cfg = cfg or RenderConfig()
    if frame.records is None:
        raise ConfigError("backward pass needs a frame rendered with records")
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cam.height, cam.width, 3):
        raise DataError(
            f"upstream gradient dims {upstream.shape} do not match the frame"
        )
    grads = SplatGradients.zeros(len(batch))
    grads.d_background[:] = np.einsum(
        "hwc,hw->c", upstream, frame.transmittance
    )
    bg = cfg.background
    ts = cfg.tile_size
    # Tile-major pixel traversal keeps the accumulation order fixed
    # regardless of how the forward pass scheduled tiles.
    for ty in range(0, cam.height, ts):
        for tx in range(0, cam.width, ts):
            for y in range(ty, min(ty + ts, cam.height)):
                for x in range(tx, min(tx + ts, cam.width)):
                    rec = frame.records[y][x]
                    if len(rec) == 0:
                        continue
                    _backward_pixel(
                        batch, grads, rec, upstream[y, x], bg, cfg, x, y
                    )
    return grads


def _backward_pixel(batch, grads, rec, g, bg, cfg, x, y):
    a = rec.alpha
    cols = rec.splat
    colors = batch.color[cols]
    t_prev = np.concatenate([[1.0], np.cumprod(1.0 - a)])
    t_n = t_prev[-1]
    w = a * t_prev[:-1]
    terms = colors * w[:, None]
    full = terms.sum(axis=0)
    bg_tn = bg * t_n
    px = x + 0.5
    py = y + 0.5
    acc = np.zeros(3)
    cap = cfg.alpha_cap
    for i in range(len(a)):
        col = int(cols[i])
        trailing = full - acc - terms[i]
        one_m = max(1.0 - a[i], 1e-6)
        d_alpha = float(
            g @ (colors[i] * t_prev[i] - (trailing + bg_tn) / one_m)
        )
        if not math.isfinite(d_alpha):
            raise DataError(
                f"non-finite gradient for splat {col} at pixel ({x}, {y})"
            )
        grads.d_color[col] += g * w[i]
        if a[i] < cap:
            ca, cb, cc = batch.conic[col]
            mx, my = batch.mean2d[col]
            dx = px - mx
            dy = py - my
            grads.d_opacity[col] += d_alpha * (a[i] / batch.opacity[col])
            da = d_alpha * a[i]
            grads.d_mean2d[col, 0] += da * (ca * dx + cb * dy)
            grads.d_mean2d[col, 1] += da * (cb * dx + cc * dy)
            grads.d_conic[col, 0] += -da * 0.5 * dx * dx
            grads.d_conic[col, 1] += -da * dx * dy
            grads.d_conic[col, 2] += -da * 0.5 * dy * dy
        acc += terms[i]


def backward_render_reference(
    scene,
    cam: Camera,
    mode: SortMode,
    upstream: np.ndarray,
    cfg: RenderConfig | None = None,
) -> SplatGradients:
    """Back-to-front reference accumulation (independent route).

    Walks each pixel's records in reverse, building the trailing blended
    color additively instead of by subtraction from the total.
    """
    cfg = replace(cfg or RenderConfig(), capture_records=True)
    batch = _as_batch(scene, cam, cfg)
    frame = render(batch, cam, mode, cfg)
    upstream = np.asarray(upstream, dtype=np.float64)
    grads = SplatGradients.zeros(len(batch))
    grads.d_background[:] = np.einsum(
        "hwc,hw->c", upstream, frame.transmittance
    )
    bg = cfg.background
    cap = cfg.alpha_cap
    for y in range(cam.height):
        for x in range(cam.width):
            rec = frame.records[y][x]
            if len(rec) == 0:
                continue
            a = rec.alpha
            cols = rec.splat
            colors = batch.color[cols]
            t_prev = np.concatenate([[1.0], np.cumprod(1.0 - a)])
            g = upstream[y, x]
            trailing = bg * t_prev[-1]
            for i in range(len(a) - 1, -1, -1):
                col = int(cols[i])
                one_m = max(1.0 - a[i], 1e-6)
                d_alpha = float(
                    g @ (colors[i] * t_prev[i] - trailing / one_m)
                )
                grads.d_color[col] += g * (a[i] * t_prev[i])
                if a[i] < cap:
                    ca, cb, cc = batch.conic[col]
                    dx = (x + 0.5) - batch.mean2d[col, 0]
                    dy = (y + 0.5) - batch.mean2d[col, 1]
                    grads.d_opacity[col] += d_alpha * (a[i] / batch.opacity[col])
                    da = d_alpha * a[i]
                    grads.d_mean2d[col, 0] += da * (ca * dx + cb * dy)
                    grads.d_mean2d[col, 1] += da * (cb * dx + cc * dy)
                    grads.d_conic[col, 0] += -da * 0.5 * dx * dx
                    grads.d_conic[col, 1] += -da * dx * dy
                    grads.d_conic[col, 2] += -da * 0.5 * dy * dy
                trailing = trailing + colors[i] * (a[i] * t_prev[i])
    return grads


# ---------------------------------------------------------------------------
# Debug dumps

_MAGIC = b"SGRD"


def save_gradients(path, grads: SplatGradients) -> None:
    """Write gradients as a flat little-endian binary dump.

    Layout: magic "SGRD", uint32 version (1), uint64 splat count N, then
    float64 arrays back to back: d_color (N*3), d_opacity (N), d_mean2d
    (N*2), d_conic (N*3), d_background (3).
    """
    n = len(grads.d_opacity)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", 1, n))
        for arr in (grads.d_color, grads.d_opacity, grads.d_mean2d,
                    grads.d_conic, grads.d_background):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_gradients(path) -> SplatGradients:
    """Read a gradient dump written by save_gradients."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a gradient dump")
    version, n = struct.unpack_from("<IQ", raw, 4)
    if version != 1:
        raise DataError(f"{path}: unsupported dump version {version}")
    need = 16 + 8 * (3 * n + n + 2 * n + 3 * n + 3)
    if len(raw) != need:
        raise DataError(f"{path}: expected {need} bytes, found {len(raw)}")
    flat = np.frombuffer(raw, dtype="<f8", offset=16)
    off = 0

    def take(count, shape):
        nonlocal off
        out = flat[off:off + count].reshape(shape).astype(np.float64)
        off += count
        return out

    return SplatGradients(
        d_color=take(3 * n, (n, 3)),
        d_opacity=take(n, (n,)),
        d_mean2d=take(2 * n, (n, 2)),
        d_conic=take(3 * n, (n, 3)),
        d_background=take(3, (3,)),
    )
