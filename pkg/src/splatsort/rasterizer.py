"""Tile-based software rasterizer with selectable blend ordering.

Four orderings are supported: the reference global view-space-z order,
exact per-pixel sorting by per-ray blend depth, a fixed-size per-pixel
resorting window over the per-tile stream, and a three-level hierarchical
queue pipeline that approaches the exact order at a fraction of the
sorting work.  Tiles are independent work units, so rendering is
deterministic for any worker count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError
from .gaussian_math import (
    DILATION,
    GUARD_BAND,
    INV_SCALE_CLAMP,
    NEAR_PLANE,
    OPACITY_EPS,
    SplatBatch,
    matrix_to_quat,
    project_scene,
    quat_slerp,
    quat_to_matrix,
)
from .scene_io import Camera, Gaussian3D
from .tile_culling import (
    TILE_SIZE,
    blend_depths,
    gauss2d,
    max_points,
    ray_features,
    rays_through_points,
    rects_for_tiles,
)

# ---------------------------------------------------------------------------
# Sort modes


@dataclass(frozen=True)
class GlobalZ:
    """Reference order: one global sort by view-space z of the means."""


@dataclass(frozen=True)
class FullPerPixel:
    """Exact per-pixel order by per-ray blend depth, stable ties."""


@dataclass(frozen=True)
class Window:
    """Per-pixel resorting window over the per-tile-depth stream.

    Each pixel keeps up to ``size`` pending contributions; on overflow
    the smallest blend depth is emitted, and the window drains in sorted
    order at stream end.
    """

    size: int = 8


@dataclass(frozen=True)
class Hierarchical:
    """Three-level queue pipeline over 4x4 and 2x2 sub-tiles.

    Batches of ``batch_load`` enter a per-4x4 tail queue sorted by the
    4x4-level depth; overflow moves ``batch_mid``-sized chunks into four
    2x2 queues re-keyed at the 2x2 level; full 2x2 queues emit groups of
    ``batch_head`` into per-pixel insertion queues that blend their
    minimum on overflow.
    """

    queue_tail: int = 64
    queue_mid: int = 8
    queue_head: int = 4
    batch_load: int = 32
    batch_mid: int = 16
    batch_head: int = 4
    mid_depth_at_center: bool = False


SortMode = GlobalZ | FullPerPixel | Window | Hierarchical


def validate_mode(mode: SortMode) -> None:
    """Check mode parameters; raises ConfigError on violations."""
    if isinstance(mode, Window):
        if mode.size < 1:
            raise ConfigError(f"window size must be >= 1, got {mode.size}")
    elif isinstance(mode, Hierarchical):
        if mode.queue_tail < 64 or mode.queue_tail % 32 != 0:
            raise ConfigError(
                f"tail queue must be a multiple of 32 and at least 64,"
                f" got {mode.queue_tail}"
            )
        if mode.queue_mid < 4 or mode.queue_mid % 4 != 0:
            raise ConfigError(
                f"mid queue must be a positive multiple of 4, got {mode.queue_mid}"
            )
        if mode.queue_head < 1:
            raise ConfigError(f"head queue must hold at least 1, got {mode.queue_head}")
        if mode.batch_load < 1 or mode.batch_load >= mode.queue_tail:
            raise ConfigError("load batch must be positive and below the tail queue")
        if mode.batch_mid < 1 or mode.batch_head < 1:
            raise ConfigError("batch sizes must be positive")
        if mode.batch_head > mode.queue_mid:
            raise ConfigError("head batch cannot exceed the mid queue size")
    elif not isinstance(mode, (GlobalZ, FullPerPixel)):
        raise ConfigError(f"unknown sort mode {mode!r}")


def parse_mode(text: str) -> SortMode:
    """Parse a mode string: globalz, full, window:K, hierarchical[:T/M/H]."""
    t = text.strip().lower().replace("(", ":").rstrip(")")
    if t in ("globalz", "global-z", "global"):
        return GlobalZ()
    if t in ("full", "full-per-pixel", "fullperpixel"):
        return FullPerPixel()
    if t.startswith("window"):
        try:
            size = int(t.split(":", 1)[1])
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"cannot parse window size from {text!r}") from exc
        mode = Window(size)
        validate_mode(mode)
        return mode
    if t.startswith(("hier", "hierarchical")):
        if ":" in t:
            try:
                tail, mid, head = (int(v) for v in t.split(":", 1)[1].split("/"))
            except ValueError as exc:
                raise ConfigError(f"cannot parse queue sizes from {text!r}") from exc
            mode = Hierarchical(queue_tail=tail, queue_mid=mid, queue_head=head)
        else:
            mode = Hierarchical()
        validate_mode(mode)
        return mode
    raise ConfigError(f"unknown sort mode {text!r}")


def mode_name(mode: SortMode) -> str:
    if isinstance(mode, GlobalZ):
        return "globalz"
    if isinstance(mode, FullPerPixel):
        return "full"
    if isinstance(mode, Window):
        return f"window:{mode.size}"
    return f"hierarchical:{mode.queue_tail}/{mode.queue_mid}/{mode.queue_head}"


# ---------------------------------------------------------------------------
# Configuration


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SPLATSORT_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class RenderConfig:
    """Pipeline constants; defaults follow the shared conventions.

    ``alpha_cap`` bounds any single blended contribution, ``termination``
    stops a pixel once its transmittance falls below it, and
    ``opacity_eps`` is the shared contribution threshold used by culling
    and per-pixel skipping.  ``exact_tile_culling`` defaults to the
    per-mode convention: off for GlobalZ (reference pipeline emulation,
    coarse bounding-disc binning), on for the sorted modes.
    """

    tile_size: int = TILE_SIZE
    opacity_eps: float = OPACITY_EPS
    termination: float = 1e-4
    alpha_cap: float = 0.99
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    near: float = NEAR_PLANE
    guard_band: float = GUARD_BAND
    dilation: float = DILATION
    inv_scale_clamp: float = INV_SCALE_CLAMP
    capture_records: bool = False
    with_depth: bool = False
    workers: int = field(default_factory=_default_workers)
    exact_tile_culling: bool | None = None

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64).reshape(3)
        if self.tile_size < 4 or self.tile_size % 4 != 0:
            raise ConfigError("tile size must be a multiple of 4 and at least 4")
        if self.workers < 1:
            raise ConfigError("worker count must be at least 1")
        if not 0 < self.alpha_cap < 1:
            raise ConfigError("alpha cap must lie in (0, 1)")

    def exact_culling(self, mode: SortMode) -> bool:
        if self.exact_tile_culling is None:
            return not isinstance(mode, GlobalZ)
        return self.exact_tile_culling


# ---------------------------------------------------------------------------
# Bins and outputs


@dataclass
class TileBin:
    """Entries of one 16x16 tile, sorted ascending by (key, rank).

    ``splat`` holds batch-local splat indices, which double as the global
    rank (projection preserves source order), and ``key`` the per-tile
    sort key: view-space z under GlobalZ, the per-tile blend depth
    otherwise.
    """

    tile_x: int
    tile_y: int
    splat: np.ndarray
    key: np.ndarray

    def __len__(self) -> int:
        return len(self.splat)


@dataclass
class PixelRecords:
    """Blended contributions of one pixel, in blend order."""

    splat: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray

    def __len__(self) -> int:
        return len(self.splat)


@dataclass
class FrameOutput:
    """A rendered frame plus whatever diagnostics were requested."""

    color: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray | None = None
    records: list[list[PixelRecords]] | None = None
    source_index: np.ndarray | None = None
    stats: dict = field(default_factory=dict)


def blend_pixel(contributions, termination: float = 1e-4) -> tuple[np.ndarray, float]:
    """Front-to-back alpha blending of (color, alpha) pairs.

    Iteration stops once transmittance falls below ``termination``.
    Returns the blended color (no background) and the final
    transmittance.
    """
    color = np.zeros(3)
    t = 1.0
    for c, a in contributions:
        if t < termination:
            break
        color += np.asarray(c, dtype=np.float64) * (a * t)
        t *= 1.0 - a
    return color, t


# ---------------------------------------------------------------------------
# Binning


def bin_and_sort(
    batch: SplatBatch,
    cam: Camera,
    mode: SortMode,
    cfg: RenderConfig | None = None,
    timings: dict | None = None,
) -> list[TileBin]:
    """Duplicate splats into tile bins and sort each bin.

    With exact culling, a (splat, tile) entry exists only when the
    splat's peak contribution inside the tile reaches ``opacity_eps``;
    without it (the GlobalZ reference convention) the bounding disc of
    the splat decides.  Keys are view-space z under GlobalZ and the
    per-tile blend depth otherwise; ties break by rank, so bins are
    deterministic.
    """
    cfg = cfg or RenderConfig()
    ts = cfg.tile_size
    grid_w = -(-cam.width // ts)
    grid_h = -(-cam.height // ts)
    t0 = time.perf_counter()

    n = len(batch)
    if n == 0:
        if timings is not None:
            timings["duplicate"] = timings["sort"] = 0.0
        return []

    mx, my = batch.mean2d[:, 0], batch.mean2d[:, 1]
    r = batch.radius
    x0 = np.maximum(np.floor((mx - r) / ts).astype(np.int64), 0)
    y0 = np.maximum(np.floor((my - r) / ts).astype(np.int64), 0)
    x1 = np.maximum(np.ceil((mx + r) / ts).astype(np.int64) - 1,
                    np.floor(mx / ts).astype(np.int64))
    y1 = np.maximum(np.ceil((my + r) / ts).astype(np.int64) - 1,
                    np.floor(my / ts).astype(np.int64))
    x1 = np.minimum(x1, grid_w - 1)
    y1 = np.minimum(y1, grid_h - 1)

    wx = x1 - x0 + 1
    wy = y1 - y0 + 1
    ok = (wx > 0) & (wy > 0)
    counts = np.where(ok, wx * wy, 0)
    total = int(counts.sum())
    if total == 0:
        if timings is not None:
            timings["duplicate"] = timings["sort"] = 0.0
        return []

    rep = np.repeat(np.arange(n), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    offs = np.arange(total) - np.repeat(starts, counts)
    tile_x = x0[rep] + offs % wx[rep]
    tile_y = y0[rep] + offs // wx[rep]

    if cfg.exact_culling(mode):
        rects = rects_for_tiles(tile_x, tile_y, ts)
        peaks = max_points(batch.conic[rep], batch.mean2d[rep], rects)
        vals = batch.opacity[rep] * gauss2d(batch.conic[rep], batch.mean2d[rep], peaks)
        keep = vals >= cfg.opacity_eps
        rep, tile_x, tile_y, peaks = rep[keep], tile_x[keep], tile_y[keep], peaks[keep]
    else:
        peaks = None

    if isinstance(mode, GlobalZ):
        keys = batch.global_depth[rep]
    else:
        if peaks is None:
            rects = rects_for_tiles(tile_x, tile_y, ts)
            peaks = max_points(batch.conic[rep], batch.mean2d[rep], rects)
        dirs = rays_through_points(cam, peaks)
        keys = blend_depths(batch.inv_cov3[rep], batch.inv_cov_center[rep], dirs)

    t1 = time.perf_counter()
    tile_id = tile_y * grid_w + tile_x
    order = np.lexsort((rep, keys, tile_id))
    tile_id = tile_id[order]
    rep = rep[order]
    keys = keys[order]
    bounds = np.flatnonzero(np.diff(tile_id)) + 1
    segments = np.split(np.arange(len(tile_id)), bounds)
    bins = []
    for seg in segments:
        if len(seg) == 0:
            continue
        tid = int(tile_id[seg[0]])
        bins.append(
            TileBin(
                tile_x=tid % grid_w,
                tile_y=tid // grid_w,
                splat=rep[seg].astype(np.int64),
                key=keys[seg].copy(),
            )
        )
    t2 = time.perf_counter()
    if timings is not None:
        timings["duplicate"] = t1 - t0
        timings["sort"] = t2 - t1
    return bins


# ---------------------------------------------------------------------------
# Per-tile kernels


class _TileCtx:
    """Cached per-tile pixel geometry and splat gathers."""

    def __init__(self, batch: SplatBatch, cam: Camera, cfg: RenderConfig,
                 tile_x: int, tile_y: int):
        ts = cfg.tile_size
        self.batch = batch
        self.cam = cam
        self.cfg = cfg
        self.x0 = tile_x * ts
        self.y0 = tile_y * ts
        x1 = min(self.x0 + ts, cam.width)
        y1 = min(self.y0 + ts, cam.height)
        self.w = x1 - self.x0
        self.h = y1 - self.y0
        xs, ys = np.meshgrid(
            np.arange(self.x0, x1, dtype=np.float64) + 0.5,
            np.arange(self.y0, y1, dtype=np.float64) + 0.5,
        )
        self.px = xs.ravel()
        self.py = ys.ravel()
        self.dirs = rays_through_points(cam, np.stack([self.px, self.py], axis=1))
        self.feats = ray_features(self.dirs)

    @property
    def npix(self) -> int:
        return self.px.size

    def alphas(self, cols: np.ndarray) -> np.ndarray:
        """(P, K) capped blending alphas; below-threshold entries are 0."""
        b = self.batch
        a, bb, c = b.conic[cols].T
        dx = self.px[:, None] - b.mean2d[cols, 0][None, :]
        dy = self.py[:, None] - b.mean2d[cols, 1][None, :]
        power = 0.5 * (a * dx * dx + c * dy * dy) + bb * dx * dy
        al = b.opacity[cols] * np.exp(-power)
        al = np.minimum(al, self.cfg.alpha_cap)
        al[al < self.cfg.opacity_eps] = 0.0
        return al

    def depths(self, cols: np.ndarray) -> np.ndarray:
        """(P, K) per-ray blend depths for the tile's pixel rays."""
        b = self.batch
        num = self.dirs @ b.inv_cov_center[cols].T
        den = self.feats @ b.inv_cov3[cols].T
        return num / den


def _blend_ordered(
    ctx: _TileCtx,
    al: np.ndarray,
    dep: np.ndarray,
    col_idx: np.ndarray,
    phi: np.ndarray | None,
):
    """Blend (P, K) contributions already in per-pixel order.

    ``phi`` carries the per-contribution depth blended into the expected
    depth output; None skips depth.  Returns color, transmittance,
    depth, blend weights.
    """
    cfg = ctx.cfg
    p, k = al.shape
    ones = np.ones((p, 1))
    t_arr = np.concatenate([ones, np.cumprod(1.0 - al, axis=1)], axis=1)
    live = t_arr[:, :-1] >= cfg.termination
    w = al * t_arr[:, :-1] * live
    color = np.einsum("pk,pkc->pc", w, ctx.batch.color[col_idx])
    below = t_arr < cfg.termination
    stop = np.argmax(below, axis=1)
    rows = np.arange(p)
    tn = np.where(below[rows, stop], t_arr[rows, stop], t_arr[:, -1])
    depth = None
    if phi is not None:
        depth = np.einsum("pk,pk->p", w, np.where(w > 0, phi, 0.0))
    return color, tn, depth, w


def _records_from(w, col_idx, dep, al):
    recs = []
    for i in range(len(w)):
        sel = np.flatnonzero(w[i] > 0)
        recs.append(
            PixelRecords(col_idx[i, sel].copy(), dep[i, sel].copy(), al[i, sel].copy())
        )
    return recs


def _tile_globalz(ctx: _TileCtx, tbin: TileBin):
    cols = tbin.splat
    al = ctx.alphas(cols)
    need_depth = ctx.cfg.with_depth or ctx.cfg.capture_records
    dep = ctx.depths(cols) if need_depth else np.zeros_like(al)
    col_idx = np.broadcast_to(cols, al.shape)
    # The reference expected-depth convention blends the distance to the
    # mean rather than a per-ray depth.
    phi = None
    if ctx.cfg.with_depth:
        phi = np.broadcast_to(ctx.batch.center_dist[cols], al.shape)
    color, tn, depth, w = _blend_ordered(ctx, al, dep, col_idx, phi)
    recs = _records_from(w, col_idx, dep, al) if ctx.cfg.capture_records else None
    return color, tn, depth, recs


def _tile_full(ctx: _TileCtx, tbin: TileBin):
    cols = np.sort(tbin.splat)  # rank order, so stable sort ties break by rank
    al = ctx.alphas(cols)
    dep = ctx.depths(cols)
    key = np.where(al > 0, dep, np.inf)
    order = np.argsort(key, axis=1, kind="stable")
    al = np.take_along_axis(al, order, axis=1)
    dep = np.take_along_axis(dep, order, axis=1)
    col_idx = np.broadcast_to(cols, order.shape)
    col_idx = np.take_along_axis(col_idx, order, axis=1)
    phi = dep if ctx.cfg.with_depth else None
    color, tn, depth, w = _blend_ordered(ctx, al, dep, col_idx, phi)
    recs = _records_from(w, col_idx, dep, al) if ctx.cfg.capture_records else None
    return color, tn, depth, recs


def _tile_window(ctx: _TileCtx, tbin: TileBin, size: int):
    cols = tbin.splat
    p = ctx.npix
    k = len(cols)
    al = ctx.alphas(cols)
    dep = ctx.depths(cols)
    valid = al > 0

    big_rank = np.iinfo(np.int64).max
    t_buf = np.full((p, size), np.inf)
    r_buf = np.full((p, size), big_rank, dtype=np.int64)
    e_buf = np.full((p, size), -1, dtype=np.int64)
    cnt = np.zeros(p, dtype=np.int64)
    out_idx = np.zeros((p, k), dtype=np.int64)
    out_cnt = np.zeros(p, dtype=np.int64)

    for j in range(k):
        vj = valid[:, j]
        if not vj.any():
            continue
        rank_j = int(cols[j])
        room = vj & (cnt < size)
        if room.any():
            rows = np.flatnonzero(room)
            slots = cnt[rows]
            t_buf[rows, slots] = dep[rows, j]
            r_buf[rows, slots] = rank_j
            e_buf[rows, slots] = j
            cnt[rows] += 1
        fullr = vj & ~room
        if fullr.any():
            rows = np.flatnonzero(fullr)
            tb = t_buf[rows]
            min_t = tb.min(axis=1)
            rank_of_min = np.where(tb == min_t[:, None], r_buf[rows], big_rank)
            slot = np.argmin(rank_of_min, axis=1)
            rr = np.arange(len(rows))
            buf_t = tb[rr, slot]
            buf_rank = rank_of_min[rr, slot]
            inc_t = dep[rows, j]
            # Emit whichever of (incoming, buffer minimum) is smaller by
            # (depth, rank); the buffer slot then holds the survivor.
            inc_first = (inc_t < buf_t) | ((inc_t == buf_t) & (rank_j < buf_rank))
            er = rows[inc_first]
            out_idx[er, out_cnt[er]] = j
            out_cnt[er] += 1
            br = rows[~inc_first]
            bs = slot[~inc_first]
            out_idx[br, out_cnt[br]] = e_buf[br, bs]
            out_cnt[br] += 1
            t_buf[br, bs] = inc_t[~inc_first]
            r_buf[br, bs] = rank_j
            e_buf[br, bs] = j

    # Drain remaining window contents in depth order.
    drain_order = np.lexsort((r_buf, t_buf), axis=-1)
    drained = np.take_along_axis(e_buf, drain_order, axis=1)
    for s in range(size):
        rows = np.flatnonzero(s < cnt)
        if len(rows) == 0:
            break
        out_idx[rows, out_cnt[rows]] = drained[rows, s]
        out_cnt[rows] += 1

    maxc = int(out_cnt.max()) if p else 0
    if maxc == 0:
        recs = None
        if ctx.cfg.capture_records:
            recs = [PixelRecords(np.empty(0, np.int64), np.empty(0), np.empty(0))
                    for _ in range(p)]
        return (
            np.zeros((p, 3)),
            np.ones(p),
            np.zeros(p) if ctx.cfg.with_depth else None,
            recs,
        )
    emit = out_idx[:, :maxc]
    live = np.arange(maxc)[None, :] < out_cnt[:, None]
    al_em = np.where(live, np.take_along_axis(al, emit, axis=1), 0.0)
    dep_em = np.where(live, np.take_along_axis(dep, emit, axis=1), np.inf)
    col_em = cols[emit]
    phi = dep_em if ctx.cfg.with_depth else None
    color, tn, depth, w = _blend_ordered(ctx, al_em, dep_em, col_em, phi)
    recs = _records_from(w, col_em, dep_em, al_em) if ctx.cfg.capture_records else None
    return color, tn, depth, recs


# ---------------------------------------------------------------------------
# Frame rendering


def render(
    scene: list[Gaussian3D] | SplatBatch,
    cam: Camera,
    mode: SortMode = FullPerPixel(),
    cfg: RenderConfig | None = None,
) -> FrameOutput:
    """Render one frame.

    ``scene`` is either raw Gaussians or an already projected
    ``SplatBatch`` (the latter is what gradient checks perturb).  The
    output color is composited over ``cfg.background``; per-pixel blend
    records are captured when ``cfg.capture_records`` is set, and the
    expected blend depth when ``cfg.with_depth`` is set.
    """
    from . import hierarchy  # local import to avoid a cycle

    cfg = cfg or RenderConfig()
    validate_mode(mode)
    timings: dict[str, float] = {}
    t_start = time.perf_counter()

    if isinstance(scene, SplatBatch):
        batch = scene
        proj_stats: dict = {"kept": len(batch)}
    else:
        batch, proj_stats = project_scene(
            scene,
            cam,
            near=cfg.near,
            guard=cfg.guard_band,
            dilation=cfg.dilation,
            inv_scale_clamp=cfg.inv_scale_clamp,
            eps=cfg.opacity_eps,
        )
    timings["project"] = time.perf_counter() - t_start

    bins = bin_and_sort(batch, cam, mode, cfg, timings=timings)

    h, w = cam.height, cam.width
    color = np.zeros((h, w, 3))
    tn = np.ones((h, w))
    depth = np.zeros((h, w)) if cfg.with_depth else None
    records = None
    if cfg.capture_records:
        records = [
            [PixelRecords(np.empty(0, np.int64), np.empty(0), np.empty(0))
             for _ in range(w)]
            for _ in range(h)
        ]

    def run_tile(tbin: TileBin):
        ctx = _TileCtx(batch, cam, cfg, tbin.tile_x, tbin.tile_y)
        if isinstance(mode, GlobalZ):
            out = _tile_globalz(ctx, tbin)
        elif isinstance(mode, FullPerPixel):
            out = _tile_full(ctx, tbin)
        elif isinstance(mode, Window):
            out = _tile_window(ctx, tbin, mode.size)
        else:
            out = hierarchy.render_tile(ctx, tbin, mode)
        return ctx, out

    t_blend = time.perf_counter()
    if cfg.workers > 1 and len(bins) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_tile, bins))
    else:
        results = [run_tile(tb) for tb in bins]

    nonfinite: list[tuple[int, int]] = []
    for ctx, (tile_color, tile_tn, tile_depth, tile_recs) in results:
        ys = slice(ctx.y0, ctx.y0 + ctx.h)
        xs = slice(ctx.x0, ctx.x0 + ctx.w)
        color[ys, xs] = tile_color.reshape(ctx.h, ctx.w, 3)
        tn[ys, xs] = tile_tn.reshape(ctx.h, ctx.w)
        if depth is not None and tile_depth is not None:
            depth[ys, xs] = tile_depth.reshape(ctx.h, ctx.w)
        if records is not None and tile_recs is not None:
            for i, rec in enumerate(tile_recs):
                records[ctx.y0 + i // ctx.w][ctx.x0 + i % ctx.w] = rec
        bad = ~np.isfinite(tile_color).all(axis=1) | ~np.isfinite(tile_tn)
        for i in np.flatnonzero(bad):
            nonfinite.append((ctx.x0 + int(i) % ctx.w, ctx.y0 + int(i) // ctx.w))
    timings["blend"] = time.perf_counter() - t_blend

    color += tn[:, :, None] * cfg.background
    timings["total"] = time.perf_counter() - t_start

    stats = {
        "mode": mode_name(mode),
        "projection": proj_stats,
        "bin_entries": int(sum(len(b) for b in bins)),
        "tiles": len(bins),
        "timings": timings,
        "nonfinite_pixels": nonfinite,
    }
    return FrameOutput(
        color=color,
        transmittance=tn,
        depth=depth,
        records=records,
        source_index=batch.source_index.copy(),
        stats=stats,
    )


def render_depth(
    scene,
    cam: Camera,
    mode: SortMode = FullPerPixel(),
    cfg: RenderConfig | None = None,
) -> FrameOutput:
    """Render with the expected-blend-depth buffer enabled.

    The depth value is the blend-weighted sum of per-contribution depths
    (per-ray blend depth for the sorted modes, distance to the mean for
    GlobalZ); it is scaled by (1 - transmittance), so fully transparent
    pixels read zero.
    """
    cfg = replace(cfg or RenderConfig(), with_depth=True)
    return render(scene, cam, mode, cfg)


# ---------------------------------------------------------------------------
# Trajectories


def interpolate_cameras(cameras: list[Camera], n_between: int) -> list[Camera]:
    """Insert ``n_between`` interpolated cameras between consecutive poses.

    Rotations interpolate spherically through quaternions, positions and
    intrinsics linearly.  Input cameras are passed through untouched, so
    endpoints are bit-exact.
    """
    if n_between < 0:
        raise ConfigError("interpolation count must be non-negative")
    if len(cameras) == 0:
        return []
    if n_between == 0 or len(cameras) == 1:
        return list(cameras)
    frames: list[Camera] = []
    for a, b in zip(cameras[:-1], cameras[1:]):
        frames.append(a)
        qa = matrix_to_quat(a.rotation)
        qb = matrix_to_quat(b.rotation)
        for i in range(1, n_between + 1):
            u = i / (n_between + 1)
            frames.append(
                Camera(
                    rotation=quat_to_matrix(quat_slerp(qa, qb, u)),
                    position=(1 - u) * a.position + u * b.position,
                    fx=(1 - u) * a.fx + u * b.fx,
                    fy=(1 - u) * a.fy + u * b.fy,
                    width=a.width,
                    height=a.height,
                    cx=(1 - u) * a.cx + u * b.cx,
                    cy=(1 - u) * a.cy + u * b.cy,
                )
            )
    frames.append(cameras[-1])
    return frames


def render_trajectory(
    scene,
    cameras: list[Camera],
    mode: SortMode = FullPerPixel(),
    cfg: RenderConfig | None = None,
    interpolate: int = 0,
) -> list[FrameOutput]:
    """Render every camera of an interpolated path, in path order."""
    frames = []
    for i, cam in enumerate(interpolate_cameras(cameras, interpolate)):
        try:
            frames.append(render(scene, cam, mode, cfg))
        except Exception as exc:
            raise DataError(f"frame {i}: {exc}") from exc
    return frames
