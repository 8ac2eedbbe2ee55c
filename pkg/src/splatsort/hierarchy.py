"""Hierarchical resorting pipeline over 4x4 and 2x2 sub-tiles.

Entries stream through three queue levels per 4x4 sub-tile: a tail queue
keyed by the depth at the 4x4 peak, four per-quadrant mid queues re-keyed
at the 2x2 level, and per-pixel head queues holding exact pixel-ray
depths.  Each level only ever emits its current minimum, so the blend
order a pixel sees is a locally resorted version of the tile stream.
Ties break by splat rank at every level.
"""

from __future__ import annotations

import math
from bisect import insort
from heapq import merge as heap_merge

import numpy as np

from .tile_culling import (
    blend_depths,
    gauss2d,
    max_points,
    rays_through_points,
)


def render_tile(ctx, tbin, mode):
    """Render one tile with the hierarchical pipeline.

    ``ctx`` is the rasterizer's per-tile context (pixel rays, config,
    splat batch) and ``tbin`` the tile's entries sorted by per-tile
    depth.  Returns (color, transmittance, depth, records) shaped like
    the other tile kernels.
    """
    cfg = ctx.cfg
    batch = ctx.batch
    cols_all = tbin.splat
    k_total = len(cols_all)
    npix = ctx.npix
    eps = cfg.opacity_eps
    cap = cfg.alpha_cap
    term = cfg.termination

    color = np.zeros((npix, 3))
    tn = np.ones(npix)
    depth = np.zeros(npix) if cfg.with_depth else None
    raw_recs: list[list[tuple[int, float, float]]] | None = None
    if cfg.capture_records:
        raw_recs = [[] for _ in range(npix)]
    if k_total == 0:
        return _finish(ctx, color, tn, depth, raw_recs)

    # Bin-local gathers; scalar math at the head level reads the list
    # forms, batched level-depth math the arrays.
    con_b = batch.conic[cols_all]
    mean_b = batch.mean2d[cols_all]
    op_b = batch.opacity[cols_all]
    m6_b = batch.inv_cov3[cols_all]
    qc_b = batch.inv_cov_center[cols_all]
    col_b = batch.color[cols_all]
    con_l = con_b.tolist()
    mean_l = mean_b.tolist()
    op_l = op_b.tolist()
    m6_l = m6_b.tolist()
    qc_l = qc_b.tolist()
    cols_l = cols_all.tolist()

    px_l = ctx.px.tolist()
    py_l = ctx.py.tolist()
    dir_l = ctx.dirs.tolist()
    feat_l = ctx.feats.tolist()

    exp = math.exp
    q_tail = mode.queue_tail
    q_mid = mode.queue_mid
    q_head = mode.queue_head
    b_load = mode.batch_load
    b_mid = mode.batch_mid
    b_head = mode.batch_head

    def blend(pid: int, t: float, j: int, a: float) -> None:
        t_cur = tn[pid]
        if t_cur < term:
            return
        w = a * t_cur
        color[pid] += col_b[j] * w
        if depth is not None:
            depth[pid] += t * w
        if raw_recs is not None:
            raw_recs[pid].append((cols_l[j], t, a))
        tn[pid] = t_cur * (1.0 - a)

    def emit_to_pixel(pid: int, j: int, head: list) -> None:
        a_, b_, c_ = con_l[j]
        mx, my = mean_l[j]
        dx = px_l[pid] - mx
        dy = py_l[pid] - my
        al = op_l[j] * exp(-(0.5 * (a_ * dx * dx + c_ * dy * dy) + b_ * dx * dy))
        if al < eps:
            return
        if al > cap:
            al = cap
        d = dir_l[pid]
        f = feat_l[pid]
        q = qc_l[j]
        m = m6_l[j]
        num = d[0] * q[0] + d[1] * q[1] + d[2] * q[2]
        den = (f[0] * m[0] + f[1] * m[1] + f[2] * m[2]
               + f[3] * m[3] + f[4] * m[4] + f[5] * m[5])
        insort(head, (num / den, cols_l[j], j, al))
        if len(head) > q_head:
            t, _, jj, aa = head.pop(0)
            blend(pid, t, jj, aa)

    for sy in range(0, ctx.h, 4):
        for sx in range(0, ctx.w, 4):
            sub_pids = [
                r * ctx.w + c
                for r in range(sy, min(sy + 4, ctx.h))
                for c in range(sx, min(sx + 4, ctx.w))
            ]
            if not sub_pids:
                continue
            rect4 = np.array(
                [ctx.x0 + sx, ctx.x0 + sx + 4, ctx.y0 + sy, ctx.y0 + sy + 4],
                dtype=np.float64,
            )
            quads = []
            for qy in (0, 2):
                for qx in (0, 2):
                    pids = [
                        r * ctx.w + c
                        for r in range(sy + qy, min(sy + qy + 2, ctx.h))
                        for c in range(sx + qx, min(sx + qx + 2, ctx.w))
                    ]
                    if not pids:
                        continue
                    rect2 = np.array(
                        [rect4[0] + qx, rect4[0] + qx + 2,
                         rect4[2] + qy, rect4[2] + qy + 2]
                    )
                    quads.append((rect2, pids, []))

            tail: list[tuple[float, int, int]] = []
            heads = {pid: [] for pid in sub_pids}

            def push_mid(chunk, quads=quads):
                jj = np.array([e[2] for e in chunk], dtype=np.int64)
                for rect2, pids, mid in quads:
                    if mode.mid_depth_at_center:
                        pts = np.broadcast_to(
                            np.array([(rect2[0] + rect2[1]) / 2.0,
                                      (rect2[2] + rect2[3]) / 2.0]),
                            (len(jj), 2),
                        )
                    else:
                        pts = max_points(con_b[jj], mean_b[jj], rect2)
                    dirs = rays_through_points(ctx.cam, pts)
                    d2 = blend_depths(m6_b[jj], qc_b[jj], dirs)
                    d2_l = d2.tolist()
                    for g0 in range(0, len(chunk), b_head):
                        group = sorted(
                            (d2_l[i], chunk[i][1], chunk[i][2])
                            for i in range(g0, min(g0 + b_head, len(chunk)))
                        )
                        mid[:] = list(heap_merge(mid, group))
                        assert len(mid) <= q_mid
                        while len(mid) >= q_mid:
                            flush_mid(pids, mid)

            def flush_mid(pids, mid):
                popped = mid[:b_head]
                del mid[:b_head]
                for _, _, j in popped:
                    for pid in pids:
                        emit_to_pixel(pid, j, heads[pid])

            def drain_tail(limit):
                while len(tail) > limit:
                    chunk = tail[:b_mid]
                    del tail[:b_mid]
                    push_mid(chunk)

            pos = 0
            stopped = False
            while pos < k_total:
                if all(tn[pid] < term for pid in sub_pids):
                    stopped = True
                    break
                take = min(b_load, k_total - pos)
                idx = np.arange(pos, pos + take)
                pos += take
                peaks = max_points(con_b[idx], mean_b[idx], rect4)
                g = op_b[idx] * gauss2d(con_b[idx], mean_b[idx], peaks)
                dirs = rays_through_points(ctx.cam, peaks)
                d4 = blend_depths(m6_b[idx], qc_b[idx], dirs)
                keep = g >= eps
                if not keep.any():
                    continue
                d4_l = d4[keep].tolist()
                j_keep = idx[keep].tolist()
                entries = sorted(
                    (d4_l[i], cols_l[j_keep[i]], j_keep[i])
                    for i in range(len(j_keep))
                )
                tail = list(heap_merge(tail, entries))
                assert len(tail) <= q_tail
                drain_tail(q_tail - b_load)

            if not stopped:
                drain_tail(0)
                for _, pids, mid in quads:
                    while mid:
                        flush_mid(pids, mid)
                for pid in sub_pids:
                    for t, _, j, a in heads[pid]:
                        blend(pid, t, j, a)

    return _finish(ctx, color, tn, depth, raw_recs)


def _finish(ctx, color, tn, depth, raw_recs):
    from .rasterizer import PixelRecords

    recs = None
    if raw_recs is not None:
        recs = []
        for entries in raw_recs:
            if entries:
                cols, ts, alphas = zip(*entries)
                recs.append(
                    PixelRecords(
                        np.array(cols, dtype=np.int64),
                        np.array(ts),
                        np.array(alphas),
                    )
                )
            else:
                recs.append(
                    PixelRecords(np.empty(0, np.int64), np.empty(0), np.empty(0))
                )
    return color, tn, depth, recs
