"""Exact tile culling and per-tile sort keys.

A splat only belongs in a tile when its peak contribution inside the tile
rectangle clears the shared opacity threshold.  The peak location is
found in closed form: if the projected mean lies inside the rectangle it
is the mean itself, otherwise a clamped quadratic line search along the
two edges adjoining the nearest corner.  The same search runs at every
level of the rasterizer hierarchy, just with smaller rectangles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian_math import (
    OPACITY_EPS,
    Splat2D,
    ray_for_pixel,
    t_opt,
    unpack_inv_cov,
)
from .scene_io import Camera

TILE_SIZE = 16


@dataclass(frozen=True)
class TileRect:
    """Axis-aligned pixel rectangle [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.x_max, self.y_min, self.y_max])


def tile_rect(tx: int, ty: int, size: int = TILE_SIZE) -> TileRect:
    """Rectangle of the tile with grid index (tx, ty)."""
    return TileRect(tx * size, (tx + 1) * size, ty * size, (ty + 1) * size)


def _conic_abc(conic) -> tuple[float, float, float]:
    conic = np.asarray(conic, dtype=np.float64)
    if conic.shape == (2, 2):
        return float(conic[0, 0]), float(conic[0, 1]), float(conic[1, 1])
    a, b, c = conic.reshape(3)
    return float(a), float(b), float(c)


def max_points(conic_abc: np.ndarray, mean2d: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Vectorized peak-location search; broadcasts splats against rects.

    Parameters are (…, 3) conics as (a, b, c), (…, 2) means, and (…, 4)
    rectangles as (x_min, x_max, y_min, y_max); all leading shapes must
    broadcast together.  Returns (…, 2) peak positions.
    """
    a, b, c = np.moveaxis(np.asarray(conic_abc, dtype=np.float64), -1, 0)
    mx, my = np.moveaxis(np.asarray(mean2d, dtype=np.float64), -1, 0)
    xmin, xmax, ymin, ymax = np.moveaxis(np.asarray(rects, dtype=np.float64), -1, 0)

    inside_x = (mx >= xmin) & (mx <= xmax)
    inside_y = (my >= ymin) & (my <= ymax)
    inside = inside_x & inside_y

    # Nearest corner and the signed edge extents leading away from it.
    px = np.where(mx <= 0.5 * (xmin + xmax), xmin, xmax)
    py = np.where(my <= 0.5 * (ymin + ymax), ymin, ymax)
    dxx = np.where(px == xmin, xmax - xmin, xmin - xmax)
    dyy = np.where(py == ymin, ymax - ymin, ymin - ymax)
    rx = mx - px
    ry = my - py

    # Peak of the quadratic along each edge, clamped to the edge; the
    # search along y only applies when the mean leaves the x range and
    # vice versa.
    t_y = np.clip((b * rx + c * ry) / (dyy * c), 0.0, 1.0)
    t_x = np.clip((a * rx + b * ry) / (dxx * a), 0.0, 1.0)
    t_y = np.where(inside_x, 0.0, t_y)
    t_x = np.where(inside_y, 0.0, t_x)

    out_x = np.where(inside, mx, px + t_x * dxx)
    out_y = np.where(inside, my, py + t_y * dyy)
    return np.stack(np.broadcast_arrays(out_x, out_y), axis=-1)


def gauss2d(conic_abc: np.ndarray, mean2d: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Screen-space Gaussian value at points, broadcasting like max_points."""
    a, b, c = np.moveaxis(np.asarray(conic_abc, dtype=np.float64), -1, 0)
    dx = np.asarray(points, dtype=np.float64)[..., 0] - np.asarray(mean2d)[..., 0]
    dy = np.asarray(points)[..., 1] - np.asarray(mean2d)[..., 1]
    power = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy
    return np.exp(-power)


def max_point_in_tile(conic, mean2d, tile: TileRect) -> np.ndarray:
    """Position of maximum splat contribution within one tile rectangle."""
    a, b, c = _conic_abc(conic)
    return max_points(
        np.array([a, b, c]), np.asarray(mean2d, dtype=np.float64), tile.as_array()
    )


def tile_survives(splat: Splat2D, tile: TileRect, eps: float = OPACITY_EPS) -> bool:
    """True when the splat's peak contribution in the tile reaches eps."""
    a, b, c = _conic_abc(splat.conic)
    abc = np.array([a, b, c])
    point = max_points(abc, splat.mean2d, tile.as_array())
    return bool(splat.opacity * gauss2d(abc, splat.mean2d, point) >= eps)


def per_tile_depth(splat: Splat2D, cam: Camera, tile: TileRect) -> float:
    """Sort key for a (splat, tile) pair.

    The blend depth evaluated on the ray through the point of maximum
    contribution in the tile, rather than the tile center, so shared
    sort keys track what the pixels in the tile will actually blend.
    """
    point = max_point_in_tile(splat.conic, splat.mean2d, tile)
    ray = ray_for_pixel(cam, float(point[0]), float(point[1]))
    return t_opt(unpack_inv_cov(splat.inv_cov3), splat.mean3d, ray)


def coarse_tile_range(
    mean2d,
    radius: float,
    grid_w: int,
    grid_h: int,
    tile_size: int = TILE_SIZE,
) -> tuple[int, int, int, int]:
    """Inclusive tile-index rectangle covered by a splat's bounding disc.

    Clamped to the grid; a range with ``x0 > x1`` or ``y0 > y1`` is empty.
    A zero radius yields the single tile containing the mean.
    """
    mx, my = float(mean2d[0]), float(mean2d[1])
    x0 = int(np.floor((mx - radius) / tile_size))
    y0 = int(np.floor((my - radius) / tile_size))
    # Ceil-minus-one keeps half-open disc extents out of the next tile
    # column; the max with the mean's own tile covers radius 0.
    x1 = max(int(np.ceil((mx + radius) / tile_size)) - 1, int(np.floor(mx / tile_size)))
    y1 = max(int(np.ceil((my + radius) / tile_size)) - 1, int(np.floor(my / tile_size)))
    return (max(x0, 0), min(x1, grid_w - 1), max(y0, 0), min(y1, grid_h - 1))


# ---------------------------------------------------------------------------
# Array helpers used by the rasterizer (same math, batch layout)


def rects_for_tiles(tx: np.ndarray, ty: np.ndarray, size: int) -> np.ndarray:
    """(K, 4) rectangles for arrays of tile indices."""
    tx = np.asarray(tx, dtype=np.float64)
    ty = np.asarray(ty, dtype=np.float64)
    return np.stack([tx * size, (tx + 1) * size, ty * size, (ty + 1) * size], axis=-1)


def rays_through_points(cam: Camera, points: np.ndarray) -> np.ndarray:
    """(K, 3) unit world directions through continuous pixel positions."""
    pts = np.asarray(points, dtype=np.float64)
    v = np.stack(
        [
            (pts[..., 0] - cam.cx) / cam.fx,
            (pts[..., 1] - cam.cy) / cam.fy,
            np.ones(pts.shape[:-1]),
        ],
        axis=-1,
    )
    d = v @ cam.rotation  # rows of R^T v
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def ray_features(directions: np.ndarray) -> np.ndarray:
    """(…, 6) quadratic features matching the packed inverse covariance."""
    d = np.asarray(directions, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack(
        [x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z], axis=-1
    )


def blend_depths(
    inv_cov3: np.ndarray, inv_cov_center: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """Blend depth along unit rays from the camera origin, batched.

    ``inv_cov3`` and ``inv_cov_center`` are the packed per-splat arrays
    from projection; ``directions`` broadcasts against them.
    """
    num = np.einsum("...k,...k->...", directions, inv_cov_center)
    den = np.einsum("...k,...k->...", ray_features(directions), inv_cov3)
    return num / den
