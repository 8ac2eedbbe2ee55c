"""Per-view Gaussian math.

Covariance assembly from quaternion and scale, perspective projection of
3D Gaussians to screen-space splats, spherical-harmonics color, camera
rays, and the per-ray depth of maximum contribution that the sorted
rasterizer blends by.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene_io import Camera, Gaussian3D

OPACITY_EPS = 1.0 / 255.0
NEAR_PLANE = 0.2
GUARD_BAND = 1.3
DILATION = 0.3
INV_SCALE_CLAMP = 1e3

_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
_SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)


# ---------------------------------------------------------------------------
# Quaternions


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
             (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return quat_normalize(q)


def quat_slerp(qa, qb, u: float) -> np.ndarray:
    """Spherical-linear interpolation between unit quaternions."""
    qa = quat_normalize(qa)
    qb = quat_normalize(qb)
    dot = float(qa @ qb)
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-10:
        return quat_normalize(qa + u * (qb - qa))
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    return (math.sin((1 - u) * theta) / s) * qa + (math.sin(u * theta) / s) * qb


def _quats_to_matrices(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = (q / n).T
    r = np.empty((len(q), 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


# ---------------------------------------------------------------------------
# Covariances


def build_covariance(rotation, scale) -> np.ndarray:
    """World-space covariance R diag(s^2) R^T from quaternion and scales."""
    r = quat_to_matrix(rotation)
    s = np.asarray(scale, dtype=np.float64)
    return r @ np.diag(s * s) @ r.T


def build_inverse_covariance(rotation, scale, clamp: float = INV_SCALE_CLAMP) -> np.ndarray:
    """Inverse covariance R diag(min(1/s, clamp)^2) R^T.

    Reciprocal scales are clamped before squaring so extremely thin
    Gaussians keep a bounded inverse; the result then equals the inverse
    of a covariance whose small axes were floored at 1/clamp.
    """
    r = quat_to_matrix(rotation)
    s = np.asarray(scale, dtype=np.float64)
    inv = np.minimum(1.0 / s, clamp)
    return r @ np.diag(inv * inv) @ r.T


def gaussian_value_3d(mean, inv_cov, point) -> float:
    """Unnormalized Gaussian density exp(-0.5 d^T inv_cov d)."""
    d = np.asarray(point, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    return float(np.exp(-0.5 * d @ np.asarray(inv_cov) @ d))


# ---------------------------------------------------------------------------
# Spherical harmonics


def sh_basis(directions: np.ndarray) -> np.ndarray:
    """Real SH basis values up to degree 3 for unit directions, (N, 16)."""
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    b = np.empty((len(d), 16))
    b[:, 0] = _SH_C0
    b[:, 1] = -_SH_C1 * y
    b[:, 2] = _SH_C1 * z
    b[:, 3] = -_SH_C1 * x
    b[:, 4] = _SH_C2[0] * xy
    b[:, 5] = _SH_C2[1] * yz
    b[:, 6] = _SH_C2[2] * (2.0 * zz - xx - yy)
    b[:, 7] = _SH_C2[3] * xz
    b[:, 8] = _SH_C2[4] * (xx - yy)
    b[:, 9] = _SH_C3[0] * y * (3.0 * xx - yy)
    b[:, 10] = _SH_C3[1] * xy * z
    b[:, 11] = _SH_C3[2] * y * (4.0 * zz - xx - yy)
    b[:, 12] = _SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    b[:, 13] = _SH_C3[4] * x * (4.0 * zz - xx - yy)
    b[:, 14] = _SH_C3[5] * z * (xx - yy)
    b[:, 15] = _SH_C3[6] * x * (xx - 3.0 * yy)
    return b


def evaluate_sh(sh: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """RGB color for one coefficient set and view direction.

    Adds the conventional 0.5 offset and clamps at zero.  Degree 0 alone
    gives 0.28209479 * c + 0.5.
    """
    basis = sh_basis(direction)[0]
    return np.clip(basis @ np.asarray(sh, dtype=np.float64) + 0.5, 0.0, None)


# ---------------------------------------------------------------------------
# Rays and blend depth


@dataclass(frozen=True)
class Ray:
    """World-space ray with a unit direction."""

    origin: np.ndarray
    direction: np.ndarray


def ray_for_pixel(cam: Camera, x: float, y: float) -> Ray:
    """Ray from the camera origin through continuous pixel position (x, y).

    Pixel centers sit at integer + 0.5, so the center ray of pixel (i, j)
    is ``ray_for_pixel(cam, i + 0.5, j + 0.5)``.
    """
    v = np.array([(x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0])
    d = cam.rotation.T @ v
    return Ray(cam.position.copy(), d / np.linalg.norm(d))


def t_opt(inv_cov: np.ndarray, mean, ray: Ray) -> float:
    """Depth of maximum contribution of a Gaussian along a ray.

    For a Gaussian with inverse covariance A and mean m, the density along
    o + t d peaks at t = d^T A (m - o) / (d^T A d).  With unit directions
    the result is a world-space distance.
    """
    a = np.asarray(inv_cov, dtype=np.float64)
    d = ray.direction
    rel = np.asarray(mean, dtype=np.float64) - ray.origin
    return float((d @ a @ rel) / (d @ a @ d))


# ---------------------------------------------------------------------------
# Projection


def bounding_radius(cov2d: np.ndarray, opacity: float, eps: float = OPACITY_EPS) -> float:
    """Pixel radius beyond which a splat's contribution stays below eps.

    The cutoff in Mahalanobis units is sqrt(2 ln(opacity / eps)), at most
    about 3.3290 for opacity 1; scaled by the largest eigenvalue of the
    screen covariance.  Zero when the opacity itself cannot reach eps.
    """
    if opacity <= eps:
        return 0.0
    c = np.asarray(cov2d, dtype=np.float64)
    mid = 0.5 * (c[0, 0] + c[1, 1])
    det = c[0, 0] * c[1, 1] - c[0, 1] * c[1, 0]
    lam_max = mid + math.sqrt(max(mid * mid - det, 0.0))
    return math.sqrt(2.0 * math.log(opacity / eps)) * math.sqrt(lam_max)


@dataclass
class Splat2D:
    """One projected Gaussian, ready for tile culling and blending."""

    mean2d: np.ndarray        # (2,) pixel coordinates
    conic: np.ndarray         # (2, 2) inverse of the screen covariance
    color: np.ndarray         # (3,) RGB from spherical harmonics
    opacity: float
    radius: float             # bounding radius in pixels
    global_depth: float       # view-space z of the mean
    inv_cov3: np.ndarray      # (6,) packed world inverse covariance
    inv_cov_center: np.ndarray  # (3,) inv_cov3 applied to mean - camera origin
    mean3d: np.ndarray        # (3,) world mean
    source_index: int


@dataclass
class SplatBatch:
    """Structure-of-arrays form of projected splats for one camera.

    ``conic`` holds (a, b, c) for the symmetric 2x2 inverse screen
    covariance [[a, b], [b, c]].  ``inv_cov3`` holds the packed world
    inverse covariance (m00, m11, m22, m01, m02, m12) and
    ``inv_cov_center`` its product with (mean - camera origin), so the
    blend depth along a unit ray d costs two dot products.
    """

    mean2d: np.ndarray
    conic: np.ndarray
    color: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray
    global_depth: np.ndarray
    inv_cov3: np.ndarray
    inv_cov_center: np.ndarray
    mean3d: np.ndarray
    center_dist: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.opacity)

    def copy(self) -> "SplatBatch":
        return SplatBatch(
            self.mean2d.copy(), self.conic.copy(), self.color.copy(),
            self.opacity.copy(), self.radius.copy(), self.global_depth.copy(),
            self.inv_cov3.copy(), self.inv_cov_center.copy(), self.mean3d.copy(),
            self.center_dist.copy(), self.source_index.copy(),
        )

    def splat(self, i: int) -> Splat2D:
        a, b, c = self.conic[i]
        return Splat2D(
            mean2d=self.mean2d[i].copy(),
            conic=np.array([[a, b], [b, c]]),
            color=self.color[i].copy(),
            opacity=float(self.opacity[i]),
            radius=float(self.radius[i]),
            global_depth=float(self.global_depth[i]),
            inv_cov3=self.inv_cov3[i].copy(),
            inv_cov_center=self.inv_cov_center[i].copy(),
            mean3d=self.mean3d[i].copy(),
            source_index=int(self.source_index[i]),
        )


def unpack_inv_cov(packed: np.ndarray) -> np.ndarray:
    """(…, 6) packed symmetric matrices to (…, 3, 3)."""
    p = np.asarray(packed, dtype=np.float64)
    m = np.empty(p.shape[:-1] + (3, 3))
    m[..., 0, 0] = p[..., 0]
    m[..., 1, 1] = p[..., 1]
    m[..., 2, 2] = p[..., 2]
    m[..., 0, 1] = m[..., 1, 0] = p[..., 3]
    m[..., 0, 2] = m[..., 2, 0] = p[..., 4]
    m[..., 1, 2] = m[..., 2, 1] = p[..., 5]
    return m


def project_scene(
    gaussians: list[Gaussian3D],
    cam: Camera,
    *,
    near: float = NEAR_PLANE,
    guard: float = GUARD_BAND,
    dilation: float = DILATION,
    inv_scale_clamp: float = INV_SCALE_CLAMP,
    eps: float = OPACITY_EPS,
) -> tuple[SplatBatch, dict]:
    """Project a scene into screen space for one camera.

    Culls Gaussians behind the near plane, outside the guard band
    (``guard`` times the half extents around the principal point), or
    with a degenerate screen covariance.  The screen covariance is the
    first-order projection J W Sigma W^T J^T plus ``dilation`` times the
    identity; its inverse is the blending conic.

    Returns the surviving splats and a stats dict with cull counts.
    """
    n = len(gaussians)
    stats = {"input": n, "behind": 0, "guard": 0, "degenerate": 0, "kept": 0}
    if n == 0:
        empty = SplatBatch(
            np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0),
            np.zeros(0), np.zeros(0), np.zeros((0, 6)), np.zeros((0, 3)),
            np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.int64),
        )
        return empty, stats

    means = np.stack([g.mean for g in gaussians])
    quats = np.stack([g.rotation for g in gaussians])
    scales = np.stack([g.scale for g in gaussians])
    opac = np.array([g.opacity for g in gaussians])
    sh = np.stack([g.sh for g in gaussians])

    w = cam.rotation
    rel = means - cam.position
    p_view = rel @ w.T
    z = p_view[:, 2]

    in_front = z > near
    stats["behind"] = int(n - in_front.sum())
    zs = np.where(in_front, z, 1.0)  # placeholder to keep arithmetic finite

    px = cam.fx * p_view[:, 0] / zs + cam.cx
    py = cam.fy * p_view[:, 1] / zs + cam.cy
    in_guard = (np.abs(px - cam.cx) <= guard * cam.width / 2.0) & (
        np.abs(py - cam.cy) <= guard * cam.height / 2.0
    )
    stats["guard"] = int((in_front & ~in_guard).sum())

    rot = _quats_to_matrices(quats)
    cov3 = np.einsum("nab,nb,ncb->nac", rot, scales * scales, rot)

    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = cam.fx / zs
    j[:, 0, 2] = -cam.fx * p_view[:, 0] / (zs * zs)
    j[:, 1, 1] = cam.fy / zs
    j[:, 1, 2] = -cam.fy * p_view[:, 1] / (zs * zs)
    m = j @ w
    cov2 = np.einsum("nij,njk,nlk->nil", m, cov3, m)
    a = cov2[:, 0, 0] + dilation
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + dilation
    det = a * c - b * b
    nondegenerate = det > 0
    stats["degenerate"] = int((in_front & in_guard & ~nondegenerate).sum())

    keep = in_front & in_guard & nondegenerate
    idx = np.flatnonzero(keep)
    stats["kept"] = len(idx)

    a, b, c, det = a[idx], b[idx], c[idx], det[idx]
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - a * c + b * b, 0.0))
    cutoff = np.zeros(len(idx))
    vis = opac[idx] > eps
    cutoff[vis] = np.sqrt(2.0 * np.log(opac[idx][vis] / eps))
    radius = cutoff * np.sqrt(lam_max)

    inv_s = np.minimum(1.0 / scales[idx], inv_scale_clamp)
    inv3 = np.einsum("nab,nb,ncb->nac", rot[idx], inv_s * inv_s, rot[idx])
    packed = np.stack(
        [inv3[:, 0, 0], inv3[:, 1, 1], inv3[:, 2, 2],
         inv3[:, 0, 1], inv3[:, 0, 2], inv3[:, 1, 2]],
        axis=1,
    )
    center = np.einsum("nab,nb->na", inv3, rel[idx])

    dist = np.linalg.norm(rel[idx], axis=1)
    dirs = rel[idx] / dist[:, None]
    color = np.clip(
        np.einsum("nk,nkc->nc", sh_basis(dirs), sh[idx]) + 0.5, 0.0, None
    )

    batch = SplatBatch(
        mean2d=np.stack([px[idx], py[idx]], axis=1),
        conic=conic,
        color=color,
        opacity=opac[idx].copy(),
        radius=radius,
        global_depth=z[idx].copy(),
        inv_cov3=packed,
        inv_cov_center=center,
        mean3d=means[idx].copy(),
        center_dist=dist,
        source_index=idx.astype(np.int64),
    )
    return batch, stats


def project_splat(
    gaussian: Gaussian3D, cam: Camera, source_index: int = 0, **kwargs
) -> Splat2D | None:
    """Project a single Gaussian; None when culled."""
    batch, _ = project_scene([gaussian], cam, **kwargs)
    if len(batch) == 0:
        return None
    s = batch.splat(0)
    s.source_index = source_index
    return s
