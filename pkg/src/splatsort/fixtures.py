"""Deterministic test scenes.

Each generator returns (gaussians, cameras, points) where points is a
sparse point set or None.  Geometry is chosen so specific pipeline
behaviors are observable: a blend-order flip under rotation, an exact
cosine-law depth, dense random overlap, interleaved depth layers, and a
near-opaque single surface.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .gaussian_math import matrix_to_quat
from .scene_io import Camera, Gaussian3D, SparsePointSet

_SH0 = 0.28209479177387814


def _flat_sh(rgb) -> np.ndarray:
    sh = np.zeros((16, 3))
    sh[0] = (np.asarray(rgb, dtype=np.float64) - 0.5) / _SH0
    return sh


def _rotation_y(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.asarray(linear, dtype=np.float64)
    return np.where(
        linear <= 0.0031308,
        12.92 * linear,
        1.055 * np.power(np.maximum(linear, 1e-12), 1.0 / 2.4) - 0.055,
    )


def _axes_quat(long_axis: np.ndarray) -> np.ndarray:
    """Quaternion whose rotation's first column is ``long_axis``."""
    u = np.asarray(long_axis, dtype=np.float64)
    u = u / np.linalg.norm(u)
    ref = np.array([0.0, 1.0, 0.0])
    if abs(u @ ref) > 0.9:
        ref = np.array([0.0, 0.0, 1.0])
    v = ref - (ref @ u) * u
    v = v / np.linalg.norm(v)
    w = np.cross(u, v)
    return matrix_to_quat(np.stack([u, v, w], axis=1))


def _popping_column(frame_index: int) -> int:
    """Column hit by the popping fixture's tracked ray in a given frame.

    The pan is a triangle wave, three pixels per frame, so the blend
    order of the foreground pair flips on every sweep.
    """
    phase = frame_index % 16
    off = -12 + 3 * phase if phase <= 8 else 36 - 3 * phase
    return 32 + off


def two_gaussian_popping(seed: int = 0):
    """Two overlapping Gaussians whose global-z order flips mid-path.

    The camera pans about the y axis in a triangle wave while drifting
    slowly forward along +z; the world +z axis is the tracked ray and
    lands exactly on the pixel column given by the pan phase, row 32,
    in every frame.  Along that ray the red Gaussian always peaks
    first, and the drift leaves the on-axis blend unchanged because the
    projected offset and footprint of every splat on the ray scale
    together.  The blue one's view-space z difference
    0.004 cos(phi) + 0.24 sin(phi) changes sign inside the sweep, so
    z-ordered blending pops on every pass while depth-ordered blending
    stays constant.  The backdrop is a field of overlapping isoluminant
    dot pairs whose own blend order also flips, at angles scattered
    through the sweep, under every ordering mode alike.  Each of those
    flips swaps chroma at sub-pixel scale: squared error measures the
    swaps at full strength, while a perceptual metric's chromatic
    filters suppress them, so the backdrop sets the kind of error floor
    against which only a perceptual metric makes the foreground pop
    stand out.
    """
    rng = np.random.default_rng(seed)
    gaussians = [
        Gaussian3D(
            mean=[0.0, 0.0, 2.0],
            rotation=[1.0, 0.0, 0.0, 0.0],
            scale=[0.12, 0.12, 0.12],
            opacity=0.88,
            sh=_flat_sh([0.56, 0.27, 0.20]),
        ),
        Gaussian3D(
            mean=[0.24, 0.0, 2.004],
            rotation=_axes_quat(np.array([0.0, 1.0, 0.0])),
            scale=[0.2, 0.13, 0.13],
            opacity=0.9,
            sh=_flat_sh([0.16, 0.33, 0.54]),
        ),
    ]
    # dot pairs at z = 3, split by dx in x and a small dz in depth
    # chosen so the ray from the drifting camera through the site turns
    # perpendicular to the split partway along the path: the pair's
    # blend order then flips once under every ordering mode, per-ray
    # and global alike.  Complementary isoluminant colors (constant
    # linear luminance) make each flip a pure chroma swap.  Sites keep
    # clear of the tracked row so the tracked ray only ever blends the
    # foreground pair and the smooth backing plane.
    lum_w = np.array([0.2126, 0.7152, 0.0722])
    for gx in np.linspace(-0.6, 0.6, 17):
        for gy in np.linspace(-0.42, 0.42, 12):
            if abs(gy) < 0.14:
                continue
            dr = rng.uniform(-0.38, 0.38)
            db = rng.uniform(-0.38, 0.38)
            dg = -(lum_w[0] * dr + lum_w[2] * db) / lum_w[1]
            delta = np.array([dr, dg, db])
            x0 = gx + rng.uniform(-0.02, 0.02)
            y0 = gy + rng.uniform(-0.02, 0.02)
            dx = 0.012 * rng.choice([-1.0, 1.0])
            dz = -x0 * dx / (3.0 - rng.uniform(0.012, 0.195))
            for sgn, off in ((1.0, (0.0, 0.0)), (-1.0, (dx, dz))):
                rgb = _srgb_encode(0.4 + sgn * delta)
                gaussians.append(
                    Gaussian3D(
                        mean=[x0 + off[0], y0, 3.0 + off[1]],
                        rotation=[1.0, 0.0, 0.0, 0.0],
                        scale=[0.02, 0.02, 0.02],
                        opacity=0.95,
                        sh=_flat_sh(rgb),
                    )
                )
    gaussians.append(
        Gaussian3D(
            mean=[0.0, 0.0, 3.4],
            rotation=[1.0, 0.0, 0.0, 0.0],
            scale=[1.3, 1.3, 0.05],
            opacity=0.96,
            sh=_flat_sh([0.55, 0.55, 0.55]),
        )
    )
    cameras = []
    for i in range(60):
        phi = np.arctan((32.0 - _popping_column(i)) / 110.0)
        cameras.append(
            Camera(
                rotation=_rotation_y(phi),
                position=np.array([0.0, 0.0, 0.0035 * i]),
                fx=110.0,
                fy=110.0,
                width=65,
                height=65,
            )
        )
    return gaussians, cameras, None


def tracked_pixel(frame_index: int) -> tuple[int, int]:
    """Pixel hit by the popping fixture's tracked ray in a given frame."""
    return _popping_column(frame_index), 32


def cosine_depth(seed: int = 0):
    """Unit isotropic Gaussian on the +y axis, camera looking along +y.

    For rays leaving the origin at angle theta to the axis, the blend
    depth is exactly (distance to mean) * cos(theta).
    """
    g = Gaussian3D(
        mean=[0.0, 2.0, 0.0],
        rotation=[1.0, 0.0, 0.0, 0.0],
        scale=[1.0, 1.0, 1.0],
        opacity=0.8,
        sh=_flat_sh([0.6, 0.6, 0.6]),
    )
    cam = Camera(
        rotation=np.array(
            [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]
        ),
        position=np.zeros(3),
        fx=55.0,
        fy=55.0,
        width=64,
        height=64,
    )
    return [g], [cam], None


def random_cloud(n: int = 100, seed: int = 0):
    """n anisotropic Gaussians filling the default camera's frustum."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(1.8, 4.5, n)
    x = rng.uniform(-0.25, 0.25, n) * z
    y = rng.uniform(-0.25, 0.25, n) * z
    scales = np.exp(rng.uniform(np.log(0.04), np.log(0.22), (n, 3)))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = rng.uniform(0.15, 0.6, n)
    rgb = rng.uniform(0.05, 0.95, (n, 3))
    rest = rng.uniform(-0.04, 0.04, (n, 15, 3))
    gaussians = []
    for i in range(n):
        sh = np.zeros((16, 3))
        sh[0] = (rgb[i] - 0.5) / _SH0
        sh[1:] = rest[i]
        gaussians.append(
            Gaussian3D(
                mean=[x[i], y[i], z[i]],
                rotation=quats[i],
                scale=scales[i],
                opacity=opacity[i],
                sh=sh,
            )
        )
    cameras = [
        Camera(
            rotation=np.eye(3),
            position=np.zeros(3),
            fx=110.0,
            fy=110.0,
            width=128,
            height=128,
        ),
        Camera(
            rotation=_rotation_y(np.deg2rad(3.0)),
            position=np.zeros(3),
            fx=110.0,
            fy=110.0,
            width=128,
            height=128,
        ),
    ]
    return gaussians, cameras, None


def layered_depth(seed: int = 0):
    """Tilted thin slabs of wide Gaussians plus a far backdrop.

    Points sit on the front slab's surface between Gaussian centers.
    Along the rays to them, the front surface is hit at the ray-plane
    intersection, which the per-ray blend depth reproduces for every
    covering Gaussian; a depth built from each Gaussian's distance to
    its mean is off by up to the in-plane offset times the tilt.
    """
    rng = np.random.default_rng(seed)
    gaussians = []
    grid = np.linspace(-0.5, 0.5, 3)
    front_quat = _axes_quat(np.array([1.0, 0.0, 0.8]))
    back_quat = _axes_quat(np.array([1.0, 0.0, -0.5]))
    for gx in grid:
        for gy in grid:
            jitter = rng.uniform(-0.05, 0.05, 3)
            gaussians.append(
                Gaussian3D(
                    mean=[gx, gy, 2.0 + 0.8 * gx],
                    rotation=front_quat,
                    scale=[0.35, 0.35, 0.01],
                    opacity=0.97,
                    sh=_flat_sh(np.clip([0.85, 0.55, 0.25] + jitter, 0.05, 0.95)),
                )
            )
            gaussians.append(
                Gaussian3D(
                    mean=[gx, gy, 2.9 - 0.5 * gx],
                    rotation=back_quat,
                    scale=[0.35, 0.35, 0.01],
                    opacity=0.97,
                    sh=_flat_sh(np.clip([0.25, 0.5, 0.85] + jitter, 0.05, 0.95)),
                )
            )
    for bx in np.linspace(-1.2, 1.2, 3):
        for by in np.linspace(-1.2, 1.2, 3):
            gaussians.append(
                Gaussian3D(
                    mean=[bx, by, 4.2],
                    rotation=[1.0, 0.0, 0.0, 0.0],
                    scale=[0.9, 0.9, 0.05],
                    opacity=0.97,
                    sh=_flat_sh([0.5, 0.5, 0.5]),
                )
            )
    offsets = np.linspace(-0.45, 0.45, 4)
    points = [
        [ox, oy, 2.0 + 0.8 * ox] for ox in offsets for oy in offsets
    ]
    cameras = [
        Camera(
            rotation=np.eye(3),
            position=np.zeros(3),
            fx=110.0,
            fy=110.0,
            width=128,
            height=128,
        ),
        Camera(
            rotation=_rotation_y(np.deg2rad(5.0)),
            position=np.zeros(3),
            fx=110.0,
            fy=110.0,
            width=128,
            height=128,
        ),
    ]
    point_set = SparsePointSet(
        points=np.array(points),
        visibility=[[0] for _ in points],
    )
    return gaussians, cameras, point_set


def single_gaussian_depth(seed: int = 0):
    """One near-opaque Gaussian dead center; expected depth is its t_opt."""
    g = Gaussian3D(
        mean=[0.0, 0.0, 0.8],
        rotation=[1.0, 0.0, 0.0, 0.0],
        scale=[0.12, 0.12, 0.12],
        opacity=0.9995,
        sh=_flat_sh([0.7, 0.7, 0.7]),
    )
    cam = Camera(
        rotation=np.eye(3),
        position=np.zeros(3),
        fx=110.0,
        fy=110.0,
        width=65,
        height=65,
    )
    points = SparsePointSet(points=np.array([[0.0, 0.0, 0.8]]), visibility=[[0]])
    return [g], [cam], points


_FIXTURES = {
    "two-gaussian-popping": two_gaussian_popping,
    "cosine-depth": cosine_depth,
    "random-cloud": random_cloud,
    "layered-depth": layered_depth,
    "single-gaussian-depth": single_gaussian_depth,
}


def fixture_names() -> list[str]:
    return sorted(_FIXTURES)


def make_fixture(name: str, seed: int = 0, count: int | None = None):
    """Build a fixture by name; random-cloud accepts a count suffix.

    ``random-cloud:250`` and ``random-cloud(250)`` both set n = 250.
    """
    key = name.strip().lower()
    if key.startswith("random-cloud") and key != "random-cloud":
        tail = key[len("random-cloud"):]
        tail = tail.strip(":()")
        try:
            count = int(tail)
        except ValueError as exc:
            raise ConfigError(f"cannot parse count from fixture name {name!r}") from exc
        key = "random-cloud"
    if key not in _FIXTURES:
        raise ConfigError(
            f"unknown fixture {name!r}; known: {', '.join(fixture_names())}"
        )
    if key == "random-cloud":
        return _FIXTURES[key](count if count is not None else 100, seed)
    return _FIXTURES[key](seed)
