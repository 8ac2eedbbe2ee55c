"""Readers and writers for scenes, cameras, images, flow fields, and points.

Formats
-------
* Gaussian scenes as binary little-endian PLY in the de-facto checkpoint
  layout: per-vertex properties ``x y z``, ``f_dc_0..2``, ``f_rest_0..44``
  (channel-major), ``opacity`` (logit-encoded), ``scale_0..2``
  (log-encoded), ``rot_0..3`` (unnormalized quaternion, w first).  Extra
  properties such as ``nx ny nz`` are tolerated and ignored.
* A plain-text ``.gauss`` fixture format that stores decoded values
  directly, one Gaussian per line, so tests can state exact numbers
  without round-tripping activations.
* Cameras as a JSON array of ``{id, img_name, width, height, position,
  rotation, fx, fy}``.  ``rotation`` is interpreted as a world-to-view
  matrix; pass ``transpose=True`` for data stored view-to-world.
* Images as 8-bit PNG or PPM, float buffers clamped to [0, 1].
* Optical flow as Middlebury ``.flo`` (magic 202021.25).
* Sparse point sets as text lines ``x y z cam_id [cam_id ...]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.special import expit, logit

from .errors import SceneFormatError

SH_COEFFS = 16  # degree-3 basis

_PLY_SCALARS = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
}

_REQUIRED_PROPS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(45)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


@dataclass
class Gaussian3D:
    """One anisotropic 3D Gaussian primitive.

    Attributes
    ----------
    mean : (3,) float64
        World-space center.
    rotation : (4,) float64
        Unit quaternion, scalar first.
    scale : (3,) float64
        Per-axis standard deviations, strictly positive.
    opacity : float
        Base opacity in [0, 1].
    sh : (16, 3) float64
        RGB spherical-harmonics coefficients up to degree 3.
    """

    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.opacity = float(self.opacity)
        self.sh = np.asarray(self.sh, dtype=np.float64).reshape(SH_COEFFS, 3)


@dataclass
class Camera:
    """Pinhole camera with a world-to-view rotation.

    ``rotation`` maps world directions into the view frame (x right,
    y down, z forward); ``position`` is the camera origin in world space.
    The principal point defaults to the image center.  Pixel (i, j)
    covers the unit square with center (i + 0.5, j + 0.5).
    """

    rotation: np.ndarray
    position: np.ndarray
    fx: float
    fy: float
    width: int
    height: int
    cx: float | None = None
    cy: float | None = None

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.fx = float(self.fx)
        self.fy = float(self.fy)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width <= 0 or self.height <= 0:
            raise SceneFormatError("camera image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise SceneFormatError("camera focal lengths must be positive")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0
        self.cx = float(self.cx)
        self.cy = float(self.cy)
        drift = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if drift > 1e-6:
            raise SceneFormatError(
                f"camera rotation is not orthonormal (residual {drift:.3g})"
            )

    @property
    def view_direction(self) -> np.ndarray:
        """Unit forward axis in world space (third rotation row)."""
        return self.rotation[2].copy()


@dataclass
class SparsePointSet:
    """Sparse 3D points with per-point camera visibility lists."""

    points: np.ndarray
    visibility: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.visibility) != len(self.points):
            raise SceneFormatError("one visibility list required per point")

    def __len__(self) -> int:
        return len(self.points)


# ---------------------------------------------------------------------------
# PLY checkpoints


def _parse_ply_header(raw: bytes) -> tuple[int, int, list[tuple[str, str]]]:
    end = raw.find(b"end_header")
    if end < 0:
        raise SceneFormatError("PLY header has no end_header")
    body_start = raw.find(b"\n", end) + 1
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise SceneFormatError("not a PLY file")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    fmt_seen = False
    for line in lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "binary_little_endian":
                raise SceneFormatError(f"unsupported PLY format {tok[1]!r}")
            fmt_seen = True
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                count = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            if tok[1] == "list":
                raise SceneFormatError("list properties are not supported")
            if tok[1] not in _PLY_SCALARS:
                raise SceneFormatError(f"unsupported property type {tok[1]!r}")
            props.append((tok[2], _PLY_SCALARS[tok[1]]))
    if not fmt_seen:
        raise SceneFormatError("PLY header missing format line")
    if count is None:
        raise SceneFormatError("PLY header missing vertex element")
    return count, body_start, props


def load_ply(path: str | Path) -> list[Gaussian3D]:
    """Load a Gaussian checkpoint from binary PLY.

    Decodes scales with exp, opacities with the logistic sigmoid, and
    normalizes quaternions.  Records whose decoded fields are not finite
    (or whose scales degenerate to zero) are rejected.

    Raises
    ------
    SceneFormatError
        On malformed headers, missing required properties, truncated
        payloads, or non-finite decoded records.
    """
    raw = Path(path).read_bytes()
    count, body_start, props = _parse_ply_header(raw)
    names = [n for n, _ in props]
    for need in _REQUIRED_PROPS:
        if need not in names:
            raise SceneFormatError(f"PLY missing required property {need!r}")
    dtype = np.dtype([(n, f) for n, f in props])
    body = raw[body_start:]
    if len(body) < count * dtype.itemsize:
        raise SceneFormatError(
            f"PLY payload truncated: need {count * dtype.itemsize} bytes,"
            f" found {len(body)}"
        )
    table = np.frombuffer(body, dtype=dtype, count=count)

    def col(name):
        return np.asarray(table[name], dtype=np.float64)

    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    rest = np.stack([col(f"f_rest_{i}") for i in range(45)], axis=1)
    opacity = expit(col("opacity"))
    scale = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    quat = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)

    norms = np.linalg.norm(quat, axis=1)
    bad_quat = norms < 1e-12
    norms = np.where(bad_quat, 1.0, norms)
    quat = quat / norms[:, None]

    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0, :] = dc
    # f_rest is channel-major: 15 red coefficients, then green, then blue.
    for c in range(3):
        sh[:, 1:, c] = rest[:, 15 * c : 15 * (c + 1)]

    finite = (
        np.isfinite(means).all(axis=1)
        & np.isfinite(sh).all(axis=(1, 2))
        & np.isfinite(opacity)
        & np.isfinite(scale).all(axis=1)
        & (scale > 0).all(axis=1)
        & np.isfinite(quat).all(axis=1)
        & ~bad_quat
    )
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise SceneFormatError(f"record {idx}: non-finite or degenerate values")

    return [
        Gaussian3D(means[i], quat[i], scale[i], float(opacity[i]), sh[i])
        for i in range(count)
    ]


def save_ply(gaussians: list[Gaussian3D], path: str | Path) -> None:
    """Write Gaussians as a binary PLY checkpoint (inverse of ``load_ply``).

    Opacities are clamped to (1e-7, 1 - 1e-7) before the logit so the
    stored value stays finite.
    """
    n = len(gaussians)
    names = (
        ["x", "y", "z", "nx", "ny", "nz"]
        + [f"f_dc_{i}" for i in range(3)]
        + [f"f_rest_{i}" for i in range(45)]
        + ["opacity"]
        + [f"scale_{i}" for i in range(3)]
        + [f"rot_{i}" for i in range(4)]
    )
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    out = np.zeros((n, len(names)), dtype=np.float32)
    for i, g in enumerate(gaussians):
        rest = np.concatenate([g.sh[1:, c] for c in range(3)])
        op = np.clip(g.opacity, 1e-7, 1.0 - 1e-7)
        row = np.concatenate(
            [
                g.mean,
                np.zeros(3),
                g.sh[0],
                rest,
                [logit(op)],
                np.log(g.scale),
                g.rotation / np.linalg.norm(g.rotation),
            ]
        )
        out[i] = row.astype(np.float32)

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(out.tobytes())


# ---------------------------------------------------------------------------
# Text fixture scenes


def save_gauss(gaussians: list[Gaussian3D], path: str | Path) -> None:
    """Write the plain-text fixture format: per line, 3 mean values,
    4 quaternion values, 3 scales, opacity, then either 3 (degree 0)
    or 48 spherical-harmonics coefficients in coefficient-major order."""
    lines = ["# mean(3) quat(4) scale(3) opacity sh(3 or 48)"]
    for g in gaussians:
        vals = list(g.mean) + list(g.rotation) + list(g.scale) + [g.opacity]
        if np.any(g.sh[1:] != 0.0):
            vals += list(g.sh.reshape(-1))
        else:
            vals += list(g.sh[0])
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def load_gauss(path: str | Path) -> list[Gaussian3D]:
    """Read the plain-text fixture format written by ``save_gauss``."""
    gaussians = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        try:
            vals = np.array([float(t) for t in body.split()])
        except ValueError as exc:
            raise SceneFormatError(f"line {ln}: non-numeric value") from exc
        if vals.size not in (14, 59):
            raise SceneFormatError(
                f"line {ln}: expected 14 or 59 values, found {vals.size}"
            )
        sh = np.zeros((SH_COEFFS, 3))
        if vals.size == 14:
            sh[0] = vals[11:14]
        else:
            sh[:] = vals[11:59].reshape(SH_COEFFS, 3)
        gaussians.append(Gaussian3D(vals[0:3], vals[3:7], vals[7:10], vals[10], sh))
    return gaussians


def load_scene(path: str | Path) -> list[Gaussian3D]:
    """Dispatch on suffix: ``.ply`` checkpoints or ``.gauss`` fixtures."""
    p = Path(path)
    if p.suffix == ".ply":
        return load_ply(p)
    if p.suffix == ".gauss":
        return load_gauss(p)
    raise SceneFormatError(f"unknown scene format {p.suffix!r}")


# ---------------------------------------------------------------------------
# Cameras


def _orthonormalize(rows: np.ndarray) -> np.ndarray:
    # Gram-Schmidt on rows, mild drift only.
    q = rows.copy()
    q[0] /= np.linalg.norm(q[0])
    q[1] -= q[1] @ q[0] * q[0]
    q[1] /= np.linalg.norm(q[1])
    q[2] -= q[2] @ q[0] * q[0] + q[2] @ q[1] * q[1]
    q[2] /= np.linalg.norm(q[2])
    return q


def load_cameras(path: str | Path, transpose: bool = False) -> list[Camera]:
    """Load a JSON camera array.

    Parameters
    ----------
    path : path to the JSON file.
    transpose : bool
        Set when the stored rotations are view-to-world; they are
        transposed into the world-to-view convention used everywhere
        in this package.

    Rotations with orthonormality drift up to 1e-3 are re-orthonormalized;
    anything worse is rejected with the matrix determinant in the message.
    """
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"camera file is not valid JSON: {exc}") from exc
    if not isinstance(entries, list):
        raise SceneFormatError("camera file must hold a JSON array")
    cams = []
    for i, entry in enumerate(entries):
        for key in ("width", "height", "position", "rotation", "fx", "fy"):
            if key not in entry:
                raise SceneFormatError(f"camera entry {i} missing field {key!r}")
        rot = np.asarray(entry["rotation"], dtype=np.float64)
        if rot.shape != (3, 3):
            raise SceneFormatError(f"camera entry {i}: rotation must be 3x3")
        if transpose:
            rot = rot.T
        drift = np.abs(rot @ rot.T - np.eye(3)).max()
        if drift > 1e-3:
            det = np.linalg.det(rot)
            raise SceneFormatError(
                f"camera entry {i}: rotation drift {drift:.3g} exceeds 1e-3"
                f" (det {det:.6f})"
            )
        if drift > 1e-7:
            rot = _orthonormalize(rot)
        cams.append(
            Camera(
                rotation=rot,
                position=np.asarray(entry["position"], dtype=np.float64),
                fx=entry["fx"],
                fy=entry["fy"],
                width=entry["width"],
                height=entry["height"],
                cx=entry.get("cx"),
                cy=entry.get("cy"),
            )
        )
    return cams


def save_cameras(cameras: list[Camera], path: str | Path) -> None:
    """Write cameras as a JSON array (world-to-view rotations).

    Principal points are stored only when they differ from the image
    center, as optional ``cx``/``cy`` keys.
    """
    entries = []
    for i, cam in enumerate(cameras):
        entry = {
            "id": i,
            "img_name": f"frame_{i:04d}",
            "width": cam.width,
            "height": cam.height,
            "position": cam.position.tolist(),
            "rotation": cam.rotation.tolist(),
            "fx": cam.fx,
            "fy": cam.fy,
        }
        if cam.cx != cam.width / 2.0 or cam.cy != cam.height / 2.0:
            entry["cx"] = cam.cx
            entry["cy"] = cam.cy
        entries.append(entry)
    Path(path).write_text(json.dumps(entries, indent=1))


# ---------------------------------------------------------------------------
# Images


def write_image(buffer: np.ndarray, path: str | Path) -> None:
    """Write an HxWx3 float buffer as 8-bit PNG or PPM (by suffix).

    Values are clamped to [0, 1] and rounded; 1.0 maps to byte 255.
    """
    arr = np.asarray(buffer, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise SceneFormatError("image buffer must be HxWx3")
    data = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def read_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit image into an HxWx3 float array in [0, 1]."""
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


# ---------------------------------------------------------------------------
# Optical flow (.flo)

FLOW_MAGIC = 202021.25


def write_flow(flow: np.ndarray, path: str | Path) -> None:
    """Write an HxWx2 float32 flow field in Middlebury .flo layout."""
    arr = np.asarray(flow, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise SceneFormatError("flow buffer must be HxWx2")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(np.float32(FLOW_MAGIC).tobytes())
        fh.write(np.int32(w).tobytes())
        fh.write(np.int32(h).tobytes())
        fh.write(arr.tobytes())


def read_flow(path: str | Path) -> np.ndarray:
    """Read a Middlebury .flo file; validates magic and payload size."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise SceneFormatError("flow file shorter than its header")
    magic = np.frombuffer(raw, dtype=np.float32, count=1)[0]
    if not np.isclose(magic, FLOW_MAGIC):
        raise SceneFormatError(f"bad flow magic {magic!r}")
    w, h = np.frombuffer(raw, dtype=np.int32, count=2, offset=4)
    need = int(w) * int(h) * 2 * 4
    if len(raw) - 12 != need:
        raise SceneFormatError(
            f"flow payload is {len(raw) - 12} bytes, header declares {need}"
        )
    data = np.frombuffer(raw, dtype=np.float32, offset=12)
    return data.reshape(int(h), int(w), 2).astype(np.float64)


# ---------------------------------------------------------------------------
# Sparse point sets


def load_points(path: str | Path, num_cameras: int | None = None) -> SparsePointSet:
    """Read ``x y z cam_id [cam_id ...]`` lines.

    When ``num_cameras`` is given every referenced id is range-checked.
    """
    pts = []
    vis = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        tok = body.split()
        if len(tok) < 4:
            raise SceneFormatError(
                f"line {ln}: need x y z and at least one camera id"
            )
        pts.append([float(t) for t in tok[:3]])
        ids = [int(t) for t in tok[3:]]
        if num_cameras is not None:
            for cid in ids:
                if cid < 0 or cid >= num_cameras:
                    raise SceneFormatError(
                        f"line {ln}: camera id {cid} out of range"
                    )
        vis.append(ids)
    return SparsePointSet(np.array(pts, dtype=np.float64).reshape(-1, 3), vis)


def save_points(points: SparsePointSet, path: str | Path) -> None:
    lines = []
    for p, ids in zip(points.points, points.visibility):
        lines.append(
            " ".join(repr(float(v)) for v in p) + " " + " ".join(str(i) for i in ids)
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PFM float dumps (grayscale, little-endian)


def write_pfm(buffer: np.ndarray, path: str | Path) -> None:
    """Write a 2D float array as grayscale PFM (bottom row first)."""
    arr = np.asarray(buffer, dtype=np.float32)
    if arr.ndim != 2:
        raise SceneFormatError("PFM dump expects a 2D array")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(arr[::-1].tobytes())


def read_pfm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise SceneFormatError("not a grayscale PFM file")
    w, h = (int(t) for t in parts[1].split())
    scale = float(parts[2])
    dt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(parts[3], dtype=dt, count=w * h)
    return data.reshape(h, w)[::-1].astype(np.float64)
