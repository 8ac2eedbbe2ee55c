"""Perceptual image difference map (color and feature pipelines).

Computes a per-pixel difference in [0, 1] between two low-dynamic-range
images at a given viewing distance expressed as pixels per degree.  The
color pipeline filters opponent-space channels with contrast-sensitivity
kernels and measures a redistributed hue/lightness difference; the
feature pipeline compares edge and point responses of the achromatic
channel.  The map is exactly symmetric in its two inputs and zero only
for identical images.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import convolve

_SRGB2XYZ = np.array(
    [
        [0.41238656, 0.35759149, 0.18045049],
        [0.21263682, 0.71518298, 0.07218020],
        [0.01933062, 0.11919716, 0.95037259],
    ]
)
_XYZ2SRGB = np.linalg.inv(_SRGB2XYZ)
_D65 = _SRGB2XYZ @ np.ones(3)


def _srgb_to_linear(img):
    img = np.clip(img, 0.0, 1.0)
    low = img <= 0.04045
    return np.where(low, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)


def _linear_to_xyz(rgb):
    return rgb @ _SRGB2XYZ.T


def _xyz_to_ycxcz(xyz):
    xn = xyz / _D65
    y = 116.0 * xn[..., 1] - 16.0
    cx = 500.0 * (xn[..., 0] - xn[..., 1])
    cz = 200.0 * (xn[..., 1] - xn[..., 2])
    return np.stack([y, cx, cz], axis=-1)


def _ycxcz_to_linear(ycxcz):
    yn = (ycxcz[..., 0] + 16.0) / 116.0
    xn = ycxcz[..., 1] / 500.0 + yn
    zn = yn - ycxcz[..., 2] / 200.0
    xyz = np.stack([xn, yn, zn], axis=-1) * _D65
    return xyz @ _XYZ2SRGB.T


def _xyz_to_lab(xyz):
    xn = xyz / _D65
    delta = 6.0 / 29.0
    f = np.where(xn > delta ** 3, np.cbrt(xn), xn / (3 * delta * delta) + 4.0 / 29.0)
    lum = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([lum, a, b], axis=-1)


def _hunt_adjust(lab):
    out = lab.copy()
    scale = lab[..., 0:1] / 100.0
    out[..., 1:] = lab[..., 1:] * scale
    return out


def _hyab(a, b):
    d = a - b
    return np.abs(d[..., 0]) + np.sqrt(d[..., 1] ** 2 + d[..., 2] ** 2)


def _csf_kernel(a1, b1, a2, b2, ppd):
    b_max = 0.04  # largest scale parameter across the three channels
    radius = int(np.ceil(3 * np.sqrt(b_max / (2 * np.pi ** 2)) * ppd))
    ax = np.arange(-radius, radius + 1) / ppd
    x, y = np.meshgrid(ax, ax)
    z = x * x + y * y
    g = a1 * np.sqrt(np.pi / b1) * np.exp(-np.pi ** 2 * z / b1)
    g = g + a2 * np.sqrt(np.pi / b2) * np.exp(-np.pi ** 2 * z / b2)
    return g / g.sum()


def _detection_kernels(ppd):
    sd = 0.5 * 0.082 * ppd
    radius = int(np.ceil(3 * sd))
    ax = np.arange(-radius, radius + 1)
    x, y = np.meshgrid(ax, ax)
    g = np.exp(-(x * x + y * y) / (2 * sd * sd))
    edge = -x * g
    point = (x * x / (sd * sd) - 1) * g

    def normalize(k):
        neg = -k[k < 0].sum()
        pos = k[k > 0].sum()
        return np.where(k < 0, k / neg, k / pos)

    return normalize(edge), normalize(point)


def _preprocess(img, kernels):
    ycxcz = _xyz_to_ycxcz(_linear_to_xyz(_srgb_to_linear(img)))
    filtered = np.stack(
        [convolve(ycxcz[..., c], kernels[c], mode="reflect") for c in range(3)],
        axis=-1,
    )
    return np.clip(_ycxcz_to_linear(filtered), 0.0, 1.0)


def flip_error_map(a: np.ndarray, b: np.ndarray, ppd: float = 67.0) -> np.ndarray:
    """Per-pixel perceptual difference of two RGB images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"need matching HxWx3 images, got {a.shape} and {b.shape}")

    qc, qf = 0.7, 0.5
    pc, pt = 0.4, 0.95
    kernels = (
        _csf_kernel(1.0, 0.0047, 0.0, 1e-5, ppd),
        _csf_kernel(1.0, 0.0053, 0.0, 1e-5, ppd),
        _csf_kernel(34.1, 0.04, 13.5, 0.025, ppd),
    )

    pre_a = _hunt_adjust(_xyz_to_lab(_linear_to_xyz(_preprocess(a, kernels))))
    pre_b = _hunt_adjust(_xyz_to_lab(_linear_to_xyz(_preprocess(b, kernels))))
    hyab = _hyab(pre_a, pre_b)

    green = _hunt_adjust(_xyz_to_lab(_linear_to_xyz(np.array([[[0.0, 1.0, 0.0]]]))))
    blue = _hunt_adjust(_xyz_to_lab(_linear_to_xyz(np.array([[[0.0, 0.0, 1.0]]]))))
    cmax = float(_hyab(green, blue).item() ** qc)

    delta_c = hyab ** qc
    delta_c = np.where(
        delta_c < pc * cmax,
        (pt / (pc * cmax)) * delta_c,
        pt + ((delta_c - pc * cmax) / (cmax - pc * cmax)) * (1.0 - pt),
    )

    edge_k, point_k = _detection_kernels(ppd)
    ya = (_xyz_to_ycxcz(_linear_to_xyz(_srgb_to_linear(a)))[..., 0] + 16.0) / 116.0
    yb = (_xyz_to_ycxcz(_linear_to_xyz(_srgb_to_linear(b)))[..., 0] + 16.0) / 116.0

    def feature_mag(y, k):
        gx = convolve(y, k, mode="reflect")
        gy = convolve(y, k.T, mode="reflect")
        return np.sqrt(gx * gx + gy * gy)

    edge_diff = np.abs(feature_mag(ya, edge_k) - feature_mag(yb, edge_k))
    point_diff = np.abs(feature_mag(ya, point_k) - feature_mag(yb, point_k))
    delta_f = (np.maximum(edge_diff, point_diff) / np.sqrt(2.0)) ** qf

    return np.clip(delta_c ** (1.0 - delta_f), 0.0, 1.0)
