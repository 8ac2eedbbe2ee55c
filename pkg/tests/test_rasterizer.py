"""Blending, binning, sort modes, and trajectory rendering."""

import numpy as np
import numpy.testing as npt
import pytest

from splatsort.errors import ConfigError
from splatsort.fixtures import random_cloud, two_gaussian_popping
from splatsort.gaussian_math import (
    project_scene,
    ray_for_pixel,
    t_opt,
)
from splatsort.rasterizer import (
    FullPerPixel,
    GlobalZ,
    Hierarchical,
    RenderConfig,
    Window,
    bin_and_sort,
    blend_pixel,
    interpolate_cameras,
    mode_name,
    parse_mode,
    render,
    render_depth,
    render_trajectory,
    validate_mode,
)
from splatsort.scene_io import Camera, Gaussian3D
from splatsort.tile_culling import tile_rect, tile_survives


def axis_camera(width=64, height=64, f=110.0):
    return Camera(
        rotation=np.eye(3), position=np.zeros(3),
        fx=f, fy=f, width=width, height=height,
    )


def flat_sh(rgb):
    sh = np.zeros((16, 3))
    sh[0] = (np.asarray(rgb, dtype=np.float64) - 0.5) / 0.28209479177387814
    return sh


def ball(mean, scale, opacity, rgb):
    return Gaussian3D(
        mean=mean, rotation=[1, 0, 0, 0],
        scale=[scale] * 3 if np.isscalar(scale) else scale,
        opacity=opacity, sh=flat_sh(rgb),
    )


class TestBlendPixel:
    def test_hand_values(self):
        red = np.array([1.0, 0.0, 0.0])
        blue = np.array([0.0, 0.0, 1.0])
        rgb, t = blend_pixel([(red, 0.5), (blue, 0.5)])
        npt.assert_allclose(rgb, [0.5, 0.0, 0.25], atol=1e-15)
        npt.assert_allclose(t, 0.25, atol=1e-15)
        rgb, t = blend_pixel([(blue, 0.5), (red, 0.5)])
        npt.assert_allclose(rgb, [0.25, 0.0, 0.5], atol=1e-15)
        npt.assert_allclose(t, 0.25, atol=1e-15)

    def test_empty(self):
        rgb, t = blend_pixel([])
        npt.assert_array_equal(rgb, np.zeros(3))
        assert t == 1.0

    def test_termination_stops_iteration(self):
        wall = (np.array([1.0, 1.0, 1.0]), 0.9999)
        tail = [(np.array([1.0, 0.0, 0.0]), 0.9)] * 50
        rgb_all, t_all = blend_pixel([wall] + tail, termination=1e-4)
        rgb_cut, _ = blend_pixel([wall], termination=1e-4)
        # everything behind the near-opaque wall is ignored
        npt.assert_allclose(rgb_all, rgb_cut, atol=1e-4)
        assert t_all <= 1e-4 * 0.1 + 1e-4

    def test_weights_and_transmittance_sum_to_one(self, rng):
        alphas = rng.uniform(0.05, 0.95, 12)
        contributions = [
            (rng.uniform(0, 1, 3), float(a)) for a in alphas
        ]
        rgb, t = blend_pixel(contributions, termination=0.0)
        weights = []
        acc = 1.0
        for a in alphas:
            weights.append(a * acc)
            acc *= 1.0 - a
        npt.assert_allclose(sum(weights) + t, 1.0, atol=1e-12)
        expect = sum(
            w * np.asarray(c) for w, (c, _) in zip(weights, contributions)
        )
        npt.assert_allclose(rgb, expect, atol=1e-12)


class TestModesAndParsing:
    def test_parse_round_trip(self):
        for mode in (
            GlobalZ(), FullPerPixel(), Window(5),
            Hierarchical(), Hierarchical(128, 12, 6),
        ):
            again = parse_mode(mode_name(mode))
            assert type(again) is type(mode)
            assert again == mode

    def test_parse_spellings(self):
        assert isinstance(parse_mode("globalz"), GlobalZ)
        assert isinstance(parse_mode("full"), FullPerPixel)
        assert parse_mode("window:8") == Window(8)
        assert parse_mode("window(3)") == Window(3)
        h = parse_mode("hierarchical:64/8/4")
        assert (h.queue_tail, h.queue_mid, h.queue_head) == (64, 8, 4)

    def test_parse_rejects_junk(self):
        for bad in ("sorted", "window:none", "window:0", "hier:1"):
            with pytest.raises(ConfigError):
                parse_mode(bad)

    def test_validate_window(self):
        with pytest.raises(ConfigError):
            validate_mode(Window(0))
        validate_mode(Window(1))

    def test_validate_hierarchical(self):
        validate_mode(Hierarchical())
        with pytest.raises(ConfigError, match="tail"):
            validate_mode(Hierarchical(queue_tail=63))
        with pytest.raises(ConfigError, match="tail"):
            validate_mode(Hierarchical(queue_tail=32))
        with pytest.raises(ConfigError, match="mid"):
            validate_mode(Hierarchical(queue_mid=6))
        with pytest.raises(ConfigError, match="head"):
            validate_mode(Hierarchical(queue_head=0))
        with pytest.raises(ConfigError):
            validate_mode(Hierarchical(batch_load=64))
        with pytest.raises(ConfigError):
            validate_mode(Hierarchical(batch_head=12))


class TestBinning:
    def test_exact_culling_only_keeps_live_tiles(self, rng):
        gs, cams, _ = random_cloud(40, seed=2)
        cam = cams[0]
        cfg = RenderConfig()
        batch, _ = project_scene(gs, cam)
        bins = bin_and_sort(batch, cam, FullPerPixel(), cfg)
        for tb in bins:
            tile = tile_rect(tb.tile_x, tb.tile_y, cfg.tile_size)
            for col in tb.splat:
                assert tile_survives(batch.splat(int(col)), tile)

    def test_exact_culling_loses_no_live_pair(self, rng):
        """Union over bins covers every (splat, tile) that survives."""
        gs, cams, _ = random_cloud(30, seed=3)
        cam = cams[0]
        cfg = RenderConfig()
        batch, _ = project_scene(gs, cam)
        bins = bin_and_sort(batch, cam, FullPerPixel(), cfg)
        have = {
            (tb.tile_x, tb.tile_y, int(c)) for tb in bins for c in tb.splat
        }
        gw = -(-cam.width // cfg.tile_size)
        gh = -(-cam.height // cfg.tile_size)
        for col in range(len(batch)):
            sp = batch.splat(col)
            for tx in range(gw):
                for ty in range(gh):
                    if tile_survives(sp, tile_rect(tx, ty, cfg.tile_size)):
                        assert (tx, ty, col) in have

    def test_globalz_bins_by_bounding_disc(self, rng):
        gs, cams, _ = random_cloud(40, seed=2)
        cam = cams[0]
        batch, _ = project_scene(gs, cam)
        coarse = bin_and_sort(batch, cam, GlobalZ(), RenderConfig())
        exact = bin_and_sort(batch, cam, FullPerPixel(), RenderConfig())
        n_coarse = sum(len(b) for b in coarse)
        n_exact = sum(len(b) for b in exact)
        assert n_coarse >= n_exact

    def test_globalz_keys_are_view_depth(self, rng):
        gs, cams, _ = random_cloud(25, seed=4)
        cam = cams[0]
        batch, _ = project_scene(gs, cam)
        for tb in bin_and_sort(batch, cam, GlobalZ(), RenderConfig()):
            npt.assert_allclose(
                tb.key, batch.global_depth[tb.splat], atol=1e-12
            )
            assert (np.diff(tb.key) >= 0).all()

    def test_sorted_mode_keys_increase(self, rng):
        gs, cams, _ = random_cloud(25, seed=4)
        cam = cams[0]
        batch, _ = project_scene(gs, cam)
        for tb in bin_and_sort(batch, cam, FullPerPixel(), RenderConfig()):
            assert (np.diff(tb.key) >= 0).all()

    def test_empty_batch(self):
        cam = axis_camera()
        batch, _ = project_scene([], cam)
        assert bin_and_sort(batch, cam, FullPerPixel(), RenderConfig()) == []


class TestRenderBasics:
    def test_empty_scene_is_background(self):
        cam = axis_camera(width=32, height=32)
        cfg = RenderConfig(background=np.array([0.2, 0.4, 0.6]))
        frame = render([], cam, FullPerPixel(), cfg)
        npt.assert_allclose(
            frame.color, np.broadcast_to([0.2, 0.4, 0.6], (32, 32, 3)),
            atol=1e-15,
        )
        npt.assert_array_equal(frame.transmittance, np.ones((32, 32)))

    def test_single_splat_center_value(self):
        """Center pixel of a centered splat blends alpha times color."""
        cam = axis_camera(width=65, height=65)
        g = ball([0.0, 0.0, 2.0], 0.15, 0.7, [0.9, 0.3, 0.1])
        frame = render([g], cam, FullPerPixel(), RenderConfig())
        # the projected center lands on the pixel grid center (32.5, 32.5)
        alpha = 0.7  # peak of the Gaussian is 1 at its mean
        expect = alpha * np.array([0.9, 0.3, 0.1])
        npt.assert_allclose(frame.color[32, 32], expect, rtol=2e-3)
        npt.assert_allclose(frame.transmittance[32, 32], 0.3, rtol=5e-3)

    def test_modes_agree_when_order_cannot_matter(self):
        """Disjoint splats: every mode sees one contribution per ray."""
        cam = axis_camera(width=64, height=64)
        gs = [
            ball([-0.4, -0.4, 2.0], 0.05, 0.8, [0.9, 0.1, 0.1]),
            ball([0.45, 0.42, 2.6], 0.05, 0.8, [0.1, 0.9, 0.2]),
            ball([-0.42, 0.44, 3.2], 0.05, 0.8, [0.2, 0.3, 0.9]),
        ]
        frames = {
            name: render(gs, cam, mode, RenderConfig())
            for name, mode in (
                ("g", GlobalZ()), ("f", FullPerPixel()),
                ("w", Window(4)), ("h", Hierarchical()),
            )
        }
        for name in ("g", "w", "h"):
            npt.assert_allclose(
                frames[name].color, frames["f"].color, atol=1e-6
            )
            npt.assert_allclose(
                frames[name].transmittance, frames["f"].transmittance,
                atol=1e-6,
            )

    def test_background_composited_with_transmittance(self, rng):
        gs, cams, _ = random_cloud(40, seed=6)
        cam = cams[0]
        black = render(
            gs, cam, FullPerPixel(),
            RenderConfig(background=np.zeros(3)),
        )
        white = render(
            gs, cam, FullPerPixel(),
            RenderConfig(background=np.ones(3)),
        )
        diff = white.color - black.color
        for c in range(3):
            npt.assert_allclose(diff[..., c], black.transmittance, atol=1e-9)

    def test_records_replay_reproduces_frame(self, rng):
        """Captured (color, alpha) records re-blend to the pixel exactly."""
        gs, cams, _ = random_cloud(60, seed=7)
        cam = cams[0]
        cfg = RenderConfig(capture_records=True)
        frame = render(gs, cam, FullPerPixel(), cfg)
        batch, _ = project_scene(gs, cam)
        ys = rng.integers(0, cam.height, 40)
        xs = rng.integers(0, cam.width, 40)
        for y, x in zip(ys, xs):
            rec = frame.records[y][x]
            contributions = [
                (batch.color[int(c)], float(a))
                for c, a in zip(rec.splat, rec.alpha)
            ]
            rgb, t = blend_pixel(contributions, termination=0.0)
            npt.assert_allclose(t, frame.transmittance[y, x], atol=1e-12)
            npt.assert_allclose(rgb, frame.color[y, x], atol=1e-12)

    def test_opacity_cap_keeps_transmittance_positive(self):
        cam = axis_camera(width=33, height=33)
        gs = [ball([0.0, 0.0, 2.0], 0.3, 1.0, [1.0, 1.0, 1.0])]
        cfg = RenderConfig(alpha_cap=0.99)
        frame = render(gs, cam, FullPerPixel(), cfg)
        assert frame.transmittance.min() >= 0.0099999
        tight = render(
            gs, cam, FullPerPixel(), RenderConfig(alpha_cap=0.9)
        )
        assert tight.transmittance.min() >= 0.0999999

    def test_low_opacity_splats_are_dropped(self):
        cam = axis_camera(width=32, height=32)
        gs = [ball([0.0, 0.0, 2.0], 0.2, 1e-4, [1.0, 0.0, 0.0])]
        frame = render(gs, cam, FullPerPixel(), RenderConfig())
        npt.assert_array_equal(frame.color, np.zeros((32, 32, 3)))

    def test_sorted_order_actually_differs_from_globalz(self):
        """An occlusion inversion scene: the modes must disagree."""
        cam = axis_camera(width=65, height=65)
        # wide slab tilted about y: its mean is far, but the surface
        # sweeps well in front of the ball near the image center
        theta = -0.6
        tilt = [np.cos(theta / 2), 0.0, np.sin(theta / 2), 0.0]
        tilted = Gaussian3D(
            mean=[0.9, 0.0, 2.4], rotation=tilt,
            scale=[1.2, 0.3, 0.012], opacity=0.95,
            sh=flat_sh([0.9, 0.2, 0.1]),
        )
        small = ball([0.0, 0.0, 2.35], 0.05, 0.95, [0.1, 0.3, 0.9])
        gs = [tilted, small]
        f = render(gs, cam, FullPerPixel(), RenderConfig())
        g = render(gs, cam, GlobalZ(), RenderConfig())
        assert np.abs(f.color - g.color).max() > 0.05


class TestRayOrderAcrossViews:
    """Two rotated cameras share world rays at integer pixel centers.

    The per-ray blend order is a property of the ray, not the camera, so
    the records each view captures on the shared ray must list splats in
    the same order and blend to the same color.
    """

    def pan_camera(self, m):
        # a column offset of m pixels at fx = 110 and 65 px width keeps
        # the world axis ray on pixel centers: x = cx - m
        phi = np.arctan2(m, 110.0)
        c, s = np.cos(phi), np.sin(phi)
        rot = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
        return Camera(
            rotation=rot, position=np.zeros(3),
            fx=110.0, fy=110.0, width=65, height=65,
        )

    def test_shared_ray_order_and_color(self):
        scene, _, _ = two_gaussian_popping()
        cfg = RenderConfig(capture_records=True)
        pixels = {}
        records = {}
        for m in (-6, 7):
            cam = self.pan_camera(m)
            frame = render(scene, cam, FullPerPixel(), cfg)
            x = int(np.floor(cam.cx - m))
            # confirm the axis ray really goes through this pixel center
            ray = ray_for_pixel(cam, x + 0.5, 32 + 0.5)
            npt.assert_allclose(ray.direction, [0, 0, 1], atol=1e-12)
            rec = frame.records[32][x]
            src = frame.source_index[rec.splat.astype(int)]
            pixels[m] = frame.color[32, x]
            records[m] = (src, rec.depth, rec.alpha)
        src_a, dep_a, al_a = records[-6]
        src_b, dep_b, al_b = records[7]
        shared = set(src_a) & set(src_b)
        pa = [s for s in src_a if s in shared]
        pb = [s for s in src_b if s in shared]
        assert pa == pb  # identical blend order on the shared ray
        da = {s: d for s, d in zip(src_a, dep_a)}
        db = {s: d for s, d in zip(src_b, dep_b)}
        for s in shared:
            npt.assert_allclose(da[s], db[s], atol=1e-9)
        # alphas on the shared ray drift with the screen-space
        # resampling of the footprint but stay the same magnitude;
        # ordering is exact, which is the property under test
        aa = {s: a for s, a in zip(src_a, al_a)}
        ba = {s: a for s, a in zip(src_b, al_b)}
        for s in shared:
            npt.assert_allclose(aa[s], ba[s], rtol=0.15, atol=1e-4)


class TestWindowConvergence:
    def test_large_window_equals_full(self, rng):
        gs, cams, _ = random_cloud(120, seed=8)
        cam = cams[0]
        full = render(gs, cam, FullPerPixel(), RenderConfig())
        wide = render(gs, cam, Window(256), RenderConfig())
        npt.assert_array_equal(wide.color, full.color)
        npt.assert_array_equal(wide.transmittance, full.transmittance)

    def test_window_error_shrinks_with_size(self):
        gs, cams, _ = random_cloud(300, seed=9)
        cam = cams[0]
        full = render(gs, cam, FullPerPixel(), RenderConfig())
        errs = []
        for k in (2, 8, 32):
            wk = render(gs, cam, Window(k), RenderConfig())
            errs.append(float(np.abs(wk.color - full.color).mean()))
        assert errs[0] >= errs[1] >= errs[2]
        assert errs[2] <= 1e-6 or errs[2] < errs[0]


class TestHierarchical:
    def test_shallow_scene_bit_equal_to_full(self):
        """At most queue_head contributions per ray: no approximation."""
        cam = axis_camera(width=48, height=48)
        gs = [
            ball([0.0, 0.0, 2.0], 0.25, 0.6, [0.8, 0.2, 0.2]),
            ball([0.05, 0.02, 2.5], 0.25, 0.6, [0.2, 0.8, 0.2]),
            ball([-0.04, 0.03, 3.1], 0.25, 0.6, [0.2, 0.2, 0.8]),
            ball([0.02, -0.05, 3.7], 0.25, 0.6, [0.7, 0.7, 0.1]),
        ]
        full = render(gs, cam, FullPerPixel(), RenderConfig())
        hier = render(gs, cam, Hierarchical(), RenderConfig())
        npt.assert_allclose(hier.color, full.color, atol=1e-12)
        npt.assert_allclose(
            hier.transmittance, full.transmittance, atol=1e-12
        )

    def test_tracks_full_closely_on_dense_scene(self):
        gs, cams, _ = random_cloud(400, seed=10)
        cam = cams[0]
        full = render(gs, cam, FullPerPixel(), RenderConfig())
        hier = render(gs, cam, Hierarchical(), RenderConfig())
        globalz = render(gs, cam, GlobalZ(), RenderConfig())
        err_h = float(np.abs(hier.color - full.color).mean())
        err_g = float(np.abs(globalz.color - full.color).mean())
        assert err_h <= err_g
        assert err_h < 5e-3

    def test_mid_depth_at_center_variant_renders(self):
        gs, cams, _ = random_cloud(100, seed=11)
        frame = render(
            gs, cams[0], Hierarchical(mid_depth_at_center=True),
            RenderConfig(),
        )
        assert np.isfinite(frame.color).all()


class TestDeterminism:
    def test_repeat_runs_identical(self):
        gs, cams, _ = random_cloud(150, seed=12)
        a = render(gs, cams[0], FullPerPixel(), RenderConfig())
        b = render(gs, cams[0], FullPerPixel(), RenderConfig())
        npt.assert_array_equal(a.color, b.color)

    def test_worker_count_invisible(self):
        gs, cams, _ = random_cloud(150, seed=13)
        for mode in (GlobalZ(), FullPerPixel(), Hierarchical()):
            ref = render(gs, cams[0], mode, RenderConfig(workers=1))
            par = render(gs, cams[0], mode, RenderConfig(workers=2))
            npt.assert_array_equal(par.color, ref.color)
            npt.assert_array_equal(par.transmittance, ref.transmittance)

    def test_tie_break_by_rank_is_stable(self):
        """Coincident splats blend in insertion order, not hash order."""
        cam = axis_camera(width=33, height=33)
        gs = [
            ball([0.0, 0.0, 2.0], 0.1, 0.5, [1.0, 0.0, 0.0]),
            ball([0.0, 0.0, 2.0], 0.1, 0.5, [0.0, 0.0, 1.0]),
        ]
        frame = render(gs, cam, FullPerPixel(), RenderConfig())
        again = render(gs, cam, FullPerPixel(), RenderConfig())
        npt.assert_array_equal(frame.color, again.color)
        # red listed first wins the front slot: more red than blue
        c = frame.color[16, 16]
        assert c[0] > c[2]


class TestDepthBuffer:
    def test_empty_pixels_read_zero(self):
        cam = axis_camera(width=16, height=16)
        frame = render_depth([], cam, FullPerPixel(), RenderConfig())
        npt.assert_array_equal(frame.depth, np.zeros((16, 16)))

    def test_single_splat_center_depth(self):
        from splatsort.fixtures import single_gaussian_depth

        from splatsort.gaussian_math import build_inverse_covariance

        gs, cams, _ = single_gaussian_depth()
        cam = cams[0]
        frame = render_depth(gs, cam, FullPerPixel(), RenderConfig())
        x = int(cam.cx)
        y = int(cam.cy)
        coverage = 1.0 - frame.transmittance[y, x]
        zeta = frame.depth[y, x] / coverage
        ray = ray_for_pixel(cam, x + 0.5, y + 0.5)
        inv = build_inverse_covariance(gs[0].rotation, gs[0].scale)
        expect = t_opt(inv, gs[0].mean, ray)
        npt.assert_allclose(zeta, expect, atol=1e-3)

    def test_front_surface_dominates(self):
        cam = axis_camera(width=33, height=33)
        gs = [
            ball([0.0, 0.0, 2.0], 0.1, 0.98, [1, 1, 1]),
            ball([0.0, 0.0, 3.5], 0.1, 0.98, [1, 0, 0]),
        ]
        frame = render_depth(gs, cam, FullPerPixel(), RenderConfig())
        zeta = frame.depth[16, 16] / (1.0 - frame.transmittance[16, 16])
        assert abs(zeta - 2.0) < 0.05


class TestTrajectories:
    def test_no_interpolation_passthrough(self):
        gs, cams, _ = random_cloud(30, seed=14)
        frames = render_trajectory(gs, cams, FullPerPixel(), RenderConfig())
        assert len(frames) == len(cams)

    def test_interpolation_count_and_endpoints(self):
        gs, cams, _ = random_cloud(30, seed=15)
        direct = [
            render(gs, c, FullPerPixel(), RenderConfig()) for c in cams
        ]
        frames = render_trajectory(
            gs, cams, FullPerPixel(), RenderConfig(), interpolate=30
        )
        assert len(frames) == 2 + 30
        npt.assert_array_equal(frames[0].color, direct[0].color)
        npt.assert_array_equal(frames[-1].color, direct[-1].color)

    def test_interpolate_cameras_properties(self):
        gs, cams, _ = random_cloud(5, seed=16)
        path = interpolate_cameras(cams, 3)
        assert len(path) == 2 + 3
        for cam in path:
            npt.assert_allclose(
                cam.rotation @ cam.rotation.T, np.eye(3), atol=1e-12
            )
        mid = path[2]
        npt.assert_allclose(
            mid.position, 0.5 * (cams[0].position + cams[1].position),
            atol=1e-12,
        )

    def test_interpolation_rejects_negative(self):
        gs, cams, _ = random_cloud(5, seed=16)
        with pytest.raises(ConfigError):
            interpolate_cameras(cams, -1)
