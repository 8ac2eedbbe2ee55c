"""Command-line workflows: render, compare, eval, bench, fixture.

A JSON config file is the source of truth for every run; flags override
individual keys.  All reports are written as JSON next to any
human-readable table.  Exit codes: 0 success, 1 usage or config error,
2 runtime data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SceneFormatError
from .fixtures import make_fixture
from .gaussian_math import OPACITY_EPS
from .metrics import (
    border_crop,
    depth_error,
    format_table,
    psnr,
    sort_error,
    trajectory_flows,
    view_consistency,
    warp_frame,
)
from .rasterizer import (
    RenderConfig,
    interpolate_cameras,
    mode_name,
    parse_mode,
    render,
    render_depth,
)
from .scene_io import (
    load_cameras,
    load_points,
    load_scene,
    save_cameras,
    save_gauss,
    save_points,
    write_image,
    write_pfm,
)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SPLATSORT_WORKERS", "1")))
    except ValueError:
        return 1


@dataclass
class RunConfig:
    """One experiment: inputs, mode, thresholds, metric selections."""

    scene: str | None = None
    cameras: str | None = None
    output: str = "out"
    mode: str = "full"
    modes: list[str] | None = None
    opacity_eps: float = OPACITY_EPS
    termination: float = 1e-4
    alpha_cap: float = 0.99
    background: list[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    interpolate: int = 0
    offsets: list[int] = field(default_factory=lambda: [1, 7])
    metric: str = "both"
    workers: int = field(default_factory=_default_workers)
    seed: int = 0
    exact_tile_culling: str = "auto"
    save_depth: bool = False
    save_transmittance: bool = False
    points: str | None = None
    count: int | None = None
    transpose_rotations: bool = False

    def validate(self, need_scene: bool) -> None:
        if need_scene:
            for label, path in (("scene", self.scene), ("cameras", self.cameras)):
                if path is None:
                    raise ConfigError(f"missing required config key: {label}")
                if not os.path.exists(path):
                    raise ConfigError(f"{label} path does not exist: {path}")
        if self.points is not None and not os.path.exists(self.points):
            raise ConfigError(f"points path does not exist: {self.points}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.interpolate < 0:
            raise ConfigError("interpolate must be >= 0")
        if any(t < 1 for t in self.offsets):
            raise ConfigError("offsets must all be >= 1")
        if self.metric not in ("flip", "mse", "both"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.exact_tile_culling not in ("auto", "on", "off"):
            raise ConfigError("exact_tile_culling must be auto, on, or off")
        if len(self.background) != 3:
            raise ConfigError("background needs exactly 3 components")
        parse_mode(self.mode)
        for m in self.modes or []:
            parse_mode(m)

    def render_config(self) -> RenderConfig:
        exact = {"auto": None, "on": True, "off": False}[self.exact_tile_culling]
        return RenderConfig(
            opacity_eps=self.opacity_eps,
            termination=self.termination,
            alpha_cap=self.alpha_cap,
            background=np.asarray(self.background, dtype=np.float64),
            workers=self.workers,
            exact_tile_culling=exact,
        )


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    """Config file plus CLI overrides; unknown keys are rejected."""
    data: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file does not exist: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def _load_inputs(rc: RunConfig):
    scene = load_scene(rc.scene)
    cams = load_cameras(rc.cameras, transpose=rc.transpose_rotations)
    return scene, interpolate_cameras(cams, rc.interpolate)


def _camera_entry(cam) -> dict:
    return {
        "position": [float(v) for v in cam.position],
        "rotation": [[float(v) for v in row] for row in cam.rotation],
        "fx": cam.fx,
        "fy": cam.fy,
        "width": cam.width,
        "height": cam.height,
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_render(rc: RunConfig) -> int:
    rc.validate(need_scene=True)
    scene, cams = _load_inputs(rc)
    mode = parse_mode(rc.mode)
    cfg = rc.render_config()
    if rc.save_depth:
        cfg.with_depth = True
    os.makedirs(rc.output, exist_ok=True)
    entries = []
    errors = []
    for i, cam in enumerate(cams):
        try:
            frame = render(scene, cam, mode, cfg)
        except Exception as exc:  # keep going, report per frame
            errors.append({"frame": i, "error": str(exc)})
            continue
        name = f"frame_{i:04d}.png"
        write_image(frame.color, os.path.join(rc.output, name))
        entry = {
            "frame": i,
            "file": name,
            "camera": _camera_entry(cam),
            "timings": frame.stats["timings"],
            "nonfinite_pixels": len(frame.stats["nonfinite_pixels"]),
        }
        if rc.save_depth:
            dname = f"depth_{i:04d}.pfm"
            write_pfm(frame.depth, os.path.join(rc.output, dname))
            entry["depth_file"] = dname
        if rc.save_transmittance:
            tname = f"transmittance_{i:04d}.pfm"
            write_pfm(frame.transmittance, os.path.join(rc.output, tname))
            entry["transmittance_file"] = tname
        entries.append(entry)
    manifest = {
        "mode": mode_name(mode),
        "frames": entries,
        "errors": errors,
        "config": asdict(rc),
    }
    _write_json(os.path.join(rc.output, "manifest.json"), manifest)
    print(f"rendered {len(entries)} frames ({len(errors)} failed) to {rc.output}")
    return 0


def cmd_compare(rc: RunConfig) -> int:
    rc.validate(need_scene=True)
    if not rc.modes or len(rc.modes) < 2:
        raise ConfigError("compare needs at least 2 modes")
    scene, cams = _load_inputs(rc)
    modes = [parse_mode(m) for m in rc.modes]
    cfg = rc.render_config()
    cfg.capture_records = True
    os.makedirs(rc.output, exist_ok=True)

    per_mode = {}
    frames_by_mode = {}
    for m in modes:
        nm = mode_name(m)
        t0 = time.perf_counter()
        frames = [render(scene, cam, m, cfg) for cam in cams]
        wall = time.perf_counter() - t0
        stats = [sort_error(f) for f in frames]
        stage = {
            k: float(np.sum([f.stats["timings"][k] for f in frames]))
            for k in ("project", "duplicate", "sort", "blend", "total")
        }
        per_mode[nm] = {
            "delta_max": max(s.delta_max for s in stats),
            "delta_avg": float(np.mean([s.delta_avg for s in stats])),
            "entries": float(np.mean([f.stats["bin_entries"] for f in frames])),
            "wall_s": wall,
            "stage_s": stage,
        }
        frames_by_mode[nm] = frames

    names = list(per_mode)
    pair_diff = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = frames_by_mode[names[i]], frames_by_mode[names[j]]
            diff = max(
                float(np.abs(fa.color - fb.color).max()) for fa, fb in zip(a, b)
            )
            pair_diff[f"{names[i]}|{names[j]}"] = diff

    report = {"modes": per_mode, "max_abs_diff": pair_diff, "frames": len(cams)}
    _write_json(os.path.join(rc.output, "compare.json"), report)
    rows = [
        [nm, f"{v['delta_max']:.6f}", f"{v['delta_avg']:.6f}",
         f"{v['entries']:.0f}", f"{v['wall_s']:.3f}"]
        for nm, v in per_mode.items()
    ]
    print(format_table(
        ["mode", "delta_max", "delta_avg", "entries", "wall_s"], rows
    ))
    return 0


def cmd_eval(rc: RunConfig) -> int:
    rc.validate(need_scene=True)
    scene, cams = _load_inputs(rc)
    mode = parse_mode(rc.mode)
    cfg = rc.render_config()
    os.makedirs(rc.output, exist_ok=True)

    frames = [render_depth(scene, cam, mode, cfg) for cam in cams]
    offsets = tuple(rc.offsets)
    fwd, bwd = trajectory_flows(frames, cams, offsets)
    report = view_consistency(frames, fwd, bwd, offsets, rc.metric)

    psnr_t = {}
    for t in offsets:
        if len(frames) < t + 1:
            continue
        h, w = frames[0].color.shape[:2]
        c = border_crop(h, w)
        region = (slice(c, h - c), slice(c, w - c))
        vals = []
        for i in range(len(frames) - t):
            warped, _ = warp_frame(frames[i + t].color, fwd[(i, i + t)][0])
            vals.append(psnr(frames[i].color[region], warped[region]))
        finite = [v for v in vals if np.isfinite(v)]
        psnr_t[t] = float(np.mean(finite)) if finite else float("inf")

    e_depth = None
    if rc.points is not None:
        points = load_points(rc.points, num_cameras=len(cams))
        e_depth = depth_error(scene, cams, points, [mode], cfg).values

    payload = {
        "mode": mode_name(mode),
        "flip": {str(k): v for k, v in report.flip_t.items()},
        "mse": {str(k): v for k, v in report.mse_t.items()},
        "psnr": {str(k): v for k, v in psnr_t.items()},
        "e_depth": e_depth,
        "frames_used": report.frames_used,
    }
    _write_json(os.path.join(rc.output, "eval.json"), payload)
    rows = [
        [f"t={t}",
         f"{report.flip_t.get(t, float('nan')):.6f}",
         f"{report.mse_t.get(t, float('nan')):.6f}",
         f"{psnr_t.get(t, float('nan')):.2f}"]
        for t in offsets
    ]
    print(format_table(["offset", "flip", "mse", "psnr_db"], rows))
    if e_depth is not None:
        print(f"e_depth: {e_depth}")
    return 0


def cmd_bench(rc: RunConfig) -> int:
    rc.validate(need_scene=True)
    scene, cams = _load_inputs(rc)
    mode_texts = rc.modes if rc.modes else [rc.mode]
    modes = [parse_mode(m) for m in mode_texts]
    cfg = rc.render_config()
    os.makedirs(rc.output, exist_ok=True)

    stages = ("project", "duplicate", "sort", "blend", "total")
    results = {}
    for m in modes:
        nm = mode_name(m)
        frames = [render(scene, cam, m, cfg) for cam in cams]
        means = {
            k: float(np.mean([f.stats["timings"][k] for f in frames]))
            for k in stages
        }
        results[nm] = {
            "stage_mean_s": means,
            "entries_mean": float(
                np.mean([f.stats["bin_entries"] for f in frames])
            ),
            "frames": len(frames),
        }
    _write_json(os.path.join(rc.output, "bench.json"), results)
    rows = [
        [nm] + [f"{v['stage_mean_s'][k] * 1e3:.2f}" for k in stages]
        + [f"{v['entries_mean']:.0f}"]
        for nm, v in results.items()
    ]
    print(format_table(
        ["mode"] + [f"{k}_ms" for k in stages] + ["entries"], rows
    ))
    return 0


def cmd_fixture(rc: RunConfig, name: str) -> int:
    gaussians, cams, points = make_fixture(name, seed=rc.seed, count=rc.count)
    os.makedirs(rc.output, exist_ok=True)
    scene_path = os.path.join(rc.output, "scene.gauss")
    cam_path = os.path.join(rc.output, "cameras.json")
    save_gauss(gaussians, scene_path)
    save_cameras(cams, cam_path)
    written = [scene_path, cam_path]
    if points is not None:
        pts_path = os.path.join(rc.output, "points.txt")
        save_points(points, pts_path)
        written.append(pts_path)
    print("\n".join(written))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}") from exc


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse int list {text!r}") from exc


def build_parser() -> _Parser:
    p = _Parser(prog="splatsort", description="depth-sorted Gaussian rasterizer")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--scene", help="scene file (.ply or .gauss)")
        sp.add_argument("--cameras", help="camera JSON file")
        sp.add_argument("--out", dest="output", help="output directory")
        sp.add_argument("--mode", help="globalz | full | window:K | hierarchical")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--eps", dest="opacity_eps", type=float,
                        help="contribution threshold")
        sp.add_argument("--termination", type=float)
        sp.add_argument("--alpha-cap", dest="alpha_cap", type=float)
        sp.add_argument("--background", type=_csv_floats, metavar="R,G,B")
        sp.add_argument("--interpolate", type=int,
                        help="frames inserted between camera pairs")
        sp.add_argument("--exact-culling", dest="exact_tile_culling",
                        choices=["auto", "on", "off"])
        sp.add_argument("--transpose-rotations", dest="transpose_rotations",
                        action="store_const", const=True)

    sp = sub.add_parser("render", help="render a trajectory to image files")
    common(sp)
    sp.add_argument("--depth", dest="save_depth", action="store_const", const=True)
    sp.add_argument("--transmittance", dest="save_transmittance",
                    action="store_const", const=True)

    sp = sub.add_parser("compare", help="sort error and image diff across modes")
    common(sp)
    sp.add_argument("--modes", type=lambda s: s.split(","),
                    help="comma-separated mode list")

    sp = sub.add_parser("eval", help="view-consistency and depth metrics")
    common(sp)
    sp.add_argument("--offsets", type=_csv_ints, metavar="T1,T2")
    sp.add_argument("--metric", choices=["flip", "mse", "both"])
    sp.add_argument("--points", help="sparse point file for depth error")

    sp = sub.add_parser("bench", help="per-stage timing table")
    common(sp)
    sp.add_argument("--modes", type=lambda s: s.split(","))

    sp = sub.add_parser("fixture", help="generate a deterministic test scene")
    common(sp)
    sp.add_argument("name", help="fixture name, e.g. two-gaussian-popping")
    sp.add_argument("--count", type=int, help="element count for random-cloud")

    return p


_CONFIG_KEYS = (
    "scene", "cameras", "output", "mode", "modes", "opacity_eps",
    "termination", "alpha_cap", "background", "interpolate", "offsets",
    "metric", "workers", "seed", "exact_tile_culling", "save_depth",
    "save_transmittance", "points", "count", "transpose_rotations",
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a subcommand is required (see --help)")
        overrides = {
            k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)
        }
        rc = load_run_config(getattr(args, "config", None), overrides)
        if args.command == "render":
            return cmd_render(rc)
        if args.command == "compare":
            return cmd_compare(rc)
        if args.command == "eval":
            return cmd_eval(rc)
        if args.command == "bench":
            return cmd_bench(rc)
        if args.command == "fixture":
            return cmd_fixture(rc, args.name)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SceneFormatError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
