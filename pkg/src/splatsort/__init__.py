"""Depth-sorted software rasterizer for 3D Gaussian scenes."""

from .errors import ConfigError, DataError, SceneFormatError
from .gaussian_math import (
    Ray,
    Splat2D,
    SplatBatch,
    bounding_radius,
    build_covariance,
    build_inverse_covariance,
    evaluate_sh,
    project_scene,
    project_splat,
    quat_slerp,
    quat_to_matrix,
    ray_for_pixel,
    t_opt,
)
from .gradients import (
    SplatGradients,
    backward_render,
    backward_render_reference,
    gradients_from_records,
    load_gradients,
    loss_l2,
    save_gradients,
)
from .metrics import (
    ConsistencyReport,
    DepthErrorReport,
    SortErrorStats,
    analytic_flow,
    depth_error,
    occlusion_mask,
    psnr,
    sort_error,
    trajectory_consistency,
    view_consistency,
    warp_frame,
)
from .flip import flip_error_map
from .rasterizer import (
    FrameOutput,
    FullPerPixel,
    GlobalZ,
    Hierarchical,
    PixelRecords,
    RenderConfig,
    SortMode,
    TileBin,
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
from .scene_io import (
    Camera,
    Gaussian3D,
    SparsePointSet,
    load_cameras,
    load_ply,
    load_scene,
    read_flow,
    read_image,
    save_cameras,
    save_ply,
    write_flow,
    write_image,
)
from .tile_culling import (
    TILE_SIZE,
    TileRect,
    max_point_in_tile,
    per_tile_depth,
    tile_rect,
    tile_survives,
)

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "ConfigError",
    "ConsistencyReport",
    "DataError",
    "DepthErrorReport",
    "FrameOutput",
    "FullPerPixel",
    "Gaussian3D",
    "GlobalZ",
    "Hierarchical",
    "PixelRecords",
    "Ray",
    "RenderConfig",
    "SceneFormatError",
    "SortErrorStats",
    "SortMode",
    "SparsePointSet",
    "Splat2D",
    "SplatBatch",
    "SplatGradients",
    "TILE_SIZE",
    "TileBin",
    "TileRect",
    "Window",
    "analytic_flow",
    "backward_render",
    "backward_render_reference",
    "bin_and_sort",
    "blend_pixel",
    "bounding_radius",
    "build_covariance",
    "build_inverse_covariance",
    "depth_error",
    "evaluate_sh",
    "flip_error_map",
    "gradients_from_records",
    "interpolate_cameras",
    "load_cameras",
    "load_gradients",
    "load_ply",
    "load_scene",
    "loss_l2",
    "max_point_in_tile",
    "mode_name",
    "occlusion_mask",
    "parse_mode",
    "per_tile_depth",
    "project_scene",
    "project_splat",
    "psnr",
    "quat_slerp",
    "quat_to_matrix",
    "ray_for_pixel",
    "read_flow",
    "read_image",
    "render",
    "render_depth",
    "render_trajectory",
    "save_cameras",
    "save_gradients",
    "save_ply",
    "sort_error",
    "t_opt",
    "tile_rect",
    "tile_survives",
    "trajectory_consistency",
    "validate_mode",
    "view_consistency",
    "warp_frame",
    "write_flow",
    "write_image",
]
