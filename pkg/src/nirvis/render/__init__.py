"""Physically-based paired VIS/NIR rendering.

Equirectangular image-based lighting, GGX microfacet shading over
rasterized triangle meshes, flood-illuminator construction, and the paired
pose/illumination sampling that makes VIS and NIR images of one identity
share geometry and lighting.
"""
from .brdf import fresnel_schlick, ggx_brdf, ggx_d, smith_g
from .env import (
    EnvironmentMap,
    RenderError,
    default_flood_intensity,
    luminance,
    make_flood_env,
    nir_env,
    rotate_env,
    solid_angle_map,
)
from .mesh import Mesh, load_mesh
from .renderer import (
    Camera,
    PairRender,
    PoseSample,
    RenderQuality,
    render_nir,
    render_pair_set,
    render_vis,
    rotation_from_euler,
    sample_pose_env,
)

__all__ = [
    "Camera",
    "EnvironmentMap",
    "Mesh",
    "PairRender",
    "PoseSample",
    "RenderError",
    "RenderQuality",
    "default_flood_intensity",
    "fresnel_schlick",
    "ggx_brdf",
    "ggx_d",
    "load_mesh",
    "luminance",
    "make_flood_env",
    "nir_env",
    "render_nir",
    "render_pair_set",
    "render_vis",
    "rotate_env",
    "rotation_from_euler",
    "sample_pose_env",
    "smith_g",
    "solid_angle_map",
]
