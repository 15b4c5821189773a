"""Rasterizing Monte-Carlo renderer for paired VIS/NIR face images.

Pipeline per image: rotate the mesh by the pose matrix, place it in front
of a pinhole camera, rasterize with perspective-correct barycentrics and a
z-buffer, then shade every covered pixel by direct environment lighting —
stratified cosine sampling for the diffuse lobe and GGX half-vector
importance sampling for the specular lobe.

Sample directions are drawn before any radiance lookup and depend only on
(seed, pair index, surface geometry), never on the environment. That makes
light transport exactly linear in the environment radiance and keeps
renders bitwise reproducible regardless of worker/thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..nir_transform import ReflectanceSet, TransformParams, WavelengthConfig, transform_assets
from ..texmaps import TextureMap
from ..util import rng_from
from .brdf import (
    cosine_sample_hemisphere,
    fresnel_schlick,
    ggx_sample_half,
    orthonormal_basis,
    smith_g,
)
from .env import EnvironmentMap, RenderError, lookup, luminance, nir_env, rotate_env
from .mesh import Mesh

__all__ = [
    "Camera",
    "PairRender",
    "PoseSample",
    "RenderQuality",
    "render_nir",
    "render_pair_set",
    "render_vis",
    "rotation_from_euler",
    "sample_pose_env",
]

_EPS = 1e-6
_NEAR = 1e-4


@dataclass(frozen=True)
class Camera:
    """Pinhole camera at the origin looking down -z, y up.

    The mesh is pushed ``distance`` units in front of it. ``focal`` is in
    pixels and defaults to the image width (a comfortably long lens).
    """

    width: int = 128
    height: int = 128
    focal: float | None = None
    distance: float = 2.5

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise RenderError(f"image size must be >= 1x1, got {self.width}x{self.height}")
        if self.focal is not None and self.focal <= 0:
            raise RenderError(f"focal length must be > 0, got {self.focal}")
        if self.distance <= 0:
            raise RenderError(f"camera distance must be > 0, got {self.distance}")

    @property
    def focal_px(self) -> float:
        return float(self.width if self.focal is None else self.focal)


@dataclass(frozen=True)
class PoseSample:
    """One draw of the pairing protocol: head rotation + environment pick."""

    rotation: np.ndarray
    env_index: int = 0
    env_yaw_deg: float = 0.0

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise RenderError(f"rotation must be 3x3, got {rot.shape}")
        if np.abs(rot.T @ rot - np.eye(3)).max() > 1e-6:
            raise RenderError("rotation is not orthonormal (R^T R != I within 1e-6)")
        if np.linalg.det(rot) < 0:
            raise RenderError("rotation has determinant -1 (reflection)")
        if self.env_index < 0:
            raise RenderError("env_index must be >= 0")
        rot = rot.copy()
        rot.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "env_yaw_deg", float(self.env_yaw_deg) % 360.0)


@dataclass(frozen=True)
class RenderQuality:
    """Sample budget and RNG seed. ``spp`` is the per-lobe sample count."""

    spp: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.spp < 1:
            raise RenderError(f"spp must be >= 1, got {self.spp}")


@dataclass(frozen=True)
class PairRender:
    """Matched VIS/NIR images of one identity under one pose and lighting."""

    index: int
    vis: TextureMap
    nir: TextureMap
    pose: PoseSample
    nir_checksum: str


def rotation_from_euler(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Rotation matrix Ry(yaw) @ Rx(pitch) @ Rz(roll), angles in degrees."""
    y, p, r = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
    cy, sy = math.cos(y), math.sin(y)
    cp, sp = math.cos(p), math.sin(p)
    cr, sr = math.cos(r), math.sin(r)
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return ry @ rx @ rz


def sample_pose_env(
    rng_seed: int,
    n_pairs: int = 20,
    env_count: int = 1,
    rot_limits: tuple[float, float, float] = (45.0, 15.0, 10.0),
) -> list[PoseSample]:
    """Draw the pose/illumination list shared by each VIS/NIR pair.

    Environment indices are uniform over [0, env_count); environment yaw is
    uniform over [0, 360); head yaw/pitch/roll are uniform within
    +/- rot_limits. Deterministic per seed.
    """
    if env_count < 1:
        raise RenderError(f"env_count must be >= 1, got {env_count}")
    if n_pairs < 0:
        raise RenderError(f"n_pairs must be >= 0, got {n_pairs}")
    rng = rng_from(rng_seed)
    ly, lp, lr = rot_limits
    samples = []
    for _ in range(n_pairs):
        env_index = int(rng.integers(0, env_count))
        env_yaw = float(rng.uniform(0.0, 360.0))
        yaw = float(rng.uniform(-ly, ly))
        pitch = float(rng.uniform(-lp, lp))
        roll = float(rng.uniform(-lr, lr))
        samples.append(
            PoseSample(rotation_from_euler(yaw, pitch, roll), env_index, env_yaw)
        )
    return samples


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------

def _sample_texture(tex: TextureMap, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
    """Bilinear texture fetch; u right, v up (image row 0 is v = 1); clamped."""
    h, w = tex.height, tex.width
    fx = np.clip(us, 0.0, 1.0) * w - 0.5
    fy = (1.0 - np.clip(vs, 0.0, 1.0)) * h - 0.5
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    tx = np.clip(fx - x0, 0.0, 1.0)[..., None]
    ty = np.clip(fy - y0, 0.0, 1.0)[..., None]
    data = tex.data.astype(np.float64)
    top = (1.0 - tx) * data[y0, x0] + tx * data[y0, x1]
    bot = (1.0 - tx) * data[y1, x0] + tx * data[y1, x1]
    return (1.0 - ty) * top + ty * bot


def _rasterize(mesh: Mesh, rotation: np.ndarray, cam: Camera):
    """Project and scan-convert; returns camera-space geometry per pixel."""
    verts = mesh.vertices @ rotation.T
    verts = verts - np.array([0.0, 0.0, cam.distance])
    normals = mesh.normals @ rotation.T
    tangents = mesh.tangents @ rotation.T

    depth_v = -verts[:, 2]
    f = cam.focal_px
    cx, cy = cam.width / 2.0, cam.height / 2.0
    safe = np.maximum(depth_v, _NEAR)
    sx = cx + f * verts[:, 0] / safe
    sy = cy - f * verts[:, 1] / safe

    h, w = cam.height, cam.width
    tri_id = np.full((h, w), -1, dtype=np.int32)
    zbuf = np.full((h, w), np.inf)
    bary = np.zeros((h, w, 3))

    tris = mesh.triangles
    for t in range(len(tris)):
        i0, i1, i2 = tris[t]
        if depth_v[i0] <= _NEAR or depth_v[i1] <= _NEAR or depth_v[i2] <= _NEAR:
            continue
        x0, y0 = sx[i0], sy[i0]
        x1, y1 = sx[i1], sy[i1]
        x2, y2 = sx[i2], sy[i2]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area) < 1e-12:
            continue
        sign = 1.0 if area > 0 else -1.0
        xlo = max(0, int(math.ceil(min(x0, x1, x2) - 0.5)))
        xhi = min(w - 1, int(math.floor(max(x0, x1, x2) - 0.5)))
        ylo = max(0, int(math.ceil(min(y0, y1, y2) - 0.5)))
        yhi = min(h - 1, int(math.floor(max(y0, y1, y2) - 0.5)))
        if xlo > xhi or ylo > yhi:
            continue
        px = np.arange(xlo, xhi + 1) + 0.5
        py = np.arange(ylo, yhi + 1) + 0.5
        pxg, pyg = np.meshgrid(px, py)
        e0 = ((x2 - x1) * (pyg - y1) - (y2 - y1) * (pxg - x1)) * sign
        e1 = ((x0 - x2) * (pyg - y2) - (y0 - y2) * (pxg - x2)) * sign
        e2 = ((x1 - x0) * (pyg - y0) - (y1 - y0) * (pxg - x0)) * sign
        inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
        if not inside.any():
            continue
        b0 = e0 / (area * sign)
        b1 = e1 / (area * sign)
        b2 = e2 / (area * sign)
        # perspective-correct interpolation via 1/depth weights
        q0 = b0 / depth_v[i0]
        q1 = b1 / depth_v[i1]
        q2 = b2 / depth_v[i2]
        qsum = q0 + q1 + q2
        depth = 1.0 / np.maximum(qsum, 1e-30)
        window = zbuf[ylo : yhi + 1, xlo : xhi + 1]
        closer = inside & (depth < window)
        if not closer.any():
            continue
        window[closer] = depth[closer]
        tri_id[ylo : yhi + 1, xlo : xhi + 1][closer] = t
        bw = np.stack([q0, q1, q2], axis=-1) * depth[..., None]
        bary[ylo : yhi + 1, xlo : xhi + 1][closer] = bw[closer]

    return verts, normals, tangents, tri_id, bary


# ---------------------------------------------------------------------------
# shading
# ---------------------------------------------------------------------------

def _unit(a: np.ndarray) -> np.ndarray:
    return a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), 1e-20)


def _shade(
    mesh: Mesh,
    diffuse: TextureMap,
    specular: TextureMap,
    normal_map: TextureMap,
    roughness: float,
    pose: PoseSample,
    env: EnvironmentMap,
    cam: Camera,
    quality: RenderQuality,
    pair_index: int,
) -> TextureMap:
    channels = diffuse.channels
    env_rot = rotate_env(env, pose.env_yaw_deg)
    verts, vnormals, vtangents, tri_id, bary = _rasterize(mesh, pose.rotation, cam)

    out = np.zeros((cam.height, cam.width, channels))
    ys, xs = np.nonzero(tri_id >= 0)
    if len(ys) == 0:
        return TextureMap(out)

    tris = mesh.triangles[tri_id[ys, xs]]
    b = bary[ys, xs]  # (n, 3)

    def interp(attr: np.ndarray) -> np.ndarray:
        return (
            b[:, 0:1] * attr[tris[:, 0]]
            + b[:, 1:2] * attr[tris[:, 1]]
            + b[:, 2:3] * attr[tris[:, 2]]
        )

    pos = interp(verts)
    n_geo = _unit(interp(vnormals))
    t_geo = interp(vtangents)
    uv = interp(np.concatenate([mesh.uvs, np.zeros((len(mesh.uvs), 1))], axis=1))[:, :2]

    # tangent frame and normal-mapped shading normal
    t_geo = _unit(t_geo - n_geo * np.sum(t_geo * n_geo, axis=-1, keepdims=True))
    b_geo = np.cross(n_geo, t_geo)
    nm = _unit(_sample_texture(normal_map, uv[:, 0], uv[:, 1]))
    n_sh = _unit(
        t_geo * nm[:, 0:1] + b_geo * nm[:, 1:2] + n_geo * nm[:, 2:3]
    )

    albedo_d = _sample_texture(diffuse, uv[:, 0], uv[:, 1])  # (n, C)
    albedo_s = _sample_texture(specular, uv[:, 0], uv[:, 1])[:, 0]  # (n,)

    view = _unit(-pos)
    n_v = np.sum(n_sh * view, axis=-1)

    n_pix = len(ys)
    spp = quality.spp
    rng = rng_from(quality.seed, pair_index)
    # all randomness drawn up front in a fixed order: shading stays
    # deterministic no matter how the pixel work is later partitioned
    u_diff = rng.random((2, n_pix, spp))
    u_spec = rng.random((2, n_pix, spp))

    t_sh, b_sh = orthonormal_basis(n_sh)

    # diffuse lobe: stratified cosine sampling; the cos/pi pdf cancels the
    # integrand so each sample contributes exactly L(direction)
    strata = (np.arange(spp) + u_diff[0]) / spp
    local = cosine_sample_hemisphere(strata, u_diff[1])  # (n, spp, 3)
    dirs = (
        t_sh[:, None, :] * local[..., 0:1]
        + b_sh[:, None, :] * local[..., 1:2]
        + n_sh[:, None, :] * local[..., 2:3]
    )
    radiance = lookup(env_rot, dirs)  # (n, spp, C)
    out_pix = albedo_d * radiance.mean(axis=1)

    # specular lobe: GGX half-vector sampling. The D * cos(theta_h) pdf
    # cancels against the lobe, leaving albedo_s * F * G * (v.h)/(n.v n.h)
    if specular.data.max() > 0.0:
        alpha = roughness * roughness
        h_local = ggx_sample_half(u_spec[0], u_spec[1], alpha)  # (n, spp, 3)
        h_world = (
            t_sh[:, None, :] * h_local[..., 0:1]
            + b_sh[:, None, :] * h_local[..., 1:2]
            + n_sh[:, None, :] * h_local[..., 2:3]
        )
        v_h = np.sum(view[:, None, :] * h_world, axis=-1)
        l_world = 2.0 * v_h[..., None] * h_world - view[:, None, :]
        n_l = np.sum(n_sh[:, None, :] * l_world, axis=-1)
        n_h = h_local[..., 2]
        valid = (n_l > 0.0) & (v_h > 0.0) & (n_v[:, None] > 0.0)
        fres = fresnel_schlick(v_h, albedo_s[:, None])
        g = smith_g(n_l, n_v[:, None], alpha)
        weight = fres * g * v_h / np.maximum(n_v[:, None] * n_h, _EPS)
        weight = np.where(valid, weight, 0.0)
        rad_spec = lookup(env_rot, l_world)  # (n, spp, C)
        spec = albedo_s[:, None] * (weight[..., None] * rad_spec).mean(axis=1)
        out_pix = out_pix + spec

    out[ys, xs] = out_pix
    return TextureMap(out)


def render_vis(
    mesh: Mesh,
    r: ReflectanceSet,
    pose: PoseSample,
    env: EnvironmentMap,
    cam: Camera,
    quality: RenderQuality = RenderQuality(),
    pair_index: int = 0,
) -> TextureMap:
    """Render an RGB image of a VIS reflectance set under an RGB environment."""
    if r.spectrum != "VIS":
        raise RenderError(f"render_vis needs a VIS reflectance set, got {r.spectrum}")
    if env.channels != 3:
        raise RenderError(f"render_vis needs a 3-channel environment, got {env.channels}")
    return _shade(
        mesh, r.diffuse_albedo, r.specular_albedo, r.normals.base,
        r.roughness, pose, env, cam, quality, pair_index,
    )


def render_nir(
    mesh: Mesh,
    r: ReflectanceSet,
    pose: PoseSample,
    env: EnvironmentMap,
    cam: Camera,
    quality: RenderQuality = RenderQuality(),
    pair_index: int = 0,
) -> TextureMap:
    """Render a monochrome image of a NIR reflectance set (1-channel env)."""
    if r.spectrum != "NIR":
        raise RenderError(f"render_nir needs a NIR reflectance set, got {r.spectrum}")
    if env.channels != 1:
        raise RenderError(f"render_nir needs a 1-channel environment, got {env.channels}")
    return _shade(
        mesh, r.diffuse_albedo, r.specular_albedo, r.normals.base,
        r.roughness, pose, env, cam, quality, pair_index,
    )


def render_pair_set(
    mesh: Mesh,
    r_vis: ReflectanceSet,
    wl: WavelengthConfig,
    samples: list[PoseSample],
    envs: list[EnvironmentMap],
    e_flood: EnvironmentMap,
    cam: Camera,
    quality: RenderQuality = RenderQuality(),
    params: TransformParams | None = None,
) -> list[PairRender]:
    """Render the paired VIS/NIR image set for one identity.

    The NIR reflectance is computed once and reused for every pose, so each
    identity's NIR appearance is byte-identical across its pairs. Both
    images of a pair share the pose matrix, environment index, and
    environment yaw. The flood illuminator models a camera-mounted source,
    so it is NOT rotated with the environment: the scene environment is
    pre-rotated instead and the composite rendered at yaw 0.
    """
    if params is None:
        params = TransformParams()
    for s in samples:
        if s.env_index >= len(envs):
            raise RenderError(f"env_index {s.env_index} out of range ({len(envs)} envs)")
    r_nir = transform_assets(r_vis, wl, params)
    checksum = r_nir.checksum()
    pairs = []
    for j, s in enumerate(samples):
        env = envs[s.env_index]
        vis = render_vis(mesh, r_vis, s, env, cam, quality, pair_index=j)
        scene_rot = rotate_env(luminance(env), s.env_yaw_deg)
        composite = nir_env(scene_rot, e_flood)
        frontal = PoseSample(s.rotation, s.env_index, 0.0)
        nir = render_nir(mesh, r_nir, frontal, composite, cam, quality, pair_index=j)
        pairs.append(PairRender(j, vis, nir, s, checksum))
    return pairs
