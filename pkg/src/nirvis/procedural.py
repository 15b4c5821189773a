"""Procedural demo assets: sphere meshes, synthetic facial reflectance
bundles, and low-frequency scene environments.

Everything here is deterministic in (identity_index, size, seed) so
generated datasets are reproducible byte-for-byte.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .bundle import save_bundle
from .nir_transform import ReflectanceSet
from .render.env import EnvironmentMap
from .render.mesh import Mesh, build_mesh
from .texmaps import NormalMap, TextureMap
from .util import rng_from

__all__ = [
    "make_scene_env",
    "make_uv_sphere",
    "mesh_to_obj",
    "procedural_reflectance",
    "write_demo_assets",
]


def make_uv_sphere(n_lat: int = 32, n_lon: int = 64, radius: float = 1.0) -> Mesh:
    """Latitude/longitude sphere with seam-duplicated vertices so the UV
    chart is continuous. Poles are rings collapsed in position but not in
    UV, which keeps every triangle's parameterization well defined."""
    if n_lat < 3 or n_lon < 3:
        raise ValueError(f"need n_lat, n_lon >= 3, got {n_lat}, {n_lon}")
    us = np.linspace(0.0, 1.0, n_lon + 1)
    vs = np.linspace(0.0, 1.0, n_lat + 1)
    uu, vv = np.meshgrid(us, vs)
    lat = (0.5 - vv) * np.pi
    lon = (uu - 0.5) * 2.0 * np.pi
    x = np.cos(lat) * np.sin(lon)
    y = np.sin(lat)
    z = np.cos(lat) * np.cos(lon)
    verts = radius * np.stack([x, y, z], axis=-1).reshape(-1, 3)
    normals = verts / radius
    uvs = np.stack([uu, vv], axis=-1).reshape(-1, 2)

    def vid(i, j):
        return i * (n_lon + 1) + j

    tris = []
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j), vid(i + 1, j + 1)
            if i > 0:  # skip degenerate cap triangles at the top pole
                tris.append((a, c, b))
            if i < n_lat - 1:
                tris.append((b, c, d))
    return build_mesh(verts, np.asarray(tris, dtype=np.int64), uvs=uvs, normals=normals)


def mesh_to_obj(mesh: Mesh, path: str | Path) -> None:
    """Write positions, UVs, normals, and faces in OBJ text form."""
    path = Path(path)
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.uvs:
        lines.append(f"vt {t[0]:.9g} {t[1]:.9g}")
    for n in mesh.normals:
        lines.append(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
    for f in mesh.triangles:
        a, b, c = (int(i) + 1 for i in f)
        lines.append(f"f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}")
    path.write_text("\n".join(lines) + "\n")


def _smooth_noise(rng: np.random.Generator, size: int, octaves: int = 4) -> np.ndarray:
    """Band-limited value noise in [0, 1] via upsampled random grids."""
    try:
        import cv2
        resize = lambda a, s: cv2.resize(a, (s, s), interpolation=cv2.INTER_CUBIC)
    except ImportError:  # pragma: no cover
        from scipy.ndimage import zoom
        resize = lambda a, s: zoom(a, s / a.shape[0], order=3)
    out = np.zeros((size, size), dtype=np.float64)
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = min(4 * 2**o, size)
        grid = rng.random((cells, cells))
        out += amp * resize(grid, size)
        total += amp
        amp *= 0.5
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / max(hi - lo, 1e-12)


def procedural_reflectance(identity_index: int, size: int = 256, seed: int = 0) -> ReflectanceSet:
    """Skin-toned VIS reflectance bundle whose maps vary per identity.

    Diffuse is a warm base color modulated by smooth noise, specular a
    low-amplitude noise field, and the normal map a height-field gradient
    perturbation of straight-up normals.
    """
    rng = rng_from(seed, identity_index)
    base = np.array([0.45, 0.30, 0.22]) + rng.uniform(-0.08, 0.10, size=3)
    tint = np.array([0.10, 0.06, 0.05]) * rng.uniform(0.5, 1.5)
    noise = _smooth_noise(rng, size)
    diffuse = np.clip(base[None, None, :] + (noise[..., None] - 0.5) * 2.0 * tint, 0.02, 0.95)
    spec_noise = _smooth_noise(rng, size)
    specular = np.clip(0.03 + 0.04 * spec_noise, 0.0, 0.12)[..., None]

    height = _smooth_noise(rng, size, octaves=5)
    amp = rng.uniform(1.0, 2.5)
    gy, gx = np.gradient(height * amp)
    n = np.stack([-gx * size / 16.0, -gy * size / 16.0, np.ones_like(gx)], axis=-1)
    n /= np.linalg.norm(n, axis=-1, keepdims=True)

    roughness = float(rng.uniform(0.30, 0.55))
    return ReflectanceSet(
        diffuse_albedo=TextureMap(diffuse.astype(np.float32), role="albedo"),
        specular_albedo=TextureMap(specular.astype(np.float32), role="albedo"),
        normals=NormalMap.from_vectors(n, space="tangent"),
        roughness=roughness,
        spectrum="VIS",
    )


def make_scene_env(env_index: int, resolution: int = 64, seed: int = 0) -> EnvironmentMap:
    """Low-frequency colored environment of mean radiance ~0.5.

    A horizontal-gradient sky plus a few wide Gaussian blobs, distinct per
    env_index and strictly positive so renders never go fully dark.
    """
    if resolution < 8:
        raise ValueError(f"resolution must be >= 8, got {resolution}")
    rng = rng_from(seed, 10_000 + env_index)
    h, w = resolution, 2 * resolution
    v = np.linspace(0.0, 1.0, h)[:, None]
    sky = np.array([0.35, 0.45, 0.60]) * rng.uniform(0.7, 1.3, size=3)
    ground = np.array([0.30, 0.25, 0.20]) * rng.uniform(0.7, 1.3, size=3)
    img = sky[None, None, :] * (1.0 - v[..., None]) + ground[None, None, :] * v[..., None]
    uu = (np.arange(w) + 0.5) / w
    vv = (np.arange(h) + 0.5) / h
    for _ in range(3):
        cu, cv = rng.random(), rng.uniform(0.15, 0.85)
        du = np.minimum(np.abs(uu - cu), 1.0 - np.abs(uu - cu))  # wrap in longitude
        d2 = (du[None, :] / 0.12) ** 2 + ((vv[:, None] - cv) / 0.10) ** 2
        color = rng.uniform(0.2, 1.0, size=3)
        img = img + np.exp(-d2)[..., None] * color[None, None, :]
    img *= 0.5 / img.mean()
    return EnvironmentMap(TextureMap(img.astype(np.float32), role="generic"), kind="scene")


def write_demo_assets(
    root: str | Path,
    n_identities: int = 3,
    n_envs: int = 2,
    size: int = 128,
    seed: int = 0,
) -> Path:
    """Create an identities/ + envs/ tree of procedural inputs under root.

    Each identity bundle also gets a normals_red.pfm (a wider-blurred copy
    of the normal map) so the width-fitting path of the transformer has a
    reference to recover, plus a sphere mesh.obj for rendering.
    """
    from .nir_transform import _blur_and_renorm
    from .texmaps import save_map

    root = Path(root)
    for i in range(n_identities):
        ident_dir = root / "identities" / f"id{i:03d}"
        refl = procedural_reflectance(i, size=size, seed=seed)
        save_bundle(refl, ident_dir)
        red = _blur_and_renorm(refl.normals, 0.8 + 0.4 * i)
        save_map(red.base, ident_dir / "normals_red.pfm", encoding="pfm")
        mesh_to_obj(make_uv_sphere(24, 48), ident_dir / "mesh.obj")
    env_dir = root / "envs"
    env_dir.mkdir(parents=True, exist_ok=True)
    for e in range(n_envs):
        env = make_scene_env(e, seed=seed)
        save_map(env.base, env_dir / f"env{e:03d}.pfm", encoding="pfm")
    return root
