"""Equirectangular environment maps and image-based-lighting helpers.

Convention: u runs with longitude, v with latitude; the map center (u, v) =
(0.5, 0.5) is the +z axis, which is also the camera direction. A direction
(x, y, z) maps to lon = atan2(x, z), lat = asin(y),
u = lon / 2pi + 0.5, v = 0.5 - lat / pi. Width is always twice the height.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..texmaps import TextureMap

__all__ = [
    "EnvironmentMap",
    "RenderError",
    "default_flood_intensity",
    "dirs_to_uv",
    "lookup",
    "luminance",
    "make_flood_env",
    "nir_env",
    "rotate_env",
    "solid_angle_map",
    "uv_to_dirs",
]

_KINDS = ("scene", "flood", "composite")


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class EnvironmentMap:
    """Equirectangular radiance panorama, 3-channel (VIS) or 1-channel (NIR)."""

    base: TextureMap
    kind: str = "scene"

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise RenderError(f"unknown environment kind {self.kind!r}")
        if self.base.width != 2 * self.base.height:
            raise RenderError(
                f"equirectangular map must be 2:1, got {self.base.width}x{self.base.height}"
            )
        if self.base.data.min() < 0.0:
            raise RenderError("environment radiance must be >= 0")

    @property
    def data(self) -> np.ndarray:
        return self.base.data

    @property
    def width(self) -> int:
        return self.base.width

    @property
    def height(self) -> int:
        return self.base.height

    @property
    def channels(self) -> int:
        return self.base.channels


def uv_to_dirs(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Unit directions for equirectangular coordinates in [0, 1]."""
    lon = (np.asarray(u, dtype=np.float64) - 0.5) * (2.0 * math.pi)
    lat = (0.5 - np.asarray(v, dtype=np.float64)) * math.pi
    cos_lat = np.cos(lat)
    return np.stack(
        [cos_lat * np.sin(lon), np.sin(lat), cos_lat * np.cos(lon)], axis=-1
    )


def dirs_to_uv(dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(dirs, dtype=np.float64)
    lon = np.arctan2(d[..., 0], d[..., 2])
    lat = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    return lon / (2.0 * math.pi) + 0.5, 0.5 - lat / math.pi


def lookup(env: EnvironmentMap, dirs: np.ndarray) -> np.ndarray:
    """Bilinear radiance lookup: wraps horizontally, clamps at the poles.

    ``dirs`` is (..., 3); the result is (..., channels) in float64.
    """
    u, v = dirs_to_uv(dirs)
    h, w = env.height, env.width
    fx = u * w - 0.5
    fy = v * h - 0.5
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = (fx - x0)[..., None]
    ty = (fy - y0)[..., None]
    x1 = (x0 + 1) % w
    x0 %= w
    y1 = np.clip(y0 + 1, 0, h - 1)
    y0 = np.clip(y0, 0, h - 1)
    data = env.data.astype(np.float64)
    top = (1.0 - tx) * data[y0, x0] + tx * data[y0, x1]
    bot = (1.0 - tx) * data[y1, x0] + tx * data[y1, x1]
    return (1.0 - ty) * top + ty * bot


def rotate_env(env: EnvironmentMap, yaw_deg: float) -> EnvironmentMap:
    """Rotate the panorama about the vertical axis.

    Implemented as a cyclic horizontal shift of yaw/360 x width texels;
    integer shifts are exact, fractional ones interpolate linearly between
    the two neighboring columns (which conserves total radiance).
    """
    w = env.width
    shift = (yaw_deg / 360.0) * w
    whole = math.floor(shift)
    frac = shift - whole
    rolled = np.roll(env.data, whole, axis=1)
    if frac != 0.0:
        rolled = (1.0 - frac) * rolled + frac * np.roll(env.data, whole + 1, axis=1)
    return EnvironmentMap(TextureMap(rolled), kind=env.kind)


def solid_angle_map(height: int) -> np.ndarray:
    """Per-texel solid angle (steradians) of a 2:1 equirectangular grid.

    Rows sum by latitude-band area, so the whole map totals 4 pi exactly.
    """
    if height < 1:
        raise RenderError("height must be >= 1")
    width = 2 * height
    rows = np.arange(height, dtype=np.float64)
    lat_top = (0.5 - rows / height) * math.pi
    lat_bot = (0.5 - (rows + 1.0) / height) * math.pi
    band = (np.sin(lat_top) - np.sin(lat_bot)) * (2.0 * math.pi / width)
    return np.repeat(band[:, None], width, axis=1)


def default_flood_intensity(angular_radius_deg: float = 15.0, target: float = 0.75) -> float:
    """Radiance making a camera-facing white Lambertian patch render ~target.

    The cosine-weighted irradiance of a disk of angular radius r around the
    normal is sin^2(r) times the radiance, so intensity = target / sin^2(r).
    """
    s = math.sin(math.radians(angular_radius_deg))
    return target / (s * s)


def make_flood_env(
    intensity: float, angular_radius_deg: float = 15.0, resolution: int = 64
) -> EnvironmentMap:
    """Flood illuminator: a radiant disk centered on the camera direction.

    Texels fully inside the disk get the given intensity; boundary texels
    are weighted by 4x4 supersampled coverage so the disk's solid angle
    stays accurate at low resolutions.
    """
    if intensity <= 0:
        raise RenderError(f"flood intensity must be > 0, got {intensity}")
    if not 0.0 < angular_radius_deg <= 90.0:
        raise RenderError(
            f"angular radius must be in (0, 90] degrees, got {angular_radius_deg}"
        )
    h, w = resolution, 2 * resolution
    ss = 4
    cols = (np.arange(w * ss) + 0.5) / (w * ss)
    rows = (np.arange(h * ss) + 0.5) / (h * ss)
    u, v = np.meshgrid(cols, rows)
    dirs = uv_to_dirs(u, v)
    inside = dirs[..., 2] >= math.cos(math.radians(angular_radius_deg))
    coverage = inside.reshape(h, ss, w, ss).mean(axis=(1, 3))
    return EnvironmentMap(TextureMap(coverage * intensity), kind="flood")


def luminance(env: EnvironmentMap) -> EnvironmentMap:
    """Collapse an RGB panorama to single-channel radiance (ITU-R 709 weights)."""
    if env.channels == 1:
        return env
    weights = np.array([0.2126, 0.7152, 0.0722])
    mono = env.data.astype(np.float64) @ weights
    return EnvironmentMap(TextureMap(mono), kind=env.kind)


def nir_env(env: EnvironmentMap, env_flood: EnvironmentMap) -> EnvironmentMap:
    """NIR illumination: scene luminance plus the flood illuminator."""
    if env_flood.kind != "flood" or env_flood.channels != 1:
        raise RenderError("second argument must be a 1-channel flood environment")
    if (env.width, env.height) != (env_flood.width, env_flood.height):
        raise RenderError(
            f"environment resolutions differ: {env.width}x{env.height} vs "
            f"{env_flood.width}x{env_flood.height}"
        )
    mono = luminance(env)
    total = mono.data.astype(np.float64) + env_flood.data.astype(np.float64)
    return EnvironmentMap(TextureMap(total), kind="composite")
