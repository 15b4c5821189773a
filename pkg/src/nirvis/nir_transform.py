"""VIS-to-NIR reflectance transformation.

The transformation treats skin response as linear in illumination wavelength:
surface detail measured at a longer wavelength looks like a Gaussian-widened
version of the shorter-wavelength measurement. Fitting the width between the
green- and red-channel normals and extrapolating that width to the NIR
wavelength gives the NIR normals; the diffuse albedo becomes the
edge-preserving-blurred red channel; the specular albedo is retained and the
roughness shrinks with the distance from the visible-band midpoint.

All blur widths are in texel units.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .texmaps import (
    NormalMap,
    TextureError,
    TextureMap,
    bilateral_filter,
    gaussian_blur,
)
from .util import array_digest

__all__ = [
    "WavelengthConfig",
    "ReflectanceSet",
    "TransformParams",
    "wavelength_scale",
    "fit_sigma",
    "nir_normals",
    "nir_diffuse",
    "nir_specular",
    "transform_assets",
]

ROUGHNESS_FLOOR = 0.01


@dataclass(frozen=True)
class WavelengthConfig:
    """Channel-center wavelengths (nm) and the visible band.

    Defaults: 550/650 nm for the green/red sensor channels, 850 nm NIR,
    visible band 380-700 nm. Only the band and the NIR wavelength are
    physically pinned; the channel centers follow common sensor conventions
    and are configurable.
    """

    w_green: float = 550.0
    w_red: float = 650.0
    w_nir: float = 850.0
    vis_band: tuple[float, float] = (380.0, 700.0)

    def __post_init__(self) -> None:
        if not (self.w_green < self.w_red < self.w_nir):
            raise ValueError(
                f"wavelengths must satisfy green < red < nir, got "
                f"{self.w_green}, {self.w_red}, {self.w_nir}"
            )
        lo, hi = self.vis_band
        if not lo < hi:
            raise ValueError(f"visible band must be (lo, hi) with lo < hi, got {self.vis_band}")

    @property
    def vis_mid(self) -> float:
        lo, hi = self.vis_band
        return 0.5 * (lo + hi)


def wavelength_scale(wl: WavelengthConfig) -> float:
    """Blur-width multiplier (w_nir - w_green) / (w_red - w_green).

    With the default 550/650/850 nm this is exactly 3.0.
    """
    return (wl.w_nir - wl.w_green) / (wl.w_red - wl.w_green)


@dataclass(frozen=True)
class ReflectanceSet:
    """One identity's renderable reflectance bundle, tagged VIS or NIR."""

    diffuse_albedo: TextureMap
    specular_albedo: TextureMap
    normals: NormalMap
    roughness: float
    spectrum: str

    def __post_init__(self) -> None:
        if self.spectrum not in ("VIS", "NIR"):
            raise ValueError(f"spectrum must be VIS or NIR, got {self.spectrum!r}")
        want_diffuse = 3 if self.spectrum == "VIS" else 1
        if self.diffuse_albedo.channels != want_diffuse:
            raise ValueError(
                f"{self.spectrum} diffuse albedo needs {want_diffuse} channel(s), "
                f"got {self.diffuse_albedo.channels}"
            )
        if self.specular_albedo.channels != 1:
            raise ValueError("specular albedo must be 1-channel")
        dims = {
            (m.width, m.height)
            for m in (self.diffuse_albedo, self.specular_albedo, self.normals.base)
        }
        if len(dims) != 1:
            raise ValueError(f"reflectance maps disagree on size: {sorted(dims)}")
        for name, m in (("diffuse", self.diffuse_albedo), ("specular", self.specular_albedo)):
            if m.data.min() < 0.0 or m.data.max() > 1.0:
                raise ValueError(f"{name} albedo outside [0, 1]")
        if not 0.0 < self.roughness <= 1.0:
            raise ValueError(f"roughness must be in (0, 1], got {self.roughness}")

    @property
    def size(self) -> tuple[int, int]:
        return (self.diffuse_albedo.width, self.diffuse_albedo.height)

    def checksum(self) -> str:
        """Content hash over all maps plus roughness and spectrum tag."""
        extra = np.array([self.roughness, float(self.spectrum == "NIR")])
        return array_digest(
            self.diffuse_albedo.data,
            self.specular_albedo.data,
            self.normals.base.data,
            extra,
        )


@dataclass(frozen=True)
class TransformParams:
    """Knobs of the VIS-to-NIR transformation.

    ``sigma`` is the green-to-red normals blur width (fitted or configured).
    ``sigma_space = None`` ties the diffuse bilateral width to the scaled
    normals width ``wavelength_scale(wl) * sigma``.
    """

    sigma: float = 1.0
    k_rough: float = 0.25
    sigma_range: float = 0.1
    sigma_space: float | None = None

    def __post_init__(self) -> None:
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.k_rough < 0:
            raise ValueError(f"k_rough must be >= 0, got {self.k_rough}")
        if self.sigma_range <= 0:
            raise ValueError(f"sigma_range must be > 0, got {self.sigma_range}")


def _blur_and_renorm(nm: NormalMap, sigma: float) -> NormalMap:
    if sigma == 0:
        return NormalMap(TextureMap(nm.base.data, role="normal"), space=nm.space)
    blurred = gaussian_blur(nm.base, sigma)
    return NormalMap.from_vectors(blurred.data, space=nm.space)


def _normal_l2(a: NormalMap, b: NormalMap) -> float:
    return float(np.linalg.norm(a.base.data.astype(np.float64) - b.base.data.astype(np.float64)))


def fit_sigma(
    n_green: NormalMap,
    n_red: NormalMap,
    sigma_max: float | None = None,
    tol: float = 1e-3,
) -> float:
    """Width of the Gaussian that best maps the green normals onto the red ones.

    Minimizes ``|n_red - renormalize(blur(n_green, sigma))|_2`` by
    golden-section search over [0, sigma_max], refined to ``tol`` texels.
    ``sigma_max`` defaults to 16 texels at 1024^2, scaled with resolution but
    floored at 8 so small desk-scale maps still cover realistic widths.
    """
    ga, gb = n_green.base, n_red.base
    if (ga.width, ga.height) != (gb.width, gb.height):
        raise TextureError(
            f"normal map sizes differ: {ga.width}x{ga.height} vs {gb.width}x{gb.height}"
        )
    if sigma_max is None:
        sigma_max = max(8.0, 16.0 * min(ga.width, ga.height) / 1024.0)

    def objective(sigma: float) -> float:
        return _normal_l2(n_red, _blur_and_renorm(n_green, sigma))

    return _golden_section(objective, 0.0, float(sigma_max), tol)


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Golden-section minimizer for a unimodal objective on [lo, hi].

    Ties keep the left sub-interval, so on an objective with a flat valley
    (e.g. widths so small the blur is numerically the identity) the search
    settles at the smallest minimizing width.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def nir_normals(n_vis: NormalMap, sigma: float, wl: WavelengthConfig) -> NormalMap:
    """NIR normals: blur the VIS normals by the wavelength-scaled width.

    Returns ``renormalize(blur(n_vis, scale * sigma))`` with
    ``scale = (w_nir - w_green) / (w_red - w_green)``; sigma = 0 passes the
    input through unchanged.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return _blur_and_renorm(n_vis, wavelength_scale(wl) * sigma)


def nir_diffuse(
    a_d_vis: TextureMap, sigma_space: float, sigma_range: float
) -> TextureMap:
    """NIR diffuse albedo: bilateral-blurred red channel of the VIS albedo.

    The bilateral range term preserves facial edges that a plain Gaussian
    would wash out. ``sigma_space = 0`` skips the spatial filtering and
    returns the bare red channel.
    """
    if a_d_vis.channels != 3:
        raise TextureError(
            f"VIS diffuse albedo needs 3 channels, got {a_d_vis.channels}"
        )
    red = TextureMap(a_d_vis.data[:, :, :1], role="albedo")
    if sigma_space == 0:
        return red
    return bilateral_filter(red, sigma_space, sigma_range)


def nir_specular(
    a_s_vis: TextureMap,
    roughness_vis: float,
    wl: WavelengthConfig,
    k_rough: float = 0.25,
) -> tuple[TextureMap, float]:
    """Specular albedo carried over unchanged; roughness decreased.

    The roughness shrinks linearly with the NIR wavelength's distance from
    the visible-band midpoint:
    ``r_nir = clamp(r_vis * (1 - k_rough * (w_nir - w_mid) / w_mid), 0.01, 1)``.
    """
    if not 0.0 < roughness_vis <= 1.0:
        raise ValueError(f"roughness_vis must be in (0, 1], got {roughness_vis}")
    if k_rough < 0:
        raise ValueError(f"k_rough must be >= 0, got {k_rough}")
    w_mid = wl.vis_mid
    factor = 1.0 - k_rough * (wl.w_nir - w_mid) / w_mid
    roughness_nir = min(1.0, max(ROUGHNESS_FLOOR, roughness_vis * factor))
    return a_s_vis, roughness_nir


def transform_assets(
    r_vis: ReflectanceSet, wl: WavelengthConfig, params: TransformParams
) -> ReflectanceSet:
    """Full VIS-to-NIR transformation of a reflectance set.

    Deterministic and purely per-identity: no randomness and no
    cross-identity data enter, so identical inputs give bitwise-identical
    NIR assets.
    """
    if r_vis.spectrum != "VIS":
        raise ValueError(f"transform_assets expects a VIS set, got {r_vis.spectrum}")
    scale = wavelength_scale(wl)
    sigma_space = params.sigma_space if params.sigma_space is not None else scale * params.sigma
    diffuse = nir_diffuse(r_vis.diffuse_albedo, sigma_space, params.sigma_range)
    specular, roughness = nir_specular(
        r_vis.specular_albedo, r_vis.roughness, wl, params.k_rough
    )
    normals = nir_normals(r_vis.normals, params.sigma, wl)
    return ReflectanceSet(
        diffuse_albedo=diffuse,
        specular_albedo=specular,
        normals=normals,
        roughness=roughness,
        spectrum="NIR",
    )
