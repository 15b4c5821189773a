"""GGX microfacet reflectance and the importance-sampling routines.

All functions are vectorized over leading dimensions; direction arguments
have a trailing axis of length 3 and must be unit length. alpha is the
squared perceptual roughness.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "cosine_sample_hemisphere",
    "fresnel_schlick",
    "ggx_brdf",
    "ggx_d",
    "ggx_sample_half",
    "orthonormal_basis",
    "smith_g",
]

_EPS = 1e-6


def ggx_d(cos_h: np.ndarray, alpha: float) -> np.ndarray:
    """GGX normal distribution D(h); zero below the horizon."""
    cos_h = np.asarray(cos_h, dtype=np.float64)
    a2 = alpha * alpha
    denom = cos_h * cos_h * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * denom * denom)
    return np.where(cos_h > 0.0, d, 0.0)


def smith_g(n_l: np.ndarray, n_v: np.ndarray, alpha: float) -> np.ndarray:
    """Height-correlated Smith masking-shadowing for GGX."""
    n_l = np.asarray(n_l, dtype=np.float64)
    n_v = np.asarray(n_v, dtype=np.float64)
    a2 = alpha * alpha
    lam_v = n_l * np.sqrt(a2 + (1.0 - a2) * n_v * n_v)
    lam_l = n_v * np.sqrt(a2 + (1.0 - a2) * n_l * n_l)
    return 2.0 * n_l * n_v / np.maximum(lam_v + lam_l, _EPS)


def fresnel_schlick(cos_t: np.ndarray, f0: np.ndarray) -> np.ndarray:
    cos_t = np.clip(np.asarray(cos_t, dtype=np.float64), 0.0, 1.0)
    return f0 + (1.0 - f0) * (1.0 - cos_t) ** 5


def _dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def ggx_brdf(
    n: np.ndarray,
    v: np.ndarray,
    l: np.ndarray,
    albedo_d: np.ndarray,
    albedo_s: np.ndarray,
    roughness: float,
) -> np.ndarray:
    """Full reflectance albedo_d/pi + albedo_s * D*G*F / (4 (n.v)(n.l)).

    The Fresnel term uses F0 = albedo_s and the lobe is scaled by albedo_s
    once more, so grazing reflectance stays bounded by the specular albedo.
    Back-facing configurations (n.v <= 0 or n.l <= 0) return 0.
    ``albedo_d`` may carry a trailing channel axis; the result broadcasts
    to it.
    """
    n = np.asarray(n, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    albedo_d = np.asarray(albedo_d, dtype=np.float64)
    albedo_s = np.asarray(albedo_s, dtype=np.float64)
    if albedo_d.ndim == 0:
        albedo_d = albedo_d[None]
    n_v = _dot(n, v)
    n_l = _dot(n, l)
    h = v + l
    h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), _EPS)
    alpha = roughness * roughness
    d = ggx_d(_dot(n, h), alpha)
    g = smith_g(n_l, n_v, alpha)
    f = fresnel_schlick(_dot(v, h), albedo_s)
    spec = albedo_s * d * g * f / np.maximum(4.0 * n_v * n_l, _EPS)
    front = (n_v > 0.0) & (n_l > 0.0)
    value = albedo_d / np.pi + spec[..., None]
    return np.where(front[..., None], value, 0.0)


def orthonormal_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangent/bitangent frame around unit normals (branchless construction)."""
    n = np.asarray(n, dtype=np.float64)
    sign = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack(
        [1.0 + sign * n[..., 0] ** 2 * a, sign * b, -sign * n[..., 0]], axis=-1
    )
    bt = np.stack([b, sign + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t, bt


def cosine_sample_hemisphere(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Cosine-weighted directions around +z; pdf = cos(theta)/pi."""
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(1.0 - u1, 0.0))
    return np.stack([x, y, z], axis=-1)


def ggx_sample_half(u1: np.ndarray, u2: np.ndarray, alpha: float) -> np.ndarray:
    """Half vectors around +z with pdf D(h) cos(theta_h)."""
    a2 = alpha * alpha
    cos_t = np.sqrt((1.0 - u1) / np.maximum(1.0 + u1 * (a2 - 1.0), _EPS))
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    phi = 2.0 * np.pi * u2
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
