"""Texture-map containers, radiometric image I/O and the base filters.

All maps live in linear radiometric space. Integer files are de-quantized to
[0, 1] on load; float data goes through the PFM format losslessly. Filter
widths (``sigma``) are in texel units, kernels are truncated at radius
``ceil(3 * sigma)`` and edges are handled by clamp-to-edge, so the dense
reference convolution used in the tests reproduces the filters exactly.
"""
from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter1d

__all__ = [
    "TextureMap",
    "NormalMap",
    "TextureError",
    "ClippingWarning",
    "load_map",
    "save_map",
    "gaussian_blur",
    "bilateral_filter",
    "renormalize_normals",
]


class TextureError(ValueError):
    """Raised for malformed maps, unreadable files or violated preconditions."""


class ClippingWarning(UserWarning):
    """Emitted when out-of-range values are clamped during integer encoding."""


_ROLES = ("generic", "albedo", "normal")


@dataclass(frozen=True)
class TextureMap:
    """Rectangular grid of linear radiometric texels, row-major, (h, w, c).

    Data is copied on construction and frozen; maps are safe to share across
    render workers. ``role`` tightens validation: albedo maps must lie in
    [0, 1], normal maps hold decoded direction vectors in [-1, 1].
    """

    data: np.ndarray
    role: str = "generic"

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise TextureError(f"expected 2-D or 3-D texel array, got ndim={arr.ndim}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise TextureError(f"degenerate map size {w}x{h}")
        if c not in (1, 3):
            raise TextureError(f"unsupported channel count {c} (must be 1 or 3)")
        if self.role not in _ROLES:
            raise TextureError(f"unknown role {self.role!r}")
        if not np.isfinite(arr).all():
            raise TextureError("map contains non-finite values")
        if self.role == "albedo" and (arr.min() < 0.0 or arr.max() > 1.0):
            raise TextureError(
                f"albedo values outside [0, 1]: min={arr.min():.4g} max={arr.max():.4g}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class NormalMap:
    """Decoded surface normals: a 3-channel map of unit vectors plus a space tag."""

    base: TextureMap
    space: str = "tangent"

    def __post_init__(self) -> None:
        if self.base.channels != 3:
            raise TextureError("normal maps need 3 channels")
        if self.space not in ("tangent", "object"):
            raise TextureError(f"unknown normal space {self.space!r}")
        norms = np.linalg.norm(self.base.data, axis=-1)
        bad = np.abs(norms - 1.0) > 1e-3
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise TextureError(
                f"normal at ({i}, {j}) has norm {norms[i, j]:.6f}, expected 1 +/- 1e-3"
            )

    @classmethod
    def from_vectors(cls, vectors: np.ndarray, space: str = "tangent") -> "NormalMap":
        """Build a normal map from raw vectors, renormalizing them first."""
        return cls(TextureMap(_unit_vectors(vectors), role="normal"), space=space)

    @property
    def vectors(self) -> np.ndarray:
        return self.base.data


def _unit_vectors(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    zero = norms < 1e-20
    if zero.any():
        i, j = np.argwhere(zero[..., 0])[0]
        raise TextureError(f"zero-length normal vector at texel ({i}, {j})")
    return arr / norms


# ---------------------------------------------------------------------------
# PFM (portable float map): lossless float32 storage, little-endian,
# bottom-up row order per the de-facto format convention.
# ---------------------------------------------------------------------------


def _read_pfm(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise TextureError(f"{path}: not a PFM file (header {header!r})")
        dims = fh.readline().split()
        if len(dims) != 2:
            raise TextureError(f"{path}: malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
        if raw.size != count:
            raise TextureError(f"{path}: truncated PFM payload")
    arr = raw.reshape(h, w, channels).astype(np.float32)
    return arr[::-1]  # stored bottom-up


def _write_pfm(path: Path, arr: np.ndarray) -> None:
    h, w, c = arr.shape
    if c not in (1, 3):
        raise TextureError("PFM supports 1 or 3 channels")
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if c == 3 else b"Pf\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1], dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Load / save
# ---------------------------------------------------------------------------

_FLOAT_EXTS = (".pfm",)
_INT_ENCODINGS = {"png8": (np.uint8, 255), "png16": (np.uint16, 65535)}


def load_map(path: str | Path, role: str = "generic") -> TextureMap:
    """Load a texture map into linear radiometric space.

    Integer formats are de-quantized to [0, 1]. With ``role="normal"`` the
    [0, 1] data is further decoded to [-1, 1] and renormalized to unit
    vectors; float files with that role are assumed to store decoded vectors
    already and are only renormalized.
    """
    path = Path(path)
    if not path.is_file():
        raise TextureError(f"cannot read {path}: no such file")
    if path.suffix.lower() in _FLOAT_EXTS:
        arr = _read_pfm(path).astype(np.float64)
        quantized = False
    else:
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None:
            raise TextureError(f"cannot decode {path} as an image")
        if raw.dtype == np.uint8:
            arr = raw.astype(np.float64) / 255.0
        elif raw.dtype == np.uint16:
            arr = raw.astype(np.float64) / 65535.0
        else:
            raise TextureError(f"{path}: unsupported sample type {raw.dtype}")
        if arr.ndim == 3:
            if arr.shape[2] == 3:
                arr = arr[:, :, ::-1]  # BGR -> RGB
            else:
                raise TextureError(
                    f"{path}: unsupported channel count {arr.shape[2]} (must be 1 or 3)"
                )
        quantized = True
    if not np.isfinite(arr).all():
        raise TextureError(f"{path}: non-finite values in image data")
    if role == "normal":
        if quantized:
            arr = arr * 2.0 - 1.0
        arr = _unit_vectors(arr)
    return TextureMap(arr, role=role)


def save_map(tex: TextureMap, path: str | Path, encoding: str = "png16") -> None:
    """Write a map to disk.

    ``pfm`` is lossless for float data. ``png8``/``png16`` clamp to the
    encodable range and quantize; normal-role maps are shifted from [-1, 1]
    to [0, 1] before quantization. Clamped texels raise a
    :class:`ClippingWarning` carrying the affected texel count.
    """
    path = Path(path)
    if str(path) == "" or path.name == "":
        raise TextureError("empty output path")
    if not path.parent.exists():
        raise TextureError(f"parent directory {path.parent} does not exist")
    if encoding == "pfm":
        _write_pfm(path, tex.data)
        return
    if encoding not in _INT_ENCODINGS:
        raise TextureError(f"unknown encoding {encoding!r}")
    dtype, scale = _INT_ENCODINGS[encoding]
    values = tex.data.astype(np.float64)
    if tex.role == "normal":
        values = (values + 1.0) * 0.5
    # fp tolerance keeps renormalized unit normals from counting as clipped
    clipped = (values < -1e-6) | (values > 1.0 + 1e-6)
    n_clipped = int(np.any(clipped, axis=-1).sum())
    if n_clipped:
        warnings.warn(
            f"clamped {n_clipped} out-of-range texels while encoding {path.name}",
            ClippingWarning,
        )
    values = np.clip(values, 0.0, 1.0)
    quant = np.round(values * scale).astype(dtype)
    if quant.shape[2] == 3:
        quant = quant[:, :, ::-1]  # RGB -> BGR for the PNG writer
    else:
        quant = quant[:, :, 0]
    if not cv2.imwrite(str(path), quant):
        raise TextureError(f"failed to write {path}")


# ---------------------------------------------------------------------------
# Filters
# ---------------------------------------------------------------------------


def _kernel_radius(sigma: float) -> int:
    return int(math.ceil(3.0 * sigma))


def gaussian_blur(tex: TextureMap, sigma: float) -> TextureMap:
    """Separable Gaussian blur, radius ceil(3*sigma), clamp-to-edge.

    sigma = 0 returns an exact copy. Channels are filtered independently.
    """
    if sigma < 0:
        raise TextureError(f"negative sigma {sigma}")
    if sigma == 0:
        return TextureMap(tex.data, role=tex.role)
    radius = _kernel_radius(sigma)
    out = tex.data.astype(np.float64)
    out = gaussian_filter1d(out, sigma, axis=0, mode="nearest", radius=radius)
    out = gaussian_filter1d(out, sigma, axis=1, mode="nearest", radius=radius)
    # Preserve role invariants under fp rounding (weighted means of [0,1]
    # data can land a few ulp outside the range).
    if tex.role == "albedo":
        out = np.clip(out, 0.0, 1.0)
    role = tex.role if tex.role != "normal" else "generic"
    return TextureMap(out, role=role)


def bilateral_filter(tex: TextureMap, sigma_space: float, sigma_range: float) -> TextureMap:
    """Edge-preserving bilateral filter (spatial Gaussian x range Gaussian).

    Uses the same truncation radius and clamp-to-edge rule as
    :func:`gaussian_blur`, so a very large ``sigma_range`` degenerates to the
    plain Gaussian blur. Channels are treated independently, including the
    range term.
    """
    if sigma_space <= 0 or sigma_range <= 0:
        raise TextureError(
            f"bilateral sigmas must be positive (got {sigma_space}, {sigma_range})"
        )
    radius = _kernel_radius(sigma_space)
    src = tex.data.astype(np.float64)
    h, w, c = src.shape
    padded = np.pad(src, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    num = np.zeros_like(src)
    den = np.zeros_like(src)
    inv_2ss = 1.0 / (2.0 * sigma_space * sigma_space)
    inv_2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            w_spatial = math.exp(-(dy * dy + dx * dx) * inv_2ss)
            shifted = padded[radius + dy : radius + dy + h, radius + dx : radius + dx + w]
            weight = w_spatial * np.exp(-((shifted - src) ** 2) * inv_2sr)
            num += weight * shifted
            den += weight
    out = num / den
    if tex.role == "albedo":
        out = np.clip(out, 0.0, 1.0)
    role = tex.role if tex.role != "normal" else "generic"
    return TextureMap(out, role=role)


def renormalize_normals(nm: NormalMap) -> NormalMap:
    """Rescale every texel vector to unit length (zero vectors are rejected)."""
    return NormalMap(TextureMap(_unit_vectors(nm.base.data), role="normal"), space=nm.space)
