"""Reflectance bundle directories.

A bundle is a directory with fixed stems — diffuse.*, specular.*,
normals.* — plus meta.json carrying the roughness scalar and spectrum
tag. Optional members: normals_red.* (a measured red-channel normal map
used as the width-fitting reference) and mesh.obj (geometry for the
renderer). PFM is the preferred encoding since it round-trips float
texels exactly; 8/16-bit PNG is accepted on load.
"""
from __future__ import annotations

import json
from pathlib import Path

from .nir_transform import ReflectanceSet
from .texmaps import NormalMap, TextureError, TextureMap, load_map, save_map

__all__ = ["BundleError", "load_bundle", "load_reference_normals", "save_bundle"]

SCHEMA_VERSION = 1
_EXTS = (".pfm", ".png")


class BundleError(ValueError):
    pass


def _find(bundle_dir: Path, stem: str) -> Path | None:
    for ext in _EXTS:
        p = bundle_dir / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


def _require(bundle_dir: Path, stem: str) -> Path:
    p = _find(bundle_dir, stem)
    if p is None:
        raise BundleError(f"{bundle_dir}: missing {stem}.pfm/.png")
    return p


def save_bundle(
    refl: ReflectanceSet,
    bundle_dir: str | Path,
    provenance: dict | None = None,
    encoding: str = "pfm",
) -> Path:
    """Write a reflectance set as a bundle directory; returns the directory."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    ext = ".pfm" if encoding == "pfm" else ".png"
    save_map(refl.diffuse_albedo, bundle_dir / f"diffuse{ext}", encoding=encoding)
    save_map(refl.specular_albedo, bundle_dir / f"specular{ext}", encoding=encoding)
    save_map(refl.normals.base, bundle_dir / f"normals{ext}", encoding=encoding)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "spectrum": refl.spectrum,
        "roughness": refl.roughness,
        "normal_space": refl.normals.space,
    }
    if provenance is not None:
        meta["provenance"] = provenance
    (bundle_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bundle_dir


def load_bundle(bundle_dir: str | Path) -> ReflectanceSet:
    bundle_dir = Path(bundle_dir)
    if not bundle_dir.is_dir():
        raise BundleError(f"{bundle_dir}: not a directory")
    meta_path = bundle_dir / "meta.json"
    if not meta_path.is_file():
        raise BundleError(f"{bundle_dir}: missing meta.json")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("spectrum", "roughness"):
        if key not in meta:
            raise BundleError(f"{meta_path}: missing key {key!r}")
    try:
        diffuse = load_map(_require(bundle_dir, "diffuse"), role="albedo")
        specular = load_map(_require(bundle_dir, "specular"), role="albedo")
        normals_tex = load_map(_require(bundle_dir, "normals"), role="normal")
    except TextureError as exc:
        raise BundleError(f"{bundle_dir}: {exc}") from exc
    normals = NormalMap(normals_tex, space=meta.get("normal_space", "tangent"))
    try:
        return ReflectanceSet(
            diffuse_albedo=diffuse,
            specular_albedo=specular,
            normals=normals,
            roughness=float(meta["roughness"]),
            spectrum=str(meta["spectrum"]),
        )
    except ValueError as exc:
        raise BundleError(f"{bundle_dir}: {exc}") from exc


def load_reference_normals(bundle_dir: str | Path) -> NormalMap | None:
    """The optional measured red-channel normal map, if the bundle has one."""
    bundle_dir = Path(bundle_dir)
    p = _find(bundle_dir, "normals_red")
    if p is None:
        return None
    meta_path = bundle_dir / "meta.json"
    space = "tangent"
    if meta_path.is_file():
        space = json.loads(meta_path.read_text()).get("normal_space", "tangent")
    return NormalMap(load_map(p, role="normal"), space=space)
