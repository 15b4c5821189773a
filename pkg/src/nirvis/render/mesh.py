"""Triangle meshes with per-vertex UVs, normals, and tangents.

The loader reads ASCII OBJ (v/vt/vn/f), fan-triangulates polygons, unifies
the separate OBJ index spaces into single per-vertex attributes, and fills
in any missing normals (area-weighted from geometry) and tangents (from UV
derivatives). UVs are mandatory: every shading path samples textures.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import RenderError
from .brdf import orthonormal_basis

__all__ = ["Mesh", "MeshWarning", "build_mesh", "load_mesh"]


class MeshWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Mesh:
    """Validated triangle mesh: positions, UVs, unit normals, unit tangents."""

    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int32
    uvs: np.ndarray  # (n, 2) float64
    normals: np.ndarray  # (n, 3) float64
    tangents: np.ndarray  # (n, 3) float64

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int32)
        uv = np.asarray(self.uvs, dtype=np.float64)
        nrm = np.asarray(self.normals, dtype=np.float64)
        tan = np.asarray(self.tangents, dtype=np.float64)
        n = len(v)
        if v.ndim != 2 or v.shape[1] != 3:
            raise RenderError(f"vertices must be (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise RenderError(f"triangles must be (m, 3), got {t.shape}")
        if uv.shape != (n, 2):
            raise RenderError(f"uvs must be ({n}, 2), got {uv.shape}")
        if nrm.shape != (n, 3) or tan.shape != (n, 3):
            raise RenderError("normals/tangents must match vertex count")
        if len(t) and (t.min() < 0 or t.max() >= n):
            raise RenderError(f"triangle index out of range (n={n})")
        for name, arr in (("normals", nrm), ("tangents", tan)):
            lens = np.linalg.norm(arr, axis=-1)
            if np.abs(lens - 1.0).max() > 1e-4:
                raise RenderError(f"{name} must be unit length within 1e-4")
        if len(t) and _triangle_areas(v, t).min() <= 0.0:
            raise RenderError("mesh contains degenerate (zero-area) triangles")
        for field, arr in (
            ("vertices", v),
            ("triangles", t),
            ("uvs", uv),
            ("normals", nrm),
            ("tangents", tan),
        ):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def _triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)


def _vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    # area-weighted facet normals: the unnormalized cross product already
    # carries the area weight
    acc = np.zeros_like(vertices)
    p0 = vertices[triangles[:, 0]]
    face = np.cross(vertices[triangles[:, 1]] - p0, vertices[triangles[:, 2]] - p0)
    for k in range(3):
        np.add.at(acc, triangles[:, k], face)
    lens = np.linalg.norm(acc, axis=-1, keepdims=True)
    bad = lens[:, 0] < 1e-20
    if bad.any():
        # isolated or flat-degenerate vertices: give them an arbitrary axis
        acc[bad] = (0.0, 0.0, 1.0)
        lens = np.linalg.norm(acc, axis=-1, keepdims=True)
    return acc / lens


def _vertex_tangents(
    vertices: np.ndarray, triangles: np.ndarray, uvs: np.ndarray, normals: np.ndarray
) -> np.ndarray:
    acc = np.zeros_like(vertices)
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    t0, t1, t2 = (uvs[triangles[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    d1, d2 = t1 - t0, t2 - t0
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    ok = np.abs(det) > 1e-12
    r = np.zeros_like(det)
    r[ok] = 1.0 / det[ok]
    tan = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * r[:, None]
    tan[~ok] = 0.0
    for k in range(3):
        np.add.at(acc, triangles[:, k], tan)
    # Gram-Schmidt against the normal; fall back to an arbitrary frame
    # where the UV derivatives vanished
    acc -= normals * np.sum(acc * normals, axis=-1, keepdims=True)
    lens = np.linalg.norm(acc, axis=-1, keepdims=True)
    weak = lens[:, 0] < 1e-8
    if weak.any():
        fallback, _ = orthonormal_basis(normals[weak])
        acc[weak] = fallback
        lens = np.linalg.norm(acc, axis=-1, keepdims=True)
    return acc / lens


def build_mesh(
    vertices: np.ndarray,
    triangles: np.ndarray,
    uvs: np.ndarray,
    normals: np.ndarray | None = None,
    tangents: np.ndarray | None = None,
) -> Mesh:
    """Assemble a Mesh, computing missing attributes and dropping degenerate
    triangles (with a warning if any are found)."""
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int32)
    uvs = np.asarray(uvs, dtype=np.float64)
    if len(triangles) and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise RenderError(
            f"triangle index out of range [0, {len(vertices)}): "
            f"[{triangles.min()}, {triangles.max()}]"
        )
    if len(triangles):
        areas = _triangle_areas(vertices, triangles)
        bad = areas <= 1e-14
        if bad.any():
            warnings.warn(f"dropping {int(bad.sum())} degenerate triangles", MeshWarning)
            triangles = triangles[~bad]
    if normals is None:
        normals = _vertex_normals(vertices, triangles)
    else:
        normals = np.asarray(normals, dtype=np.float64)
        normals = normals / np.linalg.norm(normals, axis=-1, keepdims=True)
    if tangents is None:
        tangents = _vertex_tangents(vertices, triangles, uvs, normals)
    else:
        tangents = np.asarray(tangents, dtype=np.float64)
        tangents = tangents / np.linalg.norm(tangents, axis=-1, keepdims=True)
    _warn_if_nonmanifold(triangles)
    return Mesh(vertices, triangles, uvs, normals, tangents)


def _warn_if_nonmanifold(triangles: np.ndarray) -> None:
    if not len(triangles):
        return
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    n_bad = int((counts > 2).sum())
    if n_bad:
        warnings.warn(
            f"mesh is non-manifold: {n_bad} edges shared by more than two triangles",
            MeshWarning,
        )


def _parse_index(token: str, count: int) -> int:
    idx = int(token)
    return idx - 1 if idx > 0 else count + idx


def load_mesh(path: str | Path) -> Mesh:
    """Load an ASCII OBJ file. UVs are required; polygons are fan-triangulated;
    missing normals/tangents are computed."""
    path = Path(path)
    if not path.is_file():
        raise RenderError(f"cannot read {path}: no such file")
    positions: list[list[float]] = []
    texcoords: list[list[float]] = []
    obj_normals: list[list[float]] = []
    corners: list[list[tuple[int, int, int]]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag, args = parts[0], parts[1:]
            if tag == "v":
                positions.append([float(x) for x in args[:3]])
            elif tag == "vt":
                texcoords.append([float(x) for x in args[:2]])
            elif tag == "vn":
                obj_normals.append([float(x) for x in args[:3]])
            elif tag == "f":
                if len(args) < 3:
                    raise RenderError(f"{path}:{lineno}: face with fewer than 3 vertices")
                face = []
                for token in args:
                    fields = token.split("/")
                    vi = _parse_index(fields[0], len(positions))
                    if len(fields) < 2 or fields[1] == "":
                        raise RenderError(
                            f"{path}:{lineno}: face vertex without texture coordinate "
                            "(UVs are required)"
                        )
                    ti = _parse_index(fields[1], len(texcoords))
                    ni = (
                        _parse_index(fields[2], len(obj_normals))
                        if len(fields) > 2 and fields[2] != ""
                        else -1
                    )
                    face.append((vi, ti, ni))
                corners.append(face)
    if not corners:
        raise RenderError(f"{path}: no faces found")
    if not texcoords:
        raise RenderError(f"{path}: no texture coordinates (UVs are required)")

    # unify the separate OBJ index spaces
    combo_ids: dict[tuple[int, int, int], int] = {}
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    norms: list[list[float]] = []
    have_all_normals = all(ni >= 0 for face in corners for (_, _, ni) in face)
    tris: list[list[int]] = []
    for face in corners:
        ids = []
        for combo in face:
            if combo not in combo_ids:
                vi, ti, ni = combo
                if not 0 <= vi < len(positions):
                    raise RenderError(f"{path}: vertex index {vi + 1} out of range")
                if not 0 <= ti < len(texcoords):
                    raise RenderError(f"{path}: texture index {ti + 1} out of range")
                combo_ids[combo] = len(verts)
                verts.append(positions[vi])
                uvs.append(texcoords[ti])
                if have_all_normals:
                    norms.append(obj_normals[ni])
            ids.append(combo_ids[combo])
        for k in range(1, len(ids) - 1):
            tris.append([ids[0], ids[k], ids[k + 1]])

    return build_mesh(
        np.array(verts),
        np.array(tris, dtype=np.int32),
        np.array(uvs),
        normals=np.array(norms) if have_all_normals else None,
    )
