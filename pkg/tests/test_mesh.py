import numpy as np
import pytest

from nirvis.procedural import make_uv_sphere, mesh_to_obj
from nirvis.render.env import RenderError
from nirvis.render.mesh import Mesh, MeshWarning, build_mesh, load_mesh


def write_obj(path, verts, uvs, faces, normals=None):
    lines = [f"v {x} {y} {z}" for x, y, z in verts]
    lines += [f"vt {u} {v}" for u, v in uvs]
    if normals is not None:
        lines += [f"vn {x} {y} {z}" for x, y, z in normals]
        lines += ["f " + " ".join(f"{i}/{i}/{i}" for i in f) for f in faces]
    else:
        lines += ["f " + " ".join(f"{i}/{i}" for i in f) for f in faces]
    path.write_text("\n".join(lines) + "\n")


def quad_obj(path, normals=False):
    verts = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)]
    uvs = [(0, 0), (1, 0), (1, 1), (0, 1)]
    ns = [(0, 0, 1)] * 4 if normals else None
    write_obj(path, verts, uvs, [(1, 2, 3, 4)], ns)


class TestMeshValidation:
    def test_out_of_range_index_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        uvs = np.zeros((3, 2))
        with pytest.raises(RenderError, match="index"):
            build_mesh(verts, np.array([[0, 1, 5]]), uvs)

    def test_non_unit_normals_rejected(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
        tris = np.array([[0, 1, 2]])
        uvs = np.zeros((3, 2))
        bad = np.full((3, 3), 2.0)
        with pytest.raises(RenderError, match="unit"):
            Mesh(verts, tris.astype(np.int32), uvs, bad, np.tile([1.0, 0, 0], (3, 1)))

    def test_degenerate_triangles_dropped_with_warning(self):
        verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], dtype=float)
        tris = np.array([[0, 1, 2], [0, 1, 3]])  # second is collinear
        uvs = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
        with pytest.warns(MeshWarning, match="degenerate"):
            mesh = build_mesh(verts, tris, uvs)
        assert mesh.n_triangles == 1

    def test_arrays_frozen(self):
        mesh = make_uv_sphere(4, 6)
        with pytest.raises(ValueError):
            mesh.vertices[0, 0] = 5.0


class TestBuildMesh:
    def test_computed_normals_face_outward_on_sphere(self):
        sphere = make_uv_sphere(16, 32)
        verts = np.asarray(sphere.vertices)
        tris = np.asarray(sphere.triangles)
        mesh = build_mesh(verts, tris, np.asarray(sphere.uvs))  # recompute attrs
        used = np.unique(tris)  # seam-duplicate pole corners have no faces
        agreement = np.sum(mesh.normals[used] * verts[used], axis=1)
        assert agreement.min() > 0.9

    def test_tangents_orthogonal_to_normals(self):
        sphere = make_uv_sphere(12, 24)
        dots = np.abs(np.sum(sphere.tangents * sphere.normals, axis=1))
        assert dots.max() < 1e-6

    def test_non_manifold_warns(self):
        # three triangles sharing one edge
        verts = np.array(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, -1, 0]], dtype=float
        )
        tris = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
        uvs = np.array([[0, 0], [1, 0], [0, 1], [0.5, 1], [1, 1]], dtype=float)
        with pytest.warns(MeshWarning, match="manifold"):
            build_mesh(verts, tris, uvs)


class TestLoadMesh:
    def test_sphere_normals_match_positions(self, tmp_path):
        # spherical geometry: computed vertex normals ~ normalized positions
        sphere = make_uv_sphere(24, 48)
        path = tmp_path / "sphere.obj"
        # strip the authored normals so load_mesh recomputes them
        obj_lines = []
        mesh_to_obj(sphere, path)
        for line in path.read_text().splitlines():
            if line.startswith("vn "):
                continue
            if line.startswith("f "):
                line = "f " + " ".join(
                    "/".join(part.split("/")[:2]) for part in line.split()[1:]
                )
            obj_lines.append(line)
        path.write_text("\n".join(obj_lines) + "\n")
        mesh = load_mesh(path)
        used = np.unique(np.asarray(mesh.triangles))
        pos = np.asarray(mesh.vertices)[used]
        pos = pos / np.linalg.norm(pos, axis=1, keepdims=True)
        # area-weighted normals on a 24x48 grid land within a few degrees
        # of the analytic sphere normal
        agreement = np.sum(np.asarray(mesh.normals)[used] * pos, axis=1)
        assert agreement.min() > 0.99
        assert float(np.mean(agreement)) > 0.999

    def test_authored_normals_kept(self, tmp_path):
        path = tmp_path / "quad.obj"
        quad_obj(path, normals=True)
        mesh = load_mesh(path)
        np.testing.assert_allclose(mesh.normals, np.tile([0.0, 0.0, 1.0], (4, 1)))

    def test_quads_triangulated(self, tmp_path):
        path = tmp_path / "quad.obj"
        quad_obj(path)
        mesh = load_mesh(path)
        assert mesh.n_triangles == 2
        assert mesh.n_vertices == 4

    def test_missing_uvs_rejected(self, tmp_path):
        path = tmp_path / "nouv.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        with pytest.raises(RenderError, match="UV"):
            load_mesh(path)

    def test_partial_uvs_rejected(self, tmp_path):
        path = tmp_path / "part.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3\n"
        )
        with pytest.raises(RenderError, match="UV"):
            load_mesh(path)

    def test_negative_indices(self, tmp_path):
        path = tmp_path / "neg.obj"
        path.write_text(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3 -2/-2 -1/-1\n"
        )
        mesh = load_mesh(path)
        assert mesh.n_triangles == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(RenderError, match="no such file|not found|cannot"):
            load_mesh(tmp_path / "absent.obj")

    def test_round_trip_through_obj(self, tmp_path):
        # the loader keeps only face-referenced vertices, so compare the
        # referenced geometry rather than raw arrays
        sphere = make_uv_sphere(8, 12)
        path = tmp_path / "rt.obj"
        mesh_to_obj(sphere, path)
        again = load_mesh(path)
        assert again.n_triangles == sphere.n_triangles

        def corner_set(mesh):
            v = np.asarray(mesh.vertices)[np.asarray(mesh.triangles)]
            t = np.asarray(mesh.uvs)[np.asarray(mesh.triangles)]
            corners = np.concatenate([v, t], axis=-1).reshape(-1, 5)
            return np.array(sorted(map(tuple, np.round(corners, 6))))

        np.testing.assert_allclose(corner_set(again), corner_set(sphere), atol=1e-5)


class TestUvSphere:
    def test_radius_and_counts(self):
        mesh = make_uv_sphere(8, 16, radius=2.0)
        r = np.linalg.norm(mesh.vertices, axis=1)
        np.testing.assert_allclose(r, 2.0, atol=1e-12)

    def test_rejects_tiny_grids(self):
        with pytest.raises(ValueError):
            make_uv_sphere(2, 10)
