"""Bundle directory I/O and the procedural demo assets."""
import json

import numpy as np
import pytest

from nirvis.bundle import BundleError, load_bundle, load_reference_normals, save_bundle
from nirvis.procedural import (
    make_scene_env,
    procedural_reflectance,
    write_demo_assets,
)
from nirvis.texmaps import NormalMap, TextureMap, save_map


@pytest.fixture(scope="module")
def refl():
    return procedural_reflectance(0, size=32, seed=1)


class TestRoundTrip:
    def test_pfm_round_trip(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        back = load_bundle(tmp_path / "b")
        assert np.array_equal(back.diffuse_albedo.data, refl.diffuse_albedo.data)
        assert np.array_equal(back.specular_albedo.data, refl.specular_albedo.data)
        # normals are renormalized on load, which can move texels by one ulp
        np.testing.assert_allclose(
            back.normals.base.data, refl.normals.base.data, atol=1e-6
        )
        assert back.roughness == refl.roughness
        assert back.spectrum == refl.spectrum
        assert back.normals.space == refl.normals.space

    def test_second_round_trip_is_a_fixpoint(self, refl, tmp_path):
        # once renormalized, further save/load cycles are bitwise stable
        save_bundle(refl, tmp_path / "b")
        first = load_bundle(tmp_path / "b")
        save_bundle(first, tmp_path / "c")
        second = load_bundle(tmp_path / "c")
        assert np.array_equal(second.normals.base.data, first.normals.base.data)
        assert second.checksum() == first.checksum()

    def test_png16_round_trip_within_quantization(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b", encoding="png16")
        back = load_bundle(tmp_path / "b")
        np.testing.assert_allclose(
            back.diffuse_albedo.data, refl.diffuse_albedo.data, atol=1.5 / 65535
        )

    def test_provenance_persisted(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b", provenance={"sigma": 1.5, "note": "x"})
        meta = json.loads((tmp_path / "b" / "meta.json").read_text())
        assert meta["provenance"] == {"sigma": 1.5, "note": "x"}
        assert meta["schema_version"] == 1
        load_bundle(tmp_path / "b")  # provenance must not break loading


class TestLoadErrors:
    def test_not_a_directory(self, tmp_path):
        with pytest.raises(BundleError, match="not a directory"):
            load_bundle(tmp_path / "nope")

    def test_missing_meta(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        (tmp_path / "b" / "meta.json").unlink()
        with pytest.raises(BundleError, match="meta.json"):
            load_bundle(tmp_path / "b")

    def test_invalid_meta_json(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        (tmp_path / "b" / "meta.json").write_text("{oops")
        with pytest.raises(BundleError, match="invalid JSON"):
            load_bundle(tmp_path / "b")

    def test_missing_meta_key(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        meta = json.loads((tmp_path / "b" / "meta.json").read_text())
        del meta["spectrum"]
        (tmp_path / "b" / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(BundleError, match="spectrum"):
            load_bundle(tmp_path / "b")

    def test_missing_map_stem(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        (tmp_path / "b" / "specular.pfm").unlink()
        with pytest.raises(BundleError, match="specular"):
            load_bundle(tmp_path / "b")

    def test_bad_roughness_wrapped(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        meta = json.loads((tmp_path / "b" / "meta.json").read_text())
        meta["roughness"] = 0.0
        (tmp_path / "b" / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(BundleError, match="roughness"):
            load_bundle(tmp_path / "b")


class TestReferenceNormals:
    def test_absent_returns_none(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        assert load_reference_normals(tmp_path / "b") is None

    def test_present_returns_normal_map(self, refl, tmp_path):
        save_bundle(refl, tmp_path / "b")
        save_map(refl.normals.base, tmp_path / "b" / "normals_red.pfm", encoding="pfm")
        ref = load_reference_normals(tmp_path / "b")
        assert isinstance(ref, NormalMap)
        assert ref.space == "tangent"
        np.testing.assert_allclose(ref.base.data, refl.normals.base.data, atol=1e-6)


class TestProceduralReflectance:
    def test_deterministic_and_distinct_per_identity(self):
        a = procedural_reflectance(0, size=32, seed=1)
        b = procedural_reflectance(0, size=32, seed=1)
        c = procedural_reflectance(1, size=32, seed=1)
        assert a.checksum() == b.checksum()
        assert a.checksum() != c.checksum()

    def test_map_ranges(self, refl):
        assert refl.spectrum == "VIS"
        assert refl.diffuse_albedo.channels == 3
        assert refl.specular_albedo.channels == 1
        assert refl.diffuse_albedo.data.min() >= 0.02
        assert refl.diffuse_albedo.data.max() <= 0.95
        assert refl.specular_albedo.data.max() <= 0.12
        assert 0.30 <= refl.roughness <= 0.55
        norms = np.linalg.norm(refl.normals.base.data, axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-3)


class TestSceneEnv:
    def test_mean_radiance_and_positivity(self):
        env = make_scene_env(0, resolution=32)
        assert env.kind == "scene"
        assert env.base.data.shape == (32, 64, 3)
        assert env.base.data.min() > 0.0
        assert env.base.data.mean() == pytest.approx(0.5, abs=1e-3)

    def test_distinct_per_index(self):
        a = make_scene_env(0, resolution=16)
        b = make_scene_env(1, resolution=16)
        assert not np.array_equal(a.base.data, b.base.data)

    def test_resolution_validation(self):
        with pytest.raises(ValueError):
            make_scene_env(0, resolution=4)


class TestDemoAssets:
    def test_tree_and_determinism(self, tmp_path):
        write_demo_assets(tmp_path / "a", n_identities=2, n_envs=1, size=32, seed=0)
        write_demo_assets(tmp_path / "b", n_identities=2, n_envs=1, size=32, seed=0)
        for i in range(2):
            ident = tmp_path / "a" / "identities" / f"id{i:03d}"
            for name in ("diffuse.pfm", "specular.pfm", "normals.pfm",
                         "normals_red.pfm", "meta.json", "mesh.obj"):
                assert (ident / name).is_file(), name
        assert (tmp_path / "a" / "envs" / "env000.pfm").is_file()
        for rel in (
            "identities/id000/diffuse.pfm",
            "identities/id001/normals_red.pfm",
            "identities/id000/mesh.obj",
            "envs/env000.pfm",
        ):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_bundles_load_and_reference_fits(self, tmp_path):
        write_demo_assets(tmp_path, n_identities=1, n_envs=1, size=32, seed=0)
        ident = tmp_path / "identities" / "id000"
        refl = load_bundle(ident)
        assert refl.spectrum == "VIS"
        ref = load_reference_normals(ident)
        assert ref is not None
        # the reference is a blurred copy, so it differs from the bundle normals
        assert not np.array_equal(ref.base.data, refl.normals.base.data)
