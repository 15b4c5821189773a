"""Image-formation tests: energy conservation, linearity, pairing protocol."""
import math

import numpy as np
import pytest

from nirvis.nir_transform import ReflectanceSet, TransformParams, WavelengthConfig, transform_assets
from nirvis.procedural import make_uv_sphere
from nirvis.render.env import EnvironmentMap, RenderError, make_flood_env, rotate_env
from nirvis.render.renderer import (
    Camera,
    PoseSample,
    RenderQuality,
    render_nir,
    render_pair_set,
    render_vis,
    rotation_from_euler,
    sample_pose_env,
)
from nirvis.texmaps import NormalMap, TextureMap


def flat_reflectance(albedo=1.0, specular=0.0, roughness=0.5, size=8, spectrum="VIS"):
    """Constant reflectance maps with untilted tangent-space normals."""
    channels = 3 if spectrum == "VIS" else 1
    diff = TextureMap(np.full((size, size, channels), albedo), role="albedo")
    spec = TextureMap(np.full((size, size, 1), specular), role="albedo")
    n = np.zeros((size, size, 3))
    n[:, :, 2] = 1.0
    return ReflectanceSet(
        diffuse_albedo=diff,
        specular_albedo=spec,
        normals=NormalMap.from_vectors(n, space="tangent"),
        roughness=roughness,
        spectrum=spectrum,
    )


def uniform_env(value=1.0, h=8, channels=3):
    return EnvironmentMap(
        TextureMap(np.full((h, 2 * h, channels), value)), kind="scene"
    )


def noise_env(seed=0, h=16, channels=3):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.05, 2.0, size=(h, 2 * h, channels))
    return EnvironmentMap(TextureMap(data), kind="scene")


@pytest.fixture(scope="module")
def sphere():
    return make_uv_sphere(16, 32)


CAM = Camera(width=48, height=48)
FRONTAL = PoseSample(np.eye(3))


class TestEnergyAndLinearity:
    def test_furnace_white_diffuse_sphere(self, sphere):
        # albedo-1 Lambertian under a unit uniform environment must return
        # every covered pixel to ~1: the renderer neither makes nor loses light
        r = flat_reflectance(albedo=1.0, specular=0.0)
        img = render_vis(sphere, r, FRONTAL, uniform_env(1.0), CAM, RenderQuality(spp=16))
        covered = img.data[np.any(img.data > 0, axis=-1)]
        assert covered.shape[0] > 300
        assert covered.min() >= 0.98
        assert covered.max() <= 1.02

    def test_background_pixels_are_zero(self, sphere):
        r = flat_reflectance(albedo=1.0)
        img = render_vis(sphere, r, FRONTAL, uniform_env(1.0), CAM, RenderQuality(spp=4))
        corner = img.data[:4, :4]  # sphere projects to the image center
        assert np.all(corner == 0.0)

    def test_diffuse_reflectance_times_radiance(self, sphere):
        # uniform illumination: pixel value = albedo * radiance exactly
        r = flat_reflectance(albedo=0.3)
        img = render_vis(sphere, r, FRONTAL, uniform_env(2.0), CAM, RenderQuality(spp=8))
        covered = img.data[np.any(img.data > 0, axis=-1)]
        np.testing.assert_allclose(covered, 0.3 * 2.0, rtol=1e-6)

    def test_zero_environment_renders_black(self, sphere):
        r = flat_reflectance(albedo=0.8, specular=0.04)
        img = render_vis(sphere, r, FRONTAL, uniform_env(0.0), CAM, RenderQuality(spp=4))
        assert np.all(img.data == 0.0)

    def test_linear_in_environment_scale(self, sphere):
        r = flat_reflectance(albedo=0.6, specular=0.04, roughness=0.4)
        env = noise_env(seed=3)
        env2 = EnvironmentMap(TextureMap(env.base.data * 2.0), kind="scene")
        q = RenderQuality(spp=8, seed=1)
        a = render_vis(sphere, r, FRONTAL, env, CAM, q)
        b = render_vis(sphere, r, FRONTAL, env2, CAM, q)
        np.testing.assert_allclose(b.data, 2.0 * a.data, rtol=1e-12, atol=1e-15)

    def test_superposition_of_environments(self, sphere):
        # sample directions never depend on the environment, so rendering is
        # additive over environment radiance to rounding error
        r = flat_reflectance(albedo=0.6, specular=0.04, roughness=0.4)
        e1 = noise_env(seed=5)
        e2 = noise_env(seed=6)
        esum = EnvironmentMap(
            TextureMap(e1.base.data + e2.base.data), kind="scene"
        )
        q = RenderQuality(spp=8, seed=2)
        img1 = render_vis(sphere, r, FRONTAL, e1, CAM, q)
        img2 = render_vis(sphere, r, FRONTAL, e2, CAM, q)
        both = render_vis(sphere, r, FRONTAL, esum, CAM, q)
        np.testing.assert_allclose(both.data, img1.data + img2.data, atol=1e-6)


class TestDeterminism:
    def test_same_inputs_same_image(self, sphere):
        r = flat_reflectance(albedo=0.5, specular=0.04)
        env = noise_env(seed=9)
        q = RenderQuality(spp=8, seed=4)
        a = render_vis(sphere, r, FRONTAL, env, CAM, q)
        b = render_vis(sphere, r, FRONTAL, env, CAM, q)
        assert np.array_equal(a.data, b.data)

    def test_seed_changes_monte_carlo_noise(self, sphere):
        r = flat_reflectance(albedo=0.5)
        env = noise_env(seed=9)
        a = render_vis(sphere, r, FRONTAL, env, CAM, RenderQuality(spp=4, seed=0))
        b = render_vis(sphere, r, FRONTAL, env, CAM, RenderQuality(spp=4, seed=1))
        assert not np.array_equal(a.data, b.data)

    def test_pair_index_changes_monte_carlo_noise(self, sphere):
        r = flat_reflectance(albedo=0.5)
        env = noise_env(seed=9)
        q = RenderQuality(spp=4, seed=0)
        a = render_vis(sphere, r, FRONTAL, env, CAM, q, pair_index=0)
        b = render_vis(sphere, r, FRONTAL, env, CAM, q, pair_index=1)
        assert not np.array_equal(a.data, b.data)

    def test_env_yaw_equals_prerotated_env(self, sphere):
        # rendering with a pose yaw must equal rendering the materialized
        # rotated environment at yaw 0, bit for bit
        r = flat_reflectance(albedo=0.5, specular=0.04)
        env = noise_env(seed=11)
        q = RenderQuality(spp=8, seed=3)
        yawed = PoseSample(np.eye(3), env_yaw_deg=123.4)
        a = render_vis(sphere, r, yawed, env, CAM, q)
        b = render_vis(sphere, r, FRONTAL, rotate_env(env, 123.4), CAM, q)
        assert np.array_equal(a.data, b.data)


class TestValidation:
    def test_render_vis_rejects_nir_assets(self, sphere):
        r = flat_reflectance(spectrum="NIR")
        with pytest.raises(RenderError, match="VIS"):
            render_vis(sphere, r, FRONTAL, uniform_env(), CAM)

    def test_render_vis_rejects_mono_environment(self, sphere):
        r = flat_reflectance()
        with pytest.raises(RenderError, match="3-channel"):
            render_vis(sphere, r, FRONTAL, uniform_env(channels=1), CAM)

    def test_render_nir_rejects_vis_assets(self, sphere):
        r = flat_reflectance(spectrum="VIS")
        with pytest.raises(RenderError, match="NIR"):
            render_nir(sphere, r, FRONTAL, uniform_env(channels=1), CAM)

    def test_render_nir_rejects_rgb_environment(self, sphere):
        r = flat_reflectance(spectrum="NIR")
        with pytest.raises(RenderError, match="1-channel"):
            render_nir(sphere, r, FRONTAL, uniform_env(channels=3), CAM)

    def test_pose_rejects_non_rotation(self):
        with pytest.raises(RenderError, match="orthonormal"):
            PoseSample(np.eye(3) * 2.0)

    def test_pose_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(RenderError, match="determinant"):
            PoseSample(flip)

    def test_pose_rejects_negative_env_index(self):
        with pytest.raises(RenderError, match="env_index"):
            PoseSample(np.eye(3), env_index=-1)

    def test_pose_wraps_env_yaw(self):
        assert PoseSample(np.eye(3), env_yaw_deg=370.0).env_yaw_deg == pytest.approx(10.0)
        assert PoseSample(np.eye(3), env_yaw_deg=-90.0).env_yaw_deg == pytest.approx(270.0)

    def test_pose_rotation_is_frozen(self):
        p = PoseSample(np.eye(3))
        with pytest.raises(ValueError):
            p.rotation[0, 0] = 5.0

    def test_camera_validation(self):
        with pytest.raises(RenderError):
            Camera(width=0)
        with pytest.raises(RenderError):
            Camera(focal=-1.0)
        with pytest.raises(RenderError):
            Camera(distance=0.0)
        assert Camera(width=64, height=32).focal_px == 64.0
        assert Camera(width=64, focal=200.0).focal_px == 200.0

    def test_quality_validation(self):
        with pytest.raises(RenderError):
            RenderQuality(spp=0)


class TestPoseSampling:
    def test_deterministic_per_seed(self):
        a = sample_pose_env(7, n_pairs=5, env_count=3)
        b = sample_pose_env(7, n_pairs=5, env_count=3)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.rotation, sb.rotation)
            assert sa.env_index == sb.env_index
            assert sa.env_yaw_deg == sb.env_yaw_deg
        c = sample_pose_env(8, n_pairs=5, env_count=3)
        assert any(not np.array_equal(sa.rotation, sc.rotation) for sa, sc in zip(a, c))

    def test_draw_ranges(self):
        limits = (45.0, 15.0, 10.0)
        samples = sample_pose_env(0, n_pairs=400, env_count=4, rot_limits=limits)
        for s in samples:
            assert 0 <= s.env_index < 4
            assert 0.0 <= s.env_yaw_deg < 360.0
            rot = s.rotation
            # recover the factored angles from R = Ry @ Rx @ Rz
            pitch = math.degrees(math.asin(-rot[1, 2]))
            yaw = math.degrees(math.atan2(rot[0, 2], rot[2, 2]))
            roll = math.degrees(math.atan2(rot[1, 0], rot[1, 1]))
            assert abs(yaw) <= limits[0] + 1e-9
            assert abs(pitch) <= limits[1] + 1e-9
            assert abs(roll) <= limits[2] + 1e-9

    def test_draws_cover_their_ranges_uniformly(self):
        samples = sample_pose_env(123, n_pairs=10_000, env_count=4)
        idx = np.array([s.env_index for s in samples])
        counts = np.bincount(idx, minlength=4)
        np.testing.assert_allclose(counts, 2500, rtol=0.05)
        yaws = np.array([s.env_yaw_deg for s in samples])
        assert abs(yaws.mean() - 180.0) < 5.0

    def test_rejects_bad_counts(self):
        with pytest.raises(RenderError):
            sample_pose_env(0, env_count=0)
        with pytest.raises(RenderError):
            sample_pose_env(0, n_pairs=-1)

    def test_euler_matrix_order(self):
        # yaw-only and roll-only matrices pin down the Ry @ Rx @ Rz order
        yaw90 = rotation_from_euler(90.0, 0.0, 0.0)
        np.testing.assert_allclose(yaw90 @ np.array([0, 0, 1.0]), [1, 0, 0], atol=1e-12)
        roll90 = rotation_from_euler(0.0, 0.0, 90.0)
        np.testing.assert_allclose(roll90 @ np.array([1.0, 0, 0]), [0, 1, 0], atol=1e-12)


class TestPairSet:
    def setup_method(self):
        self.mesh = make_uv_sphere(12, 24)
        self.r_vis = flat_reflectance(albedo=0.5, specular=0.04, roughness=0.6, size=16)
        self.wl = WavelengthConfig()
        self.envs = [noise_env(seed=20, h=16), noise_env(seed=21, h=16)]
        self.flood = make_flood_env(4.0, angular_radius_deg=25.0, resolution=16)
        self.cam = Camera(width=32, height=32)
        self.quality = RenderQuality(spp=4, seed=5)
        self.params = TransformParams(sigma=0.5)

    def run_pairs(self, samples):
        return render_pair_set(
            self.mesh, self.r_vis, self.wl, samples, self.envs,
            self.flood, self.cam, self.quality, self.params,
        )

    def test_pairs_share_pose_and_checksum(self):
        samples = sample_pose_env(3, n_pairs=4, env_count=2)
        pairs = self.run_pairs(samples)
        assert [p.index for p in pairs] == [0, 1, 2, 3]
        expected = transform_assets(self.r_vis, self.wl, self.params).checksum()
        for p, s in zip(pairs, samples):
            assert p.pose is s
            assert p.nir_checksum == expected
            assert p.vis.channels == 3
            assert p.nir.channels == 1

    def test_reproducible_bitwise(self):
        samples = sample_pose_env(3, n_pairs=2, env_count=2)
        first = self.run_pairs(samples)
        second = self.run_pairs(samples)
        for a, b in zip(first, second):
            assert np.array_equal(a.vis.data, b.vis.data)
            assert np.array_equal(a.nir.data, b.nir.data)

    def test_flood_is_camera_mounted(self):
        # with a black scene environment, only the flood lights the NIR
        # image; rotating the (black) scene must not move the flood
        black = uniform_env(0.0, h=16)
        base = sample_pose_env(3, n_pairs=1, env_count=1)[0]
        for yaw in (0.0, 57.0, 311.0):
            s = PoseSample(base.rotation, 0, yaw)
            pair = render_pair_set(
                self.mesh, self.r_vis, self.wl, [s], [black],
                self.flood, self.cam, self.quality, self.params,
            )[0]
            if yaw == 0.0:
                ref = pair.nir.data
            else:
                assert np.array_equal(pair.nir.data, ref)
        assert ref.max() > 0.0

    def test_rejects_env_index_out_of_range(self):
        bad = PoseSample(np.eye(3), env_index=5)
        with pytest.raises(RenderError, match="out of range"):
            self.run_pairs([bad])
