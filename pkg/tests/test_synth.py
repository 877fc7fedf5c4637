import numpy as np
import pytest

from helpers import cube_cloud, default_intrinsics, make_cube_scene
from proxyvote.errors import ConfigurationError, ModelLoadError
from proxyvote.geometry import pixel_centers, project
from proxyvote.synth import (NoiseSpec, PoseRanges, corrupt, load_scene,
                             sample_pose, save_scene)


@pytest.fixture(scope="module")
def scene():
    return make_cube_scene(seed=3)


class TestSamplePose:
    def test_projections_respect_margin(self):
        cloud = cube_cloud()
        intr = default_intrinsics()
        ranges = PoseRanges(z_range=(0.45, 0.7))
        for seed in range(10):
            pose = sample_pose(seed, ranges, cloud, intr, 64, 64)
            proj = project(pose, intr, cloud.points)
            assert proj.min() >= ranges.margin
            assert proj.max() <= 64 - ranges.margin

    def test_deterministic_per_seed(self):
        cloud = cube_cloud()
        intr = default_intrinsics()
        ranges = PoseRanges(z_range=(0.45, 0.7))
        a = sample_pose(5, ranges, cloud, intr, 64, 64)
        b = sample_pose(5, ranges, cloud, intr, 64, 64)
        assert np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.translation, b.translation)

    def test_impossible_range_raises(self):
        cloud = cube_cloud()
        intr = default_intrinsics()
        # object too close: it cannot fit inside a 64 px frame
        with pytest.raises(ConfigurationError):
            sample_pose(0, PoseRanges(z_range=(0.01, 0.02)), cloud, intr, 64, 64)

    def test_rotation_distribution_not_degenerate(self):
        cloud = cube_cloud()
        intr = default_intrinsics()
        ranges = PoseRanges(z_range=(0.45, 0.7))
        traces = [np.trace(sample_pose(s, ranges, cloud, intr, 64, 64).rotation)
                  for s in range(20)]
        assert np.std(traces) > 0.1

    def test_invalid_ranges(self):
        with pytest.raises(ValueError):
            PoseRanges(z_range=(-1.0, 1.0))


class TestMakeScene:
    def test_mask_covers_projections(self, scene):
        cloud, keys, s = scene
        proj = project(s.pose, s.intr, cloud.points)
        for px, py in proj:
            assert s.mask[int(py), int(px)]

    def test_mask_nonempty_and_bounded(self, scene):
        _, _, s = scene
        n = np.count_nonzero(s.mask)
        assert 0 < n < s.mask.size

    def test_fields_unit_norm_on_mask(self, scene):
        _, _, s = scene
        for f in s.gt_fields:
            norms = np.linalg.norm(f[s.mask], axis=-1)
            assert np.allclose(norms, 1.0, atol=1e-12)

    def test_fields_zero_off_mask(self, scene):
        _, _, s = scene
        for f in s.gt_fields:
            assert np.all(f[~s.mask] == 0.0)

    def test_fields_point_at_keypoints(self, scene):
        _, _, s = scene
        ctr = pixel_centers(s.height, s.width)
        for f, k in zip(s.gt_fields, s.keypoints2):
            diff = k[None, None] - ctr
            r = np.linalg.norm(diff, axis=-1)
            ok = s.mask & (r > 1e-9)
            cross = f[..., 0] * diff[..., 1] - f[..., 1] * diff[..., 0]
            assert np.abs(cross[ok]).max() < 1e-9 * r[ok].max()
            dot = f[..., 0] * diff[..., 0] + f[..., 1] * diff[..., 1]
            assert np.all(dot[ok] > 0)

    def test_keypoints2_match_projection(self, scene):
        _, keys, s = scene
        assert np.allclose(s.keypoints2, project(s.pose, s.intr, keys.points3))


class TestCorrupt:
    def test_identity_noise_is_identity(self, scene):
        _, _, s = scene
        out = corrupt(s, NoiseSpec())
        assert np.array_equal(out.mask, s.mask)
        assert np.array_equal(out.gt_fields, s.gt_fields)

    def test_angular_noise_preserves_norms(self, scene):
        _, _, s = scene
        out = corrupt(s, NoiseSpec(angular_sigma=5.0, rng_seed=1))
        for f in out.gt_fields:
            assert np.allclose(np.linalg.norm(f[out.mask], axis=-1), 1.0, atol=1e-12)

    def test_angular_noise_statistics(self, scene):
        _, _, s = scene
        sigma = 5.0
        out = corrupt(s, NoiseSpec(angular_sigma=sigma, rng_seed=2))
        f0, g0 = out.gt_fields[0], s.gt_fields[0]
        dots = np.clip(np.sum(f0[out.mask] * g0[out.mask], axis=-1), -1, 1)
        angles = np.degrees(np.arccos(dots))
        # arccos folds the sign, so compare against the half-normal mean
        assert abs(np.mean(angles) - sigma * np.sqrt(2 / np.pi)) < 0.7

    def test_flip_probability(self, scene):
        _, _, s = scene
        out = corrupt(s, NoiseSpec(flip_prob=0.3, rng_seed=3))
        dots = np.sum(out.gt_fields[0][out.mask] * s.gt_fields[0][out.mask], axis=-1)
        frac = np.mean(dots < 0)
        assert abs(frac - 0.3) < 0.1

    def test_occlusion_removes_connected_fraction(self, scene):
        _, _, s = scene
        out = corrupt(s, NoiseSpec(occlusion_frac=0.3, rng_seed=4))
        n0, n1 = np.count_nonzero(s.mask), np.count_nonzero(out.mask)
        assert n1 == n0 - int(round(0.3 * n0))
        assert np.all(s.mask[out.mask])  # subset
        # removed pixels form one connected blob
        removed = s.mask & ~out.mask
        from collections import deque
        ii, jj = np.nonzero(removed)
        seen = np.zeros_like(removed)
        q = deque([(ii[0], jj[0])])
        seen[ii[0], jj[0]] = True
        count = 0
        while q:
            i, j = q.popleft()
            count += 1
            for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
                if 0 <= ni < removed.shape[0] and 0 <= nj < removed.shape[1] \
                        and removed[ni, nj] and not seen[ni, nj]:
                    seen[ni, nj] = True
                    q.append((ni, nj))
        assert count == len(ii)

    def test_fields_zero_outside_new_mask(self, scene):
        _, _, s = scene
        out = corrupt(s, NoiseSpec(occlusion_frac=0.4, angular_sigma=3.0, rng_seed=5))
        for f in out.gt_fields:
            assert np.all(f[~out.mask] == 0.0)

    def test_deterministic(self, scene):
        _, _, s = scene
        spec = NoiseSpec(angular_sigma=4.0, flip_prob=0.1, occlusion_frac=0.2, rng_seed=6)
        a, b = corrupt(s, spec), corrupt(s, spec)
        assert np.array_equal(a.mask, b.mask)
        assert np.array_equal(a.gt_fields, b.gt_fields)

    def test_does_not_mutate_input(self, scene):
        _, _, s = scene
        before_mask = s.mask.copy()
        before_fields = s.gt_fields.copy()
        corrupt(s, NoiseSpec(angular_sigma=4.0, occlusion_frac=0.2, rng_seed=7))
        assert np.array_equal(s.mask, before_mask)
        assert np.array_equal(s.gt_fields, before_fields)

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            NoiseSpec(flip_prob=1.5)
        with pytest.raises(ValueError):
            NoiseSpec(angular_sigma=-1.0)


class TestSceneIO:
    def test_roundtrip_bitexact(self, scene, tmp_path):
        _, _, s = scene
        d = tmp_path / "scene"
        save_scene(d, s)
        back = load_scene(d)
        assert np.array_equal(back.mask, s.mask)
        assert np.array_equal(back.pose.rotation, s.pose.rotation)
        assert np.array_equal(back.pose.translation, s.pose.translation)
        assert back.intr == s.intr
        assert np.array_equal(back.keypoints2, s.keypoints2)
        assert np.array_equal(back.keypoints3, s.keypoints3)
        assert np.array_equal(back.gt_fields, s.gt_fields)

    def test_rewrite_is_byte_identical(self, scene, tmp_path):
        _, _, s = scene
        d1, d2 = tmp_path / "a", tmp_path / "b"
        save_scene(d1, s)
        save_scene(d2, s)
        for name in sorted(p.name for p in d1.iterdir()):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_no_temp_files_left(self, scene, tmp_path):
        _, _, s = scene
        d = tmp_path / "scene"
        save_scene(d, s)
        assert not list(d.glob("*.tmp"))

    def test_corrupt_field_file_rejected(self, scene, tmp_path):
        _, _, s = scene
        d = tmp_path / "scene"
        save_scene(d, s)
        path = d / "field_00.csv"
        text = path.read_text().splitlines()
        text[1] = text[1].rsplit(",", 1)[0] + ",nan"
        path.write_text("\n".join(text) + "\n")
        with pytest.raises(ModelLoadError, match="field_00"):
            load_scene(d)

    def test_pgm_is_plain_p2(self, scene, tmp_path):
        _, _, s = scene
        d = tmp_path / "scene"
        save_scene(d, s)
        lines = (d / "mask.pgm").read_text().splitlines()
        assert lines[0] == "P2"
        assert lines[1] == f"{s.width} {s.height}"
        assert lines[2] == "255"
        vals = set(" ".join(lines[3:]).split())
        assert vals <= {"0", "255"}
