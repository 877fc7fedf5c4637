import numpy as np
import pytest

from helpers import cube_cloud
from oracles import oracle_fps_verify
from proxyvote.errors import InsufficientSupportError, ModelLoadError
from proxyvote.model_tools import (ModelCloud, farthest_point_sampling,
                                   load_model, model_diameter)

PLY_OK = """ply
format ascii 1.0
element vertex 4
property float x
property float y
property float z
end_header
0 0 0
1 0 0
0 1 0
0 0 1
"""

PLY_EXTRA_PROPS = """ply
format ascii 1.0
comment made by hand
element vertex 4
property float nx
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
9 0 0 0
9 2 0 0
9 0 2 0
9 0 0 2
3 0 1 2
"""

OBJ_OK = """# comment
v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
v 0 0 1
f 1 2 3
"""


class TestLoadModel:
    def test_ply(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text(PLY_OK)
        cloud = load_model(p)
        assert cloud.points.shape == (4, 3)
        assert np.allclose(cloud.points[3], [0, 0, 1])
        assert cloud.name == "m"
        assert not cloud.symmetric

    def test_ply_extra_properties_and_faces(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text(PLY_EXTRA_PROPS)
        cloud = load_model(p, symmetric=True)
        assert cloud.points.shape == (4, 3)
        assert np.allclose(cloud.points[1], [2, 0, 0])
        assert cloud.symmetric

    def test_obj(self, tmp_path):
        p = tmp_path / "m.obj"
        p.write_text(OBJ_OK)
        cloud = load_model(p)
        assert cloud.points.shape == (4, 3)
        assert np.allclose(cloud.points[3], [0, 0, 1])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelLoadError):
            load_model(tmp_path / "nope.ply")

    def test_binary_ply_rejected(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_bytes(b"ply\nformat binary_little_endian 1.0\n\xff\x00")
        with pytest.raises(ModelLoadError):
            load_model(p)

    def test_bad_vertex_line_reports_line_number(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text(PLY_OK.replace("0 0 1", "0 0 oops"))
        with pytest.raises(ModelLoadError, match="line 11"):
            load_model(p)

    def test_missing_axis_property(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text(PLY_OK.replace("property float z", "property float w"))
        with pytest.raises(ModelLoadError, match="'z'"):
            load_model(p)

    def test_truncated_data(self, tmp_path):
        p = tmp_path / "m.ply"
        p.write_text("\n".join(PLY_OK.splitlines()[:-1]) + "\n")
        with pytest.raises(ModelLoadError):
            load_model(p)


class TestModelCloud:
    def test_too_few_points(self):
        with pytest.raises(ModelLoadError):
            ModelCloud(points=np.zeros((3, 3)))

    def test_non_finite(self):
        pts = np.zeros((5, 3))
        pts[2, 1] = np.nan
        with pytest.raises(ModelLoadError):
            ModelCloud(points=pts)


class TestFarthestPointSampling:
    def test_greedy_invariant(self):
        cloud = cube_cloud(n_extra=200, seed=0)
        ks = farthest_point_sampling(cloud, 8)
        assert oracle_fps_verify(cloud.points, ks.indices)

    def test_default_start_is_farthest_from_centroid(self):
        cloud = cube_cloud(n_extra=100, seed=1)
        ks = farthest_point_sampling(cloud, 4)
        ctr = cloud.points.mean(axis=0)
        d = np.linalg.norm(cloud.points - ctr, axis=1)
        assert ks.indices[0] == np.argmax(d)

    def test_explicit_start(self):
        cloud = cube_cloud(n_extra=50, seed=2)
        ks = farthest_point_sampling(cloud, 5, start=3)
        assert ks.indices[0] == 3

    def test_opposite_corner_second_and_spread(self):
        # corners sit first in the cloud; the second pick is the corner
        # opposite the start, and the selection stays well spread out
        cloud = cube_cloud(n_extra=600, seed=3, side=0.1)
        ks = farthest_point_sampling(cloud, 8)
        assert ks.indices[0] < 8 and ks.indices[1] < 8
        assert np.linalg.norm(ks.points3[1] - ks.points3[0]) == pytest.approx(
            0.1 * np.sqrt(3.0))
        d = np.linalg.norm(ks.points3[:, None] - ks.points3[None, :], axis=-1)
        np.fill_diagonal(d, np.inf)
        assert d.min() > 0.05

    def test_n_equals_cloud_size(self):
        cloud = cube_cloud(n_extra=2, seed=4)
        ks = farthest_point_sampling(cloud, len(cloud.points))
        assert sorted(ks.indices.tolist()) == list(range(len(cloud.points)))

    def test_n_too_large(self):
        cloud = cube_cloud(n_extra=0)
        with pytest.raises(InsufficientSupportError):
            farthest_point_sampling(cloud, 9)

    def test_deterministic(self):
        cloud = cube_cloud(n_extra=300, seed=5)
        a = farthest_point_sampling(cloud, 10)
        b = farthest_point_sampling(cloud, 10)
        assert np.array_equal(a.indices, b.indices)


class TestModelDiameter:
    def test_two_point_array(self):
        assert model_diameter(np.array([[0, 0, 0], [3, 4, 0.0]])) == pytest.approx(5.0)

    def test_unit_cube_cloud(self):
        cloud = cube_cloud(n_extra=100, seed=6, side=1.0)
        assert model_diameter(cloud) == pytest.approx(np.sqrt(3.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(0, 1, (60, 3))
        want = max(np.linalg.norm(a - b) for a in pts for b in pts)
        assert model_diameter(pts) == pytest.approx(want)

    def test_subsample_deterministic(self):
        rng = np.random.default_rng(8)
        pts = rng.normal(0, 1, (6000, 3))
        assert model_diameter(pts) == model_diameter(pts)

    def test_single_point_raises(self):
        with pytest.raises(InsufficientSupportError):
            model_diameter(np.zeros((1, 3)))
