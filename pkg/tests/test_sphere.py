import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panoalign.errors import ParameterError
from panoalign.sphere import (
    EquirectImage,
    coverage_count,
    direction_to_spherical,
    equirect_directions,
    gnomonic_project,
    gnomonic_unproject,
    icosahedron_frames,
    overlap_mask,
    pixel_to_spherical,
    project_to_faces,
    sample_equirect,
    spherical_to_direction,
    spherical_to_pixel,
)

# arccos(sqrt(5)/3), computed from golden-ratio vertex coordinates by a standalone script
ADJACENT_FACE_ANGLE_DEG = 41.81031489577858


@pytest.fixture(scope="module")
def frames():
    return icosahedron_frames(80.0, 32)


class TestIcosahedronFrames:
    def test_twenty_unit_frames(self):
        fr = icosahedron_frames(80, 128)
        assert len(fr) == 20
        for f in fr:
            assert abs(np.linalg.norm(f.center) - 1) < 1e-12
            assert abs(np.linalg.norm(f.up) - 1) < 1e-12
            assert abs(f.center @ f.up) < 1e-12
            assert f.resolution == 128

    def test_centers_sum_to_zero(self, frames):
        total = np.sum([f.center for f in frames], axis=0)
        np.testing.assert_allclose(total, 0.0, atol=1e-12)

    def test_adjacent_angle(self, frames):
        c = np.array([f.center for f in frames])
        cos = c @ c.T
        np.fill_diagonal(cos, -2.0)
        nearest = np.degrees(np.arccos(np.clip(cos.max(axis=1), -1, 1)))
        np.testing.assert_allclose(nearest, ADJACENT_FACE_ANGLE_DEG, atol=1e-9)
        # each face has exactly three edge neighbours
        assert np.all(np.sum(np.abs(np.degrees(np.arccos(np.clip(cos, -1, 1))) - ADJACENT_FACE_ANGLE_DEG) < 1e-6, axis=1) == 3)

    def test_deterministic_order(self):
        a = icosahedron_frames(80, 8)
        b = icosahedron_frames(80, 8)
        for fa, fb in zip(a, b):
            assert np.array_equal(fa.center, fb.center)
            assert np.array_equal(fa.up, fb.up)
        z = [round(f.center[2], 9) for f in a]
        assert z == sorted(z)

    def test_up_is_projected_z(self, frames):
        for f in frames:
            ref = np.array([0.0, 0.0, 1.0]) - f.center[2] * f.center
            np.testing.assert_allclose(f.up, ref / np.linalg.norm(ref), atol=1e-12)

    @pytest.mark.parametrize("fov", [0.0, 180.0, -5.0, 200.0])
    def test_fov_out_of_range(self, fov):
        with pytest.raises(ParameterError):
            icosahedron_frames(fov, 16)

    def test_resolution_too_small(self):
        with pytest.raises(ParameterError):
            icosahedron_frames(80, 1)

    def test_focal(self, frames):
        f = frames[0]
        assert f.focal == pytest.approx(32 / (2 * math.tan(math.radians(40))))


class TestGnomonic:
    def test_center_maps_to_origin(self, frames):
        for f in frames:
            x, y = gnomonic_project(f.center, f)
            assert abs(x) < 1e-12 and abs(y) < 1e-12

    def test_half_fov_along_x(self, frames):
        f = frames[3]
        a = math.radians(f.fov_deg / 2)
        d = math.cos(a) * f.center + math.sin(a) * f.right
        x, y = gnomonic_project(d, f)
        assert x == pytest.approx(math.tan(a), abs=1e-12)
        assert abs(y) < 1e-12

    def test_behind(self, frames):
        assert gnomonic_project(-frames[0].center, frames[0]) is None

    def test_non_unit_rejected(self, frames):
        with pytest.raises(ParameterError):
            gnomonic_project(2 * frames[0].center, frames[0])

    def test_unproject_origin(self, frames):
        np.testing.assert_allclose(gnomonic_unproject(0.0, 0.0, frames[5]), frames[5].center, atol=1e-15)

    def test_roundtrip_random(self, frames):
        rng = np.random.default_rng(0)
        f = frames[7]
        t = f.half_extent
        xy = rng.uniform(-t, t, size=(10_000, 2))
        d = gnomonic_unproject(xy[:, 0], xy[:, 1], f)
        x, y, front = f.project(d)
        assert front.all()
        d2 = gnomonic_unproject(x, y, f)
        # chord length, since arccos is ill-conditioned near 1
        assert np.linalg.norm(d - d2, axis=1).max() < 1e-9
        np.testing.assert_allclose(np.stack([x, y], 1), xy, atol=1e-12)

    def test_corners_within_diagonal_fov(self, frames):
        f = frames[0]
        r = f.resolution
        corners = [(0, 0), (0, r - 1), (r - 1, 0), (r - 1, r - 1)]
        bound = math.radians(f.fov_deg) * math.sqrt(2) / 2
        for row, col in corners:
            d = gnomonic_unproject(*f.pixel_to_plane(row, col), f)
            # brute-force corner geometry: angle of the same tangent point computed directly
            x, y = f.pixel_to_plane(row, col)
            direct = math.atan(math.hypot(x, y))
            ang = math.acos(min(1.0, float(d @ f.center)))
            assert ang == pytest.approx(direct, abs=1e-12)
            assert ang < bound + 1e-12

    def test_pixel_plane_inverse(self, frames):
        f = frames[2]
        rows, cols = f.plane_to_pixel(*f.pixel_to_plane(np.arange(32), np.arange(32)[::-1]))
        np.testing.assert_allclose(rows, np.arange(32), atol=1e-12)
        np.testing.assert_allclose(cols, np.arange(32)[::-1], atol=1e-12)


class TestEquirectMapping:
    def test_pixel_centre_bijection(self):
        w, h = 64, 32
        u, v = np.meshgrid(np.arange(w), np.arange(h))
        theta, phi = pixel_to_spherical(u, v, w, h)
        d = spherical_to_direction(theta, phi)
        u2, v2 = spherical_to_pixel(*direction_to_spherical(d), w, h)
        np.testing.assert_allclose(u2, u, atol=1e-9)
        np.testing.assert_allclose(v2, v, atol=1e-9)

    def test_width_must_be_twice_height(self):
        with pytest.raises(ParameterError):
            EquirectImage(np.zeros((10, 30)))

    def test_constant_everywhere(self):
        img = EquirectImage(np.full((16, 32), 3.25))
        d = np.random.default_rng(1).normal(size=(500, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        vals, ok = sample_equirect(img, d)
        assert ok.all()
        np.testing.assert_allclose(vals, 3.25, atol=1e-14)

    def test_exact_on_pixel_centres(self):
        data = np.random.default_rng(2).random((16, 32, 3))
        img = EquirectImage(data)
        vals, ok = sample_equirect(img, equirect_directions(32, 16))
        np.testing.assert_allclose(vals, data, atol=1e-12)

    def test_seam_blend(self):
        # columns 0 and W-1 hold a and b; theta = 0 sits half a pixel from each centre
        h, w = 8, 16
        data = np.zeros((h, w))
        data[:, 0], data[:, -1] = 2.0, 6.0
        img = EquirectImage(data)
        _, phi = pixel_to_spherical(0, 3, w, h)
        vals, _ = sample_equirect(img, spherical_to_direction(0.0, phi))
        assert vals == pytest.approx(4.0, abs=1e-12)
        # a quarter pixel into column 0: weights 0.25 (b) / 0.75 (a)
        vals, _ = sample_equirect(img, spherical_to_direction(0.25 * 2 * np.pi / w, phi))
        assert vals == pytest.approx(0.25 * 6 + 0.75 * 2, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-1.4, 1.4))
    def test_seam_continuity(self, seed, phi):
        data = np.random.default_rng(seed).random((8, 16))
        img = EquirectImage(data)
        left, _ = sample_equirect(img, spherical_to_direction(1e-13, phi))
        right, _ = sample_equirect(img, spherical_to_direction(2 * np.pi - 1e-13, phi))
        assert abs(left - right) < 1e-11

    def test_invalid_renormalised(self):
        data = np.arange(32.0).reshape(4, 8)
        valid = np.ones((4, 8), dtype=bool)
        valid[1, 2] = False
        img = EquirectImage(data, valid)
        # midway between pixel centres (1,2),(1,3),(2,2),(2,3)
        theta, phi = pixel_to_spherical(2.5, 1.5, 8, 4)
        vals, ok = sample_equirect(img, spherical_to_direction(theta, phi))
        assert ok
        assert vals == pytest.approx((data[1, 3] + data[2, 2] + data[2, 3]) / 3, abs=1e-12)

    def test_all_invalid_stencil(self):
        img = EquirectImage(np.ones((4, 8)), np.zeros((4, 8), dtype=bool))
        vals, ok = sample_equirect(img, np.array([1.0, 0.0, 0.0]))
        assert not ok and np.isnan(vals)


class TestProjection:
    def test_constant_views(self, frames):
        views = project_to_faces(EquirectImage(np.full((32, 64, 3), 0.4)), frames)
        assert len(views) == 20
        for v in views:
            assert v.image.shape == (32, 32, 3)
            np.testing.assert_allclose(v.image, 0.4, atol=1e-14)

    def test_empty_frames(self):
        with pytest.raises(ParameterError):
            project_to_faces(EquirectImage(np.zeros((4, 8))), [])


class TestOverlap:
    def test_antipodal_empty(self, frames):
        a = frames[0]
        far = min(frames, key=lambda f: f.center @ a.center)
        assert len(overlap_mask(a, far)) == 0

    def test_adjacent_nonempty_matches_brute_force(self, frames):
        a = frames[0]
        b = max(frames[1:], key=lambda f: f.center @ a.center)
        m = overlap_mask(a, b)
        assert len(m) > 0
        t = math.tan(math.radians(b.fov_deg / 2))
        expected = []
        for row in range(a.resolution):
            for col in range(a.resolution):
                x, y = a.pixel_to_plane(row, col)
                d = a.center + x * a.right + y * a.up
                d = d / np.linalg.norm(d)
                z = d @ b.center
                if z > 0 and abs(d @ b.right / z) < t and abs(d @ b.up / z) < t:
                    expected.append(row * a.resolution + col)
        assert m.pixels.tolist() == expected

    def test_members_inside_b(self, frames):
        a, b = frames[4], frames[5]
        m = overlap_mask(a, b)
        d = a.pixel_directions.reshape(-1, 3)[m.pixels]
        assert b.inside_fov(d).all()

    def test_self_rejected(self, frames):
        with pytest.raises(ParameterError):
            overlap_mask(frames[0], frames[0])


def test_coverage_at_80_degrees():
    frames = icosahedron_frames(80.0, 16)
    count = coverage_count(frames, equirect_directions(1024, 512))
    assert count.min() >= 1


def test_coverage_fails_when_too_narrow():
    frames = icosahedron_frames(50.0, 16)
    assert coverage_count(frames, equirect_directions(256, 128)).min() == 0
