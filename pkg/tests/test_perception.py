import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import largest_component
from robust_lfd.perception import (
    DegenerateShapeError, HeightImage, NoObjectError, PerceptionError, extract_state,
    grip_stop, height_from_depth, read_image, segment, significant_pressure, write_image,
)
from robust_lfd.synthlab import ContactModel, SceneSpec, render_scene

tactile = arrays(float, 9, elements=st.floats(0, 1e3))


def rectangle(shape=(80, 100), size=(40, 20), height=50.0, angle=0.0, center=(49.5, 39.5)):
    """Height image of a rotated rectangle sampled at pixel centres (pitch 1)."""
    rows, cols = np.mgrid[: shape[0], : shape[1]]
    dx, dy = cols - center[0], rows - center[1]
    c, s = math.cos(angle), math.sin(angle)
    u, v = dx * c + dy * s, -dx * s + dy * c
    inside = (np.abs(u) < size[0] / 2) & (np.abs(v) < size[1] / 2)
    return HeightImage(np.where(inside, height, 0.0))


class TestHeight:
    def test_equal_depth(self):
        d = np.full((4, 5), 700.0)
        assert np.all(height_from_depth(d, d).data == 0)

    def test_single_pixel(self):
        ref = np.full((4, 5), 700.0)
        d = ref.copy()
        d[2, 3] -= 30.0
        h = height_from_depth(d, ref).data
        assert h[2, 3] == 30.0 and h.sum() == 30.0

    def test_clips_below_table(self):
        h = height_from_depth(np.array([[710.0]]), np.array([[700.0]]))
        assert h.data[0, 0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(PerceptionError):
            height_from_depth(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_rendered_round_trip(self):
        sc = render_scene(SceneSpec(center=(10.0, -5.0), yaw=0.3))
        h = height_from_depth(sc.depth, sc.reference)
        np.testing.assert_allclose(h.data, sc.height.data, atol=1e-9)

    def test_invalid_image(self):
        with pytest.raises(PerceptionError):
            HeightImage(np.array([[np.nan]]))
        with pytest.raises(PerceptionError):
            HeightImage(np.zeros((2, 2)), pitch=0.0)


class TestSegment:
    def test_no_object(self):
        with pytest.raises(NoObjectError):
            segment(HeightImage(np.zeros((5, 5))))

    def test_one_blob(self):
        h = np.zeros((10, 10))
        h[2:5, 3:8] = 20.0
        np.testing.assert_array_equal(segment(HeightImage(h)).data, h > 0)

    def test_two_blobs(self):
        h = np.zeros((20, 20))
        h[1:4, 1:4] = 30.0
        h[10:16, 8:15] = 30.0
        h[5, 18] = 30.0
        m = segment(HeightImage(h)).data
        np.testing.assert_array_equal(m, largest_component(h > 10.0))
        assert m.sum() == 42

    def test_diagonal_not_connected(self):
        # 4-connectivity: diagonal neighbours form separate components
        h = np.zeros((6, 6))
        h[1, 1] = h[2, 2] = h[3, 3] = 15.0
        h[4:6, 0] = 15.0
        assert segment(HeightImage(h)).data.sum() == 2

    def test_bad_threshold(self):
        with pytest.raises(PerceptionError):
            segment(HeightImage(np.ones((3, 3))), threshold=0.0)

    def test_noiseless_mask_exact(self):
        sc = render_scene(SceneSpec(yaw=0.4))
        h = height_from_depth(sc.depth, sc.reference, sc.height.pitch, sc.height.origin)
        m = segment(h).data
        np.testing.assert_array_equal(m, largest_component(sc.height.data > 10.0))

    def test_noisy_mask_close(self):
        spec = SceneSpec(yaw=-0.2)
        clean = render_scene(spec)
        noisy = render_scene(spec, noise=1.0, seed=4)
        a = segment(height_from_depth(clean.depth, clean.reference)).data
        b = segment(height_from_depth(noisy.depth, noisy.reference)).data
        assert np.mean(a != b) <= 0.01


class TestExtract:
    def test_rectangle(self):
        s = extract_state(segment(rectangle()), rectangle())
        assert (s.cos_theta, s.sin_theta) == (1.0, 0.0)
        assert s.l_a == 40 and s.w_a == 20
        assert s.h_a == s.h_b == s.h_c == 50
        assert s.w_b == s.w_c == 20
        assert (s.x_a, s.y_a) == (49.5, 39.5)

    def test_rotated_rectangle(self):
        h = rectangle(shape=(120, 120), angle=math.radians(30), center=(60.0, 60.0))
        s = extract_state(segment(h), h)
        theta = math.degrees(math.atan2(s.sin_theta, s.cos_theta))
        assert abs(theta - 30.0) <= 1.0
        assert abs(s.l_a - 40) <= 1.0 and abs(s.w_a - 20) <= 1.0

    def test_vertical_tie(self):
        h = rectangle(shape=(80, 80), size=(40, 20), angle=math.pi / 2, center=(39.5, 39.5))
        s = extract_state(segment(h), h)
        assert (s.cos_theta, s.sin_theta) == (0.0, 1.0)

    def test_single_pixel(self):
        h = np.zeros((5, 5))
        h[2, 2] = 20.0
        with pytest.raises(DegenerateShapeError):
            extract_state(segment(HeightImage(h)), HeightImage(h))

    @pytest.mark.parametrize("spec", [
        SceneSpec(asymmetry=0.0),
        SceneSpec(center=(30.0, -20.0), yaw=0.5, asymmetry=0.2),
        SceneSpec(center=(-40.0, 10.0), yaw=2.5, asymmetry=-0.15, half_lengths=(80.0, 45.0)),
    ])
    def test_scene_ground_truth(self, spec):
        sc = render_scene(spec, pitch=1.0, shape=(500, 500))
        s = extract_state(segment(sc.height), sc.height).as_array()
        t = sc.truth.as_array()
        px = sc.height.pitch
        # positions, extents and heights within 1 px / 1 mm; direction within 1 degree
        for k in (0, 1, 4, 5, 9, 11):
            assert abs(s[k] - t[k]) <= px + 1e-9, k
        for k in (2, 3, 8, 10):
            assert abs(s[k] - t[k]) <= 1.0, k
        assert math.degrees(math.acos(min(1.0, s[6] * t[6] + s[7] * t[7]))) <= 1.0

    @given(st.integers(-10, 10), st.integers(-10, 10))
    def test_translation(self, dx, dy):
        h = rectangle(shape=(100, 120), angle=0.4, center=(60.0, 50.0))
        s0 = extract_state(segment(h), h).as_array()
        g = HeightImage(np.roll(np.roll(h.data, dy, axis=0), dx, axis=1))
        s1 = extract_state(segment(g), g).as_array()
        assert s1[0] == pytest.approx(s0[0] + dx, abs=1e-9)
        assert s1[1] == pytest.approx(s0[1] + dy, abs=1e-9)
        np.testing.assert_allclose(s1[2:], s0[2:], atol=1e-9)

    @pytest.mark.parametrize("phi", [0.3, 1.0, 1.9, -0.8])
    def test_rotation(self, phi):
        base = SceneSpec(yaw=0.1)
        s0 = extract_state(segment(render_scene(base).height), render_scene(base).height)
        spec = SceneSpec(yaw=0.1 + phi)
        h = render_scene(spec).height
        s1 = extract_state(segment(h), h)
        diff = math.atan2(s1.sin_theta, s1.cos_theta) - math.atan2(s0.sin_theta, s0.cos_theta) - phi
        diff = math.remainder(diff, math.pi)
        assert abs(math.degrees(diff)) <= 1.0


class TestPressure:
    def test_uniform(self):
        assert significant_pressure(np.full(9, 4.5)) == 4.5
        assert significant_pressure(np.zeros(9)) == 0.0

    def test_single_max(self):
        assert significant_pressure([10, 0, 0, 0, 0, 0, 0, 0, 0]) == 10.0

    def test_strict_threshold(self):
        assert significant_pressure([10, 8, 7, 6, 0, 0, 0, 0, 0]) == 9.0

    def test_arity(self):
        with pytest.raises(ValueError):
            significant_pressure(np.ones(8))

    @given(tactile, st.floats(1e-3, 1e3))
    def test_scale(self, t, c):
        assert significant_pressure(c * t) == pytest.approx(c * significant_pressure(t), rel=1e-9, abs=1e-12)

    @given(tactile, st.randoms(use_true_random=False))
    def test_permutation(self, t, r):
        p = list(t)
        r.shuffle(p)
        assert significant_pressure(p) == pytest.approx(significant_pressure(t), rel=1e-12)


class TestGripStop:
    def test_zero_targets(self):
        r = grip_stop((0, 0, 0), [np.zeros((3, 9))])
        assert r.index == 0 and not r.exhausted

    def test_ramp(self):
        frames = []
        for t in range(10):
            f = np.zeros((3, 9))
            f[1] = t
            frames.append(f)
        r = grip_stop((100, 5, 100), frames)
        assert r.index == 5 and r.achieved[1] == 5

    def test_exhausted(self):
        r = grip_stop((1, 1, 1), [np.zeros((3, 9))] * 3)
        assert r.exhausted and r.index is None

    def test_contact_model(self):
        model = ContactModel()
        for targets in [(24, 28, 28), (5, 40, 30), (0.5, 0.5, 100), (60, 10, 60)]:
            r = grip_stop(targets, model.trace(200))
            assert r.index == model.stop_step(targets)

    @given(st.lists(st.floats(0, 80), min_size=3, max_size=3), st.integers(0, 2), st.floats(0, 30))
    def test_monotone(self, targets, k, bump):
        model = ContactModel()
        higher = list(targets)
        higher[k] += bump
        a = grip_stop(targets, model.trace(300)).index
        b = grip_stop(higher, model.trace(300)).index
        assert b >= a


def test_image_round_trip(tmp_path):
    data = np.arange(12.0).reshape(3, 4) / 7
    write_image(tmp_path / "h.txt", data, pitch=2.0, origin=(1, 2, 3))
    header, back = read_image(tmp_path / "h.txt")
    np.testing.assert_array_equal(back, data)
    assert header["pitch"] == 2.0 and header["origin"] == [1.0, 2.0, 3.0]
    write_image(tmp_path / "m.txt", data > 0.5, kind="mask")
    assert read_image(tmp_path / "m.txt")[1].dtype == bool
