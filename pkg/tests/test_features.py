import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egowm.features import (
    EncoderConfig,
    HeatmapConfig,
    Keypoint,
    NoWrist,
    encode,
    encode_batch,
    filter_keypoints,
    heatmap_argmax,
    make_wrist_heatmap,
    wrist_visible,
)

# Reference-resolution config: cell centres land on exact image coordinates.
REF = HeatmapConfig(image_size=224)


def cell_centre(row, col, cfg=REF):
    k = cfg.image_size / cfg.grid
    return ((col + 0.5) * k, (row + 0.5) * k)


class TestEncoder:
    def test_black_and_white(self):
        assert not encode(np.zeros((64, 64, 3), np.uint8)).any()
        np.testing.assert_allclose(encode(np.full((64, 64, 3), 255, np.uint8)), 1.0, atol=1e-15)

    def test_dimension(self):
        assert encode(np.zeros((64, 64, 3), np.uint8)).shape == (64,)
        assert EncoderConfig().dim == 64

    def test_cell_oracle(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        z = encode(img)
        for r in range(8):
            for c in range(8):
                block = img[8 * r : 8 * r + 8, 8 * c : 8 * c + 8].astype(float)
                luma = (0.299 * block[..., 0] + 0.587 * block[..., 1] + 0.114 * block[..., 2]) / 255
                assert abs(z[8 * r + c] - luma.mean()) < 1e-12

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        imgs = rng.integers(0, 256, size=(5, 64, 64, 3), dtype=np.uint8)
        np.testing.assert_array_equal(encode_batch(imgs), np.stack([encode(i) for i in imgs]))

    def test_shifted_landmark_changes_only_affected_cells(self):
        img = np.full((64, 64, 3), 50, np.uint8)
        a = img.copy()
        a[10:14, 10:14] = 200  # inside cell (1, 1)
        b = img.copy()
        b[10:14, 18:22] = 200  # inside cell (1, 2)
        diff = np.nonzero(encode(a) != encode(b))[0]
        assert sorted(diff.tolist()) == [9, 10]

    def test_wrong_size(self):
        with pytest.raises(ValueError):
            encode(np.zeros((32, 32, 3), np.uint8))
        with pytest.raises(ValueError):
            EncoderConfig(image_size=60, grid=8)

    def test_deterministic(self):
        img = np.random.default_rng(2).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        assert np.array_equal(encode(img), encode(img.copy()))

    @settings(max_examples=100)
    @given(st.integers(0, 63), st.integers(0, 63), st.integers(0, 2), st.integers(0, 255), st.integers(0, 2**31))
    def test_single_pixel_lipschitz(self, y, x, ch, val, seed):
        img = np.random.default_rng(seed).integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        other = img.copy()
        other[y, x, ch] = val
        d = np.abs(encode(img) - encode(other))
        assert np.count_nonzero(d) <= 1
        assert d.max() <= 1.0 / 64 + 1e-15


class TestHeatmap:
    def test_scaled_parameters(self):
        cfg = HeatmapConfig()
        assert cfg.sigma == 3.0 * 28 / 224
        assert cfg.dedup_radius == 5.0 * 28 / 224

    def test_unit_peak_at_cell_centre(self):
        x, y = cell_centre(9, 17)
        h = make_wrist_heatmap([Keypoint(x, y, 1.0)], REF)
        assert h[9, 17] == 1.0
        assert h.max() == 1.0
        assert heatmap_argmax(h) == (9, 17)

    def test_gaussian_oracle(self):
        x, y = 100.0, 61.0
        h = make_wrist_heatmap([Keypoint(x, y, 1.0)], REF)
        s = 3.0 * 28 / 224
        gx, gy = x * 28 / 224 - 0.5, y * 28 / 224 - 0.5
        raw = [[math.exp(-((c - gx) ** 2 + (r - gy) ** 2) / (2 * s * s)) for c in range(28)] for r in range(28)]
        peak = max(max(row) for row in raw)
        for r in range(28):
            for c in range(28):
                assert abs(h[r, c] - raw[r][c] / peak) < 1e-12
        assert h.max() == 1.0

    @settings(max_examples=200)
    @given(st.floats(0, 63.99), st.floats(0, 63.99))
    def test_any_visible_wrist_gives_unit_max(self, x, y):
        assert make_wrist_heatmap([Keypoint(x, y, 1.0)]).max() == 1.0

    def test_colocated_wrists_keep_unit_peak(self):
        x, y = cell_centre(5, 5)
        h = make_wrist_heatmap([Keypoint(x, y, 1.0), Keypoint(x, y, 0.9)], REF)
        assert h.max() == 1.0

    def test_confidence_gate(self):
        x, y = cell_centre(5, 5)
        assert not make_wrist_heatmap([Keypoint(x, y, 0.29)], REF).any()
        assert not make_wrist_heatmap([Keypoint(x, y, 0.3)], REF).any()  # gate is strict
        assert make_wrist_heatmap([Keypoint(x, y, 0.3000001)], REF).max() == 1.0

    def test_dedup_at_five_reference_pixels(self):
        # REF works directly in reference pixels; the radius test is inclusive
        a = Keypoint(80.0, 80.0, 1.0)
        assert len(filter_keypoints([a, Keypoint(85.0, 80.0, 1.0)], REF)) == 1
        assert len(filter_keypoints([a, Keypoint(83.0, 84.0, 1.0)], REF)) == 1
        assert len(filter_keypoints([a, Keypoint(85.01, 80.0, 1.0)], REF)) == 2

    def test_dedup_keeps_first(self):
        a, b = Keypoint(80.0, 80.0, 0.5), Keypoint(82.0, 80.0, 1.0)
        assert filter_keypoints([a, b], REF) == [a]
        assert filter_keypoints([b, a], REF) == [b]

    def test_dedup_chain_merges_into_first_only(self):
        a, b, c = Keypoint(80, 80, 1), Keypoint(84, 80, 1), Keypoint(88, 80, 1)
        # b merges into a; c is 8 px from a, so it survives even though it is near b
        assert filter_keypoints([a, b, c], REF) == [a, c]

    def test_dedup_scales_with_image_size(self):
        cfg = HeatmapConfig()  # 64-px images: 5 reference px = 5 * 64 / 224 image px
        r = 5 * 64 / 224
        assert len(filter_keypoints([Keypoint(30, 30, 1), Keypoint(30 + 0.99 * r, 30, 1)], cfg)) == 1
        assert len(filter_keypoints([Keypoint(30, 30, 1), Keypoint(30 + 1.01 * r, 30, 1)], cfg)) == 2

    def test_max_combine(self):
        a, b = Keypoint(*cell_centre(5, 5), 1.0), Keypoint(*cell_centre(20, 20), 1.0)
        ha = make_wrist_heatmap([a], REF)
        hb = make_wrist_heatmap([b], REF)
        both = make_wrist_heatmap([a, b], REF)
        assert np.array_equal(both, np.maximum(ha, hb))
        assert both[5, 5] == 1.0 and both[20, 20] == 1.0

    def test_empty_is_zero(self):
        assert not make_wrist_heatmap([], REF).any()

    @settings(max_examples=100)
    @given(st.floats(0, 223.9), st.floats(0, 223.9), st.floats(0, 223.9), st.floats(0, 223.9))
    def test_bounded_and_max_dominates(self, x1, y1, x2, y2):
        ha = make_wrist_heatmap([Keypoint(x1, y1, 1.0)], REF)
        hb = make_wrist_heatmap([Keypoint(x2, y2, 1.0)], REF)
        both = make_wrist_heatmap([Keypoint(x1, y1, 1.0), Keypoint(x2, y2, 1.0)], REF)
        assert both.min() >= 0 and both.max() <= 1
        if len(filter_keypoints([Keypoint(x1, y1, 1.0), Keypoint(x2, y2, 1.0)], REF)) == 2:
            assert np.array_equal(both, np.maximum(ha, hb))
        else:
            assert np.array_equal(both, ha)

    def test_radial_symmetry(self):
        x, y = cell_centre(14, 14)
        h = make_wrist_heatmap([Keypoint(x, y, 1.0)], REF)
        for dr, dc in [(1, 0), (2, 1), (3, 2)]:
            ring = [h[14 + a, 14 + b] for a, b in [(dr, dc), (-dr, dc), (dr, -dc), (-dr, -dc), (dc, dr), (-dc, -dr)]]
            assert max(ring) - min(ring) < 1e-9


class TestVisibilityAndArgmax:
    def test_empty_not_visible(self):
        assert not wrist_visible([])

    def test_in_frame_confident(self):
        assert wrist_visible([Keypoint(10.0, 20.0, 1.0)])

    def test_out_of_frame(self):
        assert not wrist_visible([Keypoint(70.0, 20.0, 1.0)])
        assert not wrist_visible([Keypoint(-0.5, 20.0, 1.0)])
        assert not wrist_visible([Keypoint(10.0, 20.0, 0.2)])

    def test_simulator_wrist_behind_camera(self):
        from egowm.kinematics import load_topology, standing_pose
        from egowm.features import keypoints_from_array
        from egowm.simulator import Simulator

        topo = load_topology()
        pose = standing_pose(topo)
        for side in ("left", "right"):
            pose.joint_euler[topo.index(f"{side}_shoulder")] = (0.0, 0.0, 0.0)
        # arms straight back, wrists behind the camera plane
        pose.joint_euler[topo.index("left_shoulder"), 0] = -2.0
        pose.joint_euler[topo.index("right_shoulder"), 0] = -2.0
        kps = Simulator(topo).wrist_keypoints(pose)
        assert np.array_equal(kps[:, 2], [0.0, 0.0]) and np.array_equal(kps[:, :2], -np.ones((2, 2)))  # culled
        assert not wrist_visible(keypoints_from_array(kps))

    def test_all_zero_raises(self):
        with pytest.raises(NoWrist):
            heatmap_argmax(np.zeros((28, 28)))

    def test_tie_goes_to_row_major_first(self):
        h = np.zeros((28, 28))
        h[3, 20] = 1.0
        h[7, 2] = 1.0
        h[3, 21] = 1.0
        assert heatmap_argmax(h) == (3, 20)
