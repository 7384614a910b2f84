import numpy as np
import pytest
from oracles import scan_encoded

from mtdepth.depthspace import (
    ClipPlanes,
    DepthBounds,
    DepthMap,
    IntervalScheme,
    decode_depth,
    dequantize,
    encode_clamped,
    encode_depth,
    label_map,
    quantize,
)

KITTI_BOUNDS = DepthBounds(2.0, 125.0)
# ln(9)/ln(124) computed with 40-digit mpmath
ENCODE_10M = 0.4558290936808431
# decode of the first bin midpoint for n_cls=32, planes (2.5, 80), 40-digit mpmath
DEQUANT_BIN0_N32 = 2.595843343468873


class TestEncodeDecode:
    def test_lower_boundary(self):
        assert encode_depth(2.0, KITTI_BOUNDS) == 0.0

    def test_upper_boundary(self):
        assert encode_depth(125.0, KITTI_BOUNDS) == pytest.approx(1.0, abs=1e-15)

    def test_ten_meters_against_high_precision_oracle(self):
        assert encode_depth(10.0, KITTI_BOUNDS) == pytest.approx(ENCODE_10M, abs=1e-15)

    def test_decode_boundaries(self):
        assert decode_depth(0.0, KITTI_BOUNDS) == pytest.approx(2.0, abs=1e-12)
        assert decode_depth(1.0, KITTI_BOUNDS) == pytest.approx(125.0, rel=1e-12)

    def test_decode_oracle_roundtrip(self):
        assert decode_depth(0.455829, KITTI_BOUNDS) == pytest.approx(10.0, abs=1e-3)

    def test_roundtrip_identity_over_range(self):
        rng = np.random.default_rng(7)
        d = rng.uniform(2.0, 125.0, size=10_000)
        back = decode_depth(encode_depth(d, KITTI_BOUNDS), KITTI_BOUNDS)
        assert np.max(np.abs(back - d)) < 1e-9

    def test_encode_strictly_monotone(self):
        d = np.linspace(2.0, 125.0, 5000)
        e = encode_depth(d, KITTI_BOUNDS)
        assert np.all(np.diff(e) > 0)
        assert e[0] == 0.0 and e[-1] == pytest.approx(1.0, abs=1e-15)

    def test_above_dmax_permitted(self):
        assert encode_depth(200.0, KITTI_BOUNDS) > 1.0

    def test_below_dmin_rejected(self):
        with pytest.raises(ValueError):
            encode_depth(1.5, KITTI_BOUNDS)

    def test_negative_log_depth_rejected(self):
        with pytest.raises(ValueError):
            decode_depth(-0.1, KITTI_BOUNDS)

    def test_degenerate_bounds_rejected(self):
        with pytest.raises(ValueError):
            DepthBounds(5.0, 5.0)
        with pytest.raises(ValueError):
            DepthBounds(-1.0, 5.0)

    def test_encode_clamped_handles_both_sides(self):
        assert encode_clamped(0.5, KITTI_BOUNDS) == 0.0
        assert encode_clamped(500.0, KITTI_BOUNDS) == 1.0
        assert encode_clamped(10.0, KITTI_BOUNDS) == encode_depth(10.0, KITTI_BOUNDS)


class TestIntervalScheme:
    def make(self, n_cls):
        return IntervalScheme(n_cls=n_cls, planes=ClipPlanes(2.5, 80.0), bounds=KITTI_BOUNDS)

    def test_edges_end_at_clip_planes(self):
        s = self.make(8)
        assert s.edges[0] == pytest.approx(encode_depth(2.5, KITTI_BOUNDS), abs=1e-15)
        assert s.edges[-1] == pytest.approx(encode_depth(80.0, KITTI_BOUNDS), abs=1e-15)

    @pytest.mark.parametrize("n_cls", [1, 2, 4, 32, 64])
    def test_edge_uniformity(self, n_cls):
        edges = self.make(n_cls).edges
        assert len(edges) == n_cls + 1
        delta = (edges[-1] - edges[0]) / n_cls
        assert np.max(np.abs(np.diff(edges) - delta)) < 1e-12

    def test_planes_must_be_inside_bounds(self):
        with pytest.raises(ValueError):
            IntervalScheme(4, planes=ClipPlanes(1.0, 80.0), bounds=KITTI_BOUNDS)
        with pytest.raises(ValueError):
            IntervalScheme(4, planes=ClipPlanes(2.5, 125.0), bounds=KITTI_BOUNDS)


class TestQuantize:
    def make(self, n_cls):
        return IntervalScheme(n_cls=n_cls, planes=ClipPlanes(2.5, 80.0), bounds=KITTI_BOUNDS)

    def test_lower_clip_plane_is_class_zero(self):
        assert quantize(2.5, self.make(8)) == 0

    def test_upper_clip_plane_clamps_to_last(self):
        assert quantize(80.0, self.make(8)) == 7

    def test_outside_planes_clamp(self):
        s = self.make(8)
        assert quantize(0.3, s) == 0
        assert quantize(124.0, s) == 7

    @pytest.mark.parametrize("n_cls", [2, 4, 32, 64])
    def test_matches_linear_scan_oracle(self, n_cls):
        s = self.make(n_cls)
        rng = np.random.default_rng(n_cls)
        depths = rng.uniform(0.5, 124.0, size=10_000)
        got = quantize(depths, s)
        edges = s.edges
        for d, g in zip(depths, got):
            e = np.log(np.clip(d, 2.5, 80.0) - 2.0 + 1.0) / np.log(124.0)
            assert g == scan_encoded(e, edges)

    def test_monotone_and_all_classes_reachable(self):
        s = self.make(16)
        d = np.linspace(2.5, 80.0, 20_000)
        q = quantize(d, s)
        assert np.all(np.diff(q) >= 0)
        assert set(np.unique(q)) == set(range(16))

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            quantize(0.0, self.make(4))


class TestDequantize:
    def make(self, n_cls):
        return IntervalScheme(n_cls=n_cls, planes=ClipPlanes(2.5, 80.0), bounds=KITTI_BOUNDS)

    def test_single_bin_midpoint(self):
        s = self.make(1)
        mid = (encode_depth(2.5, KITTI_BOUNDS) + encode_depth(80.0, KITTI_BOUNDS)) / 2
        assert dequantize(0, s) == pytest.approx(decode_depth(mid, KITTI_BOUNDS), rel=1e-14)

    @pytest.mark.parametrize("n_cls", [1, 2, 4, 32, 64])
    def test_quantize_of_dequantize_is_identity(self, n_cls):
        s = self.make(n_cls)
        for k in range(n_cls):
            assert quantize(dequantize(k, s), s) == k

    def test_bin0_of_32_against_high_precision_oracle(self):
        assert dequantize(0, self.make(32)) == pytest.approx(DEQUANT_BIN0_N32, abs=1e-12)

    def test_out_of_range_label_rejected(self):
        s = self.make(4)
        with pytest.raises(ValueError):
            dequantize(4, s)
        with pytest.raises(ValueError):
            dequantize(-1, s)


class TestDepthMapAndLabels:
    def make_scheme(self):
        return IntervalScheme(n_cls=8, planes=ClipPlanes(2.5, 80.0), bounds=KITTI_BOUNDS)

    def test_all_invalid_stays_all_invalid(self):
        gt = DepthMap(np.zeros((4, 4)), np.zeros((4, 4), dtype=bool))
        lab = label_map(gt, self.make_scheme())
        assert not lab.valid.any()

    def test_constant_dcmin_maps_to_class_zero(self):
        gt = DepthMap(np.full((3, 3), 2.5), np.ones((3, 3), dtype=bool))
        lab = label_map(gt, self.make_scheme())
        assert np.all(lab.label == 0)
        assert lab.valid.all()

    def test_pixelwise_equals_scalar_quantize(self):
        rng = np.random.default_rng(3)
        scheme = self.make_scheme()
        depth = rng.uniform(2.2, 110.0, size=(6, 7))
        valid = rng.random((6, 7)) < 0.4
        gt = DepthMap(np.where(valid, depth, 0.0), valid)
        lab = label_map(gt, scheme)
        for i in range(6):
            for j in range(7):
                if valid[i, j]:
                    assert lab.label[i, j] == quantize(depth[i, j], scheme)
        assert not lab.valid[~valid].any()

    def test_invalid_pixels_carry_zero_sentinel(self):
        gt = DepthMap(np.full((2, 2), 5.0), np.array([[True, False], [False, True]]))
        assert gt.depth[0, 1] == 0.0 and gt.depth[1, 0] == 0.0

    def test_valid_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            DepthMap(np.zeros((2, 2)), np.ones((2, 2), dtype=bool))
