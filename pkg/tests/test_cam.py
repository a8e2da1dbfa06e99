"""Intensity map identities: full-grid sums recover logits and pointwise-MI
differences; region sums match a naive double-loop oracle exactly."""

import numpy as np
import pytest

from infocam.cam import (IntensityMap, cam_map, infocam_map,
                         infocam_plus_map, infocam_plus_region_map,
                         point_map, region_sum, write_pgm, write_raw)
from infocam.miest import pmi
from infocam.nn.network import build_network, forward


def naive_region_sum(grid, size):
    """Per-cell double loop over the padded window, row-major offsets."""
    h, w = grid.shape
    lo = (size - 1) // 2
    out = np.zeros_like(grid)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for dr in range(size):
                for dc in range(size):
                    r = i - lo + dr
                    c = j - lo + dc
                    if 0 <= r < h and 0 <= c < w:
                        acc += grid[r, c]
            out[i, j] = acc
    return out


def random_gap_net(seed, k=3, m=4, hw=(5, 6)):
    net = build_network(f"conv:{k}x3,relu,gap,dense:{m}",
                        input_shape=(1, hw[0] + 2, hw[1] + 2), seed=seed)
    x = np.random.default_rng(seed + 1000).normal(size=(1,) + tuple(
        d + 2 for d in hw))
    logits, fmaps = forward(net, x)
    return net, x, logits, fmaps


class TestCamMap:
    def test_constant_map_cells_and_sum(self):
        fm = np.full((1, 3, 4), 2.0)
        weights = np.array([[1.5]])
        imap = cam_map(fm, weights, 0)
        np.testing.assert_allclose(imap.grid, np.full((3, 4), 1.5 * 2 / 12),
                                   atol=1e-15)
        assert imap.grid.sum() == pytest.approx(3.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_grid_sum_equals_logit(self, seed):
        net, _, logits, fmaps = random_gap_net(seed)
        for y in range(net.num_classes):
            imap = cam_map(fmaps, net.final_weights, y)
            assert imap.grid.sum() == pytest.approx(logits[y], abs=1e-10)

    def test_zero_weights_zero_map(self):
        fm = np.random.default_rng(0).normal(size=(3, 4, 4))
        imap = cam_map(fm, np.zeros((2, 3)), 1)
        np.testing.assert_array_equal(imap.grid, np.zeros((4, 4)))

    def test_linearity(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(3, 2))
        fm1 = rng.normal(size=(2, 4, 4))
        fm2 = rng.normal(size=(2, 4, 4))
        combined = cam_map(fm1 + fm2, w, 0).grid
        np.testing.assert_allclose(
            combined, cam_map(fm1, w, 0).grid + cam_map(fm2, w, 0).grid,
            atol=1e-10)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="label"):
            cam_map(np.zeros((1, 2, 2)), np.zeros((2, 1)), 2)


class TestInfoCam:
    def test_two_class_reduction(self):
        rng = np.random.default_rng(1)
        fm = rng.normal(size=(1, 3, 3))
        w = rng.normal(size=(2, 1))
        imap = infocam_map(fm, w, 0)
        expected = (w[0, 0] - w[1, 0]) * fm[0] / 9
        np.testing.assert_allclose(imap.grid, expected, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_grid_sum_equals_pmi_difference(self, seed):
        net, _, logits, fmaps = random_gap_net(seed)
        scores = pmi(logits)
        m = net.num_classes
        for y in range(m):
            others = (scores.sum() - scores[y]) / (m - 1)
            imap = infocam_map(fmaps, net.final_weights, y)
            assert imap.grid.sum() == pytest.approx(scores[y] - others,
                                                    abs=1e-10)

    def test_balanced_weights_give_zero_map(self):
        # class 0 weight equals the mean of the others -> flat zero contrast
        fm = np.random.default_rng(2).normal(size=(1, 3, 3))
        w = np.array([[2.0], [1.0], [3.0]])
        imap = infocam_map(fm, w, 0)
        np.testing.assert_allclose(imap.grid, np.zeros((3, 3)), atol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            infocam_map(np.zeros((1, 2, 2)), np.zeros((1, 1)), 0)


class TestInfoCamPlus:
    def test_two_class_equals_infocam(self):
        rng = np.random.default_rng(3)
        fm = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=(2, 2))
        for y in range(2):
            np.testing.assert_allclose(
                infocam_plus_map(fm, w, y).grid,
                infocam_map(fm, w, y).grid, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_contrast_class_is_argmin_logit(self, seed):
        net, _, logits, fmaps = random_gap_net(seed)
        y = int(np.argmax(logits))
        imap = infocam_plus_map(fmaps, net.final_weights, y)
        contrast = int(np.argmin(logits))
        assert contrast != y
        expected = (cam_map(fmaps, net.final_weights, y).grid
                    - cam_map(fmaps, net.final_weights, contrast).grid)
        np.testing.assert_allclose(imap.grid, expected, atol=1e-12)

    def test_per_region_variant_full_size_matches_per_image(self):
        # a window covering the whole grid makes the region argmin global
        rng = np.random.default_rng(4)
        fm = rng.normal(size=(2, 3, 3))
        w = rng.normal(size=(4, 2))
        per_image = infocam_plus_map(fm, w, 1)
        summed = region_sum(per_image, 3)
        per_region = infocam_plus_region_map(fm, w, 1, 3)
        center = per_region.grid[1, 1]
        assert center == pytest.approx(summed.grid[1, 1], abs=1e-10)


class TestRegionSum:
    def test_size_one_is_identity(self):
        grid = np.random.default_rng(6).normal(size=(4, 5))
        imap = IntensityMap(grid, "infocam", 0)
        np.testing.assert_array_equal(region_sum(imap, 1).grid, grid)

    def test_ones_map_window_counts(self):
        imap = IntensityMap(np.ones((3, 3)), "infocam", 0)
        out = region_sum(imap, 3).grid
        assert out[1, 1] == 9.0
        assert out[0, 0] == 4.0
        assert out[0, 1] == 6.0

    @pytest.mark.parametrize("size", [1, 2, 3, 4, 5])
    def test_matches_naive_oracle_exactly(self, size):
        rng = np.random.default_rng(size)
        for _ in range(40):
            grid = rng.normal(size=(rng.integers(5, 9), rng.integers(5, 9)))
            imap = IntensityMap(grid, "infocam", 0)
            np.testing.assert_array_equal(region_sum(imap, size).grid,
                                          naive_region_sum(grid, size))

    def test_full_window_center_equals_grid_sum(self):
        rng = np.random.default_rng(8)
        grid = rng.normal(size=(5, 5))
        out = region_sum(IntensityMap(grid, "cam", 0), 5).grid
        assert out[2, 2] == pytest.approx(grid.sum(), abs=1e-12)

    def test_oversized_window_rejected(self):
        with pytest.raises(ValueError):
            region_sum(IntensityMap(np.ones((3, 3)), "cam", 0), 4)


class TestExports:
    def test_pgm_header_and_scaling(self, tmp_path):
        grid = np.array([[-1.0, 0.0], [1.0, 3.0]])
        path = tmp_path / "map.pgm"
        write_pgm(grid, path)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        pixels = np.frombuffer(raw[-4:], dtype=np.uint8)
        np.testing.assert_array_equal(pixels, [0, 64, 128, 255])

    def test_raw_dump_roundtrip(self, tmp_path):
        grid = np.random.default_rng(9).normal(size=(3, 4))
        path = tmp_path / "map.npy"
        write_raw(grid, path)
        np.testing.assert_array_equal(np.load(path), grid)

    def test_point_map_dispatch(self):
        rng = np.random.default_rng(10)
        fm = rng.normal(size=(2, 3, 3))
        w = rng.normal(size=(3, 2))
        for kind in ("cam", "infocam", "infocam_plus"):
            assert point_map(fm, w, 0, kind).kind == kind
        with pytest.raises(ValueError):
            point_map(fm, w, 0, "gradcam")
