import io
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from foveate import retina
from foveate.errors import ParseError


def smooth_image(dims, seed=0):
    """Low-frequency RGB test pattern, values well inside [0, 1]."""
    rows, cols = dims
    r = np.arange(rows)[:, None] / max(rows - 1, 1)
    c = np.arange(cols)[None, :] / max(cols - 1, 1)
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0, 2 * np.pi, 3)
    img = np.stack(
        [
            0.5 + 0.3 * np.sin(2 * np.pi * (r + 0.7 * c) + phases[0]),
            0.5 + 0.3 * np.cos(2 * np.pi * (1.3 * r - c) + phases[1]),
            0.5 + 0.25 * np.sin(2 * np.pi * (0.5 * r + 1.1 * c) + phases[2]),
        ],
        axis=-1,
    )
    return np.clip(img, 0.0, 1.0)


class TestTessellationGeneration:
    def test_node_count_and_shape(self):
        tess = retina.generate_tessellation(1000)
        assert tess.node_count == 1000
        assert tess.nodes.shape == (1000, 2)
        assert tess.nearest_neighbor_dist.shape == (1000,)

    def test_golden_angle_value(self):
        assert_allclose(retina.GOLDEN_ANGLE, math.pi * (3.0 - math.sqrt(5.0)), rtol=0, atol=0)

    def test_radii_monotone_nondecreasing(self):
        tess = retina.generate_tessellation(5000)
        ecc = tess.eccentricities()
        assert np.all(np.diff(ecc) >= -1e-12)

    def test_max_eccentricity_is_one(self):
        for n in (10, 100, 5000):
            tess = retina.generate_tessellation(n)
            assert_allclose(tess.eccentricities().max(), 1.0, rtol=0, atol=1e-12)
        assert np.all(tess.eccentricities() <= 1.0 + 1e-12)

    def test_single_node_at_origin(self):
        tess = retina.generate_tessellation(1)
        assert_allclose(tess.nodes, [[0.0, 0.0]], atol=0)

    def test_foveal_square_root_law(self):
        n, f = 2000, 0.1
        tess = retina.generate_tessellation(n, f)
        n_f = int(round(n * f))
        ecc = tess.eccentricities()[:n_f]
        expected = f * np.sqrt(np.arange(n_f) / n_f)
        assert_allclose(ecc, expected, rtol=1e-12, atol=0)
        assert ecc[0] == 0.0

    def test_peripheral_exponential_law(self):
        n, f = 2000, 0.1
        tess = retina.generate_tessellation(n, f)
        n_f = int(round(n * f))
        ecc = tess.eccentricities()[n_f:]
        # consecutive peripheral radii keep a constant ratio; the band spans
        # exactly [fovea_radius, 1]
        ratios = ecc[1:] / ecc[:-1]
        assert_allclose(ratios, ratios[0], rtol=1e-9)
        assert_allclose(ecc[0], f, rtol=1e-12)
        assert_allclose(ecc[-1], 1.0, atol=1e-12)

    def test_golden_angle_spiral_positions(self):
        tess = retina.generate_tessellation(300)
        ecc = tess.eccentricities()
        angles = np.arctan2(tess.nodes[:, 1], tess.nodes[:, 0])
        for i in (1, 57, 299):
            expected = i * retina.GOLDEN_ANGLE
            diff = (angles[i] - expected + np.pi) % (2 * np.pi) - np.pi
            assert abs(diff) < 1e-9
            assert_allclose(np.hypot(*tess.nodes[i]), ecc[i], rtol=1e-12)

    def test_spacing_scales_with_eccentricity(self):
        # self-similar periphery: spacing at r=0.8 is ~4x spacing at r=0.2
        tess = retina.generate_tessellation(10_000)
        ecc = tess.eccentricities()
        nn = tess.nearest_neighbor_dist

        def mean_nn(target):
            mask = np.abs(ecc - target) < 0.02
            assert mask.sum() > 10
            return nn[mask].mean()

        ratio = mean_nn(0.8) / mean_nn(0.2)
        assert 4.0 / 1.5 < ratio < 4.0 * 1.5

    def test_spacing_monotone_outside_fovea(self):
        tess = retina.generate_tessellation(10_000)
        ecc = tess.eccentricities()
        nn = tess.nearest_neighbor_dist
        outside = ecc > tess.fovea_radius
        order = np.argsort(ecc[outside])
        spaced = nn[outside][order]
        # local jitter allowed, but the running max must keep growing
        running = np.maximum.accumulate(spaced)
        assert np.all(spaced >= running / 1.5)

    def test_determinism(self):
        a = retina.generate_tessellation(777, 0.15)
        b = retina.generate_tessellation(777, 0.15)
        assert np.array_equal(a.nodes, b.nodes)

    @pytest.mark.parametrize("n,f", [(0, 0.1), (-3, 0.1), (10, 0.0), (10, 1.0), (10, -0.2)])
    def test_invalid_arguments(self, n, f):
        with pytest.raises(ValueError):
            retina.generate_tessellation(n, f)


class TestReceptiveFields:
    def test_two_node_center_placement(self):
        nodes = np.array([[-0.5, 0.0], [0.5, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 100.0, (1000, 1000), (500.0, 500.0))
        assert_allclose(fields[0].center_px, (500.0, 450.0), atol=0)
        assert_allclose(fields[1].center_px, (500.0, 550.0), atol=0)

    def test_sigma_from_spacing(self):
        nodes = np.array([[-0.5, 0.0], [0.5, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 100.0, (1000, 1000), (500.0, 500.0))
        # nearest neighbor is the other node, 1.0 apart
        assert_allclose(fields[0].sigma_px, 0.75 * 1.0 * 100.0, rtol=1e-12)

    def test_weights_normalized(self):
        tess = retina.generate_tessellation(400)
        fields = retina.compute_receptive_fields(tess, 50.0, (128, 128), (63.5, 63.5))
        for f in fields:
            if not f.empty:
                assert_allclose(f.weights.sum(), 1.0, rtol=0, atol=1e-12)
                assert np.all(f.weights > 0)

    def test_gaussian_profile(self):
        nodes = np.array([[0.0, 0.0], [1.0, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 20.0, (101, 101), (50.0, 50.0))
        f = fields[0]
        sigma = f.sigma_px
        d2 = (f.rows - 50.0) ** 2 + (f.cols - 50.0) ** 2
        raw = np.exp(-d2 / (2.0 * sigma * sigma))
        assert_allclose(f.weights, raw / raw.sum(), rtol=1e-12)
        assert np.all(np.sqrt(d2) <= 3.0 * sigma + 1e-9)

    def test_edge_clipping_keeps_normalization(self):
        tess = retina.generate_tessellation(300)
        fields = retina.compute_receptive_fields(tess, 80.0, (100, 100), (5.0, 5.0))
        clipped = [f for f in fields if not f.empty]
        assert clipped
        for f in clipped:
            assert_allclose(f.weights.sum(), 1.0, atol=1e-12)
            assert np.all(f.rows >= 0) and np.all(f.rows < 100)
            assert np.all(f.cols >= 0) and np.all(f.cols < 100)

    def test_fields_fully_outside_are_empty(self):
        # close pair far to the right: small sigma, support misses the image
        nodes = np.array([[1.0, 0.0], [0.99, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 400.0, (100, 100), (50.0, 50.0))
        assert all(f.empty for f in fields)
        assert fields[0].weights.size == 0

    def test_tiny_field_falls_back_to_nearest_pixel(self):
        # spacing so small the 3-sigma disc misses every pixel center
        nodes = np.array([[0.0, 0.0], [0.001, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 10.0, (64, 64), (31.3, 31.3))
        for f in fields:
            assert not f.empty
            assert f.weights.size == 1
            assert_allclose(f.weights.sum(), 1.0, atol=0)

    def test_full_scale_geometry_has_no_empty_fields(self):
        tess = retina.generate_tessellation(3000)
        fields = retina.compute_receptive_fields(
            tess, 463.0, (926, 926), (463.0, 463.0)
        )
        assert not any(f.empty for f in fields)

    def test_fixation_outside_image_rejected(self):
        tess = retina.generate_tessellation(10)
        with pytest.raises(ValueError):
            retina.compute_receptive_fields(tess, 10.0, (50, 50), (60.0, 10.0))

    @pytest.mark.parametrize("radius", [0.0, -1.0])
    def test_bad_radius_rejected(self, radius):
        tess = retina.generate_tessellation(10)
        with pytest.raises(ValueError):
            retina.compute_receptive_fields(tess, radius, (50, 50), (25.0, 25.0))


class TestSampling:
    def test_constant_image_reproduced(self):
        tess = retina.generate_tessellation(600)
        fix = (63.5, 63.5)
        fields = retina.compute_receptive_fields(tess, 60.0, (128, 128), fix)
        image = np.full((128, 128, 3), 0.37)
        iv = retina.sample(image, fields, fix, 60.0)
        assert iv.values.shape == (600, 3)
        assert iv.valid.all()
        assert_allclose(iv.values, 0.37, atol=1e-12)

    def test_matches_bruteforce_reference(self):
        tess = retina.generate_tessellation(150)
        fix = (30.0, 33.0)
        fields = retina.compute_receptive_fields(tess, 25.0, (64, 64), fix)
        image = smooth_image((64, 64), seed=3)
        iv = retina.sample(image, fields, fix, 25.0)

        for f in fields:
            if f.empty:
                continue
            expected = np.zeros(3)
            for r, c, w in zip(f.rows, f.cols, f.weights):
                expected += w * image[r, c]
            assert_allclose(iv.values[f.node_index], expected, atol=1e-9)

    def test_values_stay_in_unit_interval(self):
        tess = retina.generate_tessellation(500)
        fix = (40.0, 40.0)
        fields = retina.compute_receptive_fields(tess, 39.0, (81, 81), fix)
        rng = np.random.default_rng(11)
        image = rng.random((81, 81, 3))
        iv = retina.sample(image, fields, fix, 39.0)
        valid = iv.values[iv.valid]
        assert np.all(valid >= 0.0) and np.all(valid <= 1.0)

    def test_grayscale_input_gets_single_channel(self):
        tess = retina.generate_tessellation(50)
        fix = (16.0, 16.0)
        fields = retina.compute_receptive_fields(tess, 14.0, (33, 33), fix)
        iv = retina.sample(np.full((33, 33), 0.5), fields, fix, 14.0)
        assert iv.values.shape == (50, 1)
        assert_allclose(iv.values[iv.valid], 0.5, atol=1e-12)

    def test_empty_fields_marked_invalid(self):
        # two tight pairs: one inside the frame, one far outside it
        nodes = np.array([[0.0, 0.0], [0.005, 0.0], [1.0, 0.0], [1.005, 0.0]])
        tess = retina.tessellation_from_nodes(nodes, 0.1)
        fields = retina.compute_receptive_fields(tess, 200.0, (100, 100), (50.0, 50.0))
        image = np.ones((100, 100, 3))
        iv = retina.sample(image, fields, (50.0, 50.0), 200.0)
        assert iv.valid[0] and iv.valid[1]
        assert not iv.valid[2] and not iv.valid[3]
        assert_allclose(iv.values[2], 0.0, atol=0)

    def test_dimension_mismatch_rejected(self):
        tess = retina.generate_tessellation(50)
        fields = retina.compute_receptive_fields(tess, 14.0, (33, 33), (16.0, 16.0))
        with pytest.raises(ValueError, match="dimension"):
            retina.sample(np.ones((40, 40, 3)), fields, (16.0, 16.0), 14.0)


class TestBackprojection:
    def test_constant_roundtrip(self):
        tess = retina.generate_tessellation(800)
        fix = (63.5, 63.5)
        fields = retina.compute_receptive_fields(tess, 60.0, (128, 128), fix)
        iv = retina.sample(np.full((128, 128, 3), 0.6), fields, fix, 60.0)
        image, covered = retina.backproject(iv, fields, (128, 128))
        assert covered.any()
        assert_allclose(image[covered], 0.6, atol=1e-12)
        assert_allclose(image[~covered], 0.0, atol=0)

    def test_foveal_region_reconstructs_smooth_image(self):
        tess = retina.generate_tessellation(8000)
        dims = (128, 128)
        fix = (63.5, 63.5)
        radius = 60.0
        fields = retina.compute_receptive_fields(tess, radius, dims, fix)
        image = smooth_image(dims, seed=7)
        iv = retina.sample(image, fields, fix, radius)
        recon, covered = retina.backproject(iv, fields, dims)

        rr = np.arange(dims[0])[:, None] - fix[0]
        cc = np.arange(dims[1])[None, :] - fix[1]
        foveal = (np.hypot(rr, cc) <= tess.fovea_radius * radius) & covered
        assert foveal.sum() > 50
        err = recon[foveal] - image[foveal]
        mse = float(np.mean(err**2))
        psnr = 10.0 * np.log10(1.0 / mse)
        assert psnr >= 25.0

    def test_field_count_mismatch_rejected(self):
        tess = retina.generate_tessellation(40)
        fix = (16.0, 16.0)
        fields = retina.compute_receptive_fields(tess, 14.0, (33, 33), fix)
        iv = retina.sample(np.ones((33, 33, 3)), fields, fix, 14.0)
        with pytest.raises(ValueError):
            retina.backproject(iv, fields[:-1], (33, 33))


class TestReductionRatio:
    def test_flat_pixel_basis(self):
        ratio = retina.reduction_ratio((926, 926, 3), 50_000, 3)
        assert_allclose(ratio, 857_476.0 / 50_000.0, rtol=1e-12)
        assert_allclose(ratio, 17.14952, atol=5e-6)

    def test_channels_cancel(self):
        assert_allclose(
            retina.reduction_ratio((100, 100, 3), 500, 3),
            retina.reduction_ratio((100, 100, 1), 500, 1),
            rtol=1e-12,
        )


class TestTessellationIO:
    def test_roundtrip_exact(self, tmp_path):
        tess = retina.generate_tessellation(321, 0.12)
        path = tmp_path / "ret.txt"
        retina.save_tessellation(path, tess)
        loaded = retina.load_tessellation(path)
        assert np.array_equal(loaded.nodes, tess.nodes)
        assert loaded.fovea_radius == tess.fovea_radius
        assert_allclose(loaded.nearest_neighbor_dist, tess.nearest_neighbor_dist, rtol=1e-12)

    def test_header_checked(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("BOGUS v9 3 0.1\n0 0\n")
        with pytest.raises(ParseError, match="line 1"):
            retina.load_tessellation(path)

    def test_count_mismatch_detected(self, tmp_path):
        path = tmp_path / "short.txt"
        path.write_text("RETINA v1 3 0.1\n0 0\n0.1 0.2\n")
        with pytest.raises(ParseError):
            retina.load_tessellation(path)

    def test_bad_number_reports_line(self, tmp_path):
        path = tmp_path / "junk.txt"
        path.write_text("RETINA v1 2 0.1\n0 0\nfoo bar\n")
        with pytest.raises(ParseError, match="line 3"):
            retina.load_tessellation(path)


class TestImageVectorIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        values = rng.random((37, 3))
        valid = rng.random(37) > 0.2
        values[~valid] = 0.0
        iv = retina.ImageVector(values, valid)
        path = tmp_path / "v.riv"
        retina.save_imagevector(path, iv)
        loaded = retina.load_imagevector(path)
        assert loaded.values.shape == (37, 3)
        assert np.array_equal(loaded.valid, valid)
        assert_allclose(loaded.values, values.astype(np.float32), rtol=0, atol=0)

    def test_deterministic_bytes(self, tmp_path):
        values = np.linspace(0, 1, 30).reshape(10, 3)
        iv = retina.ImageVector(values, np.ones(10, dtype=bool))
        a, b = tmp_path / "a.riv", tmp_path / "b.riv"
        retina.save_imagevector(a, iv)
        retina.save_imagevector(b, iv)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.riv"
        path.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ParseError):
            retina.load_imagevector(path)

    def test_truncated_rejected(self, tmp_path):
        iv = retina.ImageVector(np.ones((5, 3)), np.ones(5, dtype=bool))
        path = tmp_path / "t.riv"
        retina.save_imagevector(path, iv)
        data = path.read_bytes()
        path.write_bytes(data[:-7])
        with pytest.raises(ParseError):
            retina.load_imagevector(path)
