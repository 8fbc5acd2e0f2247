import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from foveate import cortex, retina
from foveate.errors import ParseError


def map_for(nodes, alpha=0.05, dims=(40, 76)):
    tess = retina.tessellation_from_nodes(np.asarray(nodes, dtype=float), 0.1)
    return cortex.cortical_coordinates(tess, alpha, dims)


def constant_iv(n, c=0.5, channels=3, valid=None):
    values = np.full((n, channels), c, dtype=np.float64)
    if valid is None:
        valid = np.ones(n, dtype=bool)
    values[~valid] = 0.0
    return retina.ImageVector(values, valid)


class TestCorticalCoordinates:
    def test_log_offset_example(self):
        cmap = map_for([[0.05, 0.0], [0.3, 0.2]], alpha=0.05)
        assert_allclose(cmap.node_u[0], math.log(2.0), rtol=1e-12)
        assert cmap.node_v[0] == 0.0
        assert cmap.right[0]

    def test_origin_maps_to_zero_exactly(self):
        cmap = map_for([[0.0, 0.0], [0.5, 0.1]])
        assert cmap.node_u[0] == 0.0

    def test_rotation_changes_only_angle(self):
        r, dtheta = 0.5, 0.3
        a = (r, 0.0)
        b = (r * math.cos(dtheta), r * math.sin(dtheta))
        cmap = map_for([a, b])
        assert_allclose(cmap.node_u[0], cmap.node_u[1], rtol=1e-12)
        assert_allclose(cmap.node_v[1] - cmap.node_v[0], dtheta, rtol=1e-12)
        assert cmap.right.all()

    def test_hemifield_assignment(self):
        pts = {
            "east": (0.5, 0.0),
            "north": (0.0, 0.5),
            "west": (-0.5, 0.0),
            "south": (0.0, -0.5),
            "northwest": (-0.3, 0.3),
        }
        cmap = map_for(list(pts.values()))
        sides = dict(zip(pts, cmap.right))
        assert sides["east"]
        # boundary angles belong to the right hemifield
        assert sides["north"] and sides["south"]
        assert not sides["west"] and not sides["northwest"]

    def test_angular_coordinate_stays_in_half_range(self):
        tess = retina.generate_tessellation(4000)
        cmap = cortex.cortical_coordinates(tess)
        assert np.all(cmap.node_v > -math.pi / 2 - 1e-12)
        assert np.all(cmap.node_v <= math.pi / 2 + 1e-12)

    def test_u_monotone_in_eccentricity(self):
        tess = retina.generate_tessellation(3000)
        cmap = cortex.cortical_coordinates(tess)
        assert np.all(np.diff(cmap.node_u) >= -1e-12)

    def test_left_mirror_keeps_horizontal_neighbors_adjacent(self):
        # points just either side of the vertical axis land at the same v
        eps = 1e-3
        cmap = map_for([[eps, 0.4], [-eps, 0.4]])
        assert cmap.right[0] and not cmap.right[1]
        assert_allclose(cmap.node_v[0], cmap.node_v[1], atol=2 * eps)

    def test_nodes_fit_their_half_grid(self):
        tess = retina.generate_tessellation(5000)
        dims = (399, 752)
        cmap = cortex.cortical_coordinates(tess, grid_dims=dims)
        rows, cols = cmap.grid_positions()
        assert np.all(rows >= 0) and np.all(rows <= dims[0] - 1)
        half = dims[1] // 2
        assert np.all(cols[cmap.right] >= half)
        assert np.all(cols[cmap.right] <= dims[1] - 1)
        assert np.all(cols[~cmap.right] >= 0)
        assert np.all(cols[~cmap.right] < half)

    def test_alpha_must_be_positive(self):
        tess = retina.generate_tessellation(10)
        for alpha in (0.0, -0.1):
            with pytest.raises(ValueError):
                cortex.cortical_coordinates(tess, alpha)

    def test_grid_dims_validated(self):
        tess = retina.generate_tessellation(10)
        for dims in ((2, 76), (40, 4), (0, 0)):
            with pytest.raises(ValueError):
                cortex.cortical_coordinates(tess, grid_dims=dims)

    def test_scale_shift_matches_analytic_bound(self):
        # scaling the pattern by s moves u by ln s, up to the exact residual
        alpha, s = 0.05, 1.7
        radii = np.array([0.2, 0.4, 0.8 / s])
        for r in radii:
            du = math.log((r * s + alpha) / alpha) - math.log((r + alpha) / alpha)
            residual = abs(du - math.log(s))
            bound = abs(math.log((r * s + alpha) / (r + alpha)) - math.log(s))
            assert residual <= bound + 1e-12
        # the residual shrinks as r grows past alpha
        big = math.log((0.8 * s + alpha) / (0.8 + alpha)) - math.log(s)
        assert abs(big) < 0.06


class TestRotationToTranslation:
    def test_coordinate_level_shift(self):
        rng = np.random.default_rng(2)
        dtheta = 0.1
        theta = rng.uniform(-math.pi / 2 + 0.25, math.pi / 2 - 0.25, 400)
        r = rng.uniform(0.15, 0.95, 400)
        base = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        rot = np.column_stack(
            [r * np.cos(theta + dtheta), r * np.sin(theta + dtheta)]
        )
        dims = (120, 200)
        m0 = map_for(base, dims=dims)
        m1 = map_for(rot, dims=dims)
        assert m0.right.all() and m1.right.all()

        # the cortical grid is fixed; rotated content moves across it
        fixed = m0.grid_transform["right"]
        r0, c0 = fixed.apply(m0.node_u, m0.node_v)
        r1, c1 = fixed.apply(m1.node_u, m1.node_v)
        assert_allclose(c1, c0, atol=1.0)
        assert_allclose(r1, r0 + dtheta * fixed.v_scale, atol=1.0)


class TestSplat:
    def test_constant_imagevector(self):
        tess = retina.generate_tessellation(1200)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(60, 112))
        img = cortex.splat_cortical_image(constant_iv(1200, 0.73), cmap)
        assert img.pixels.shape == (60, 112, 3)
        covered = img.weights > 0
        assert covered.any()
        assert_allclose(img.pixels[covered], 0.73, atol=1e-6)
        assert_allclose(img.pixels[~covered], 0.0, atol=0)

    def test_default_grid_dims(self):
        tess = retina.generate_tessellation(200)
        cmap = cortex.cortical_coordinates(tess)
        img = cortex.splat_cortical_image(constant_iv(200), cmap)
        assert img.dims == (399, 752)

    def test_single_node_blob_peaks_at_node_cell(self):
        tess = retina.generate_tessellation(300)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(50, 96))
        valid = np.zeros(300, dtype=bool)
        valid[137] = True
        iv = constant_iv(300, 0.9, valid=valid)
        img = cortex.splat_cortical_image(iv, cmap)
        rows, cols = cmap.grid_positions()
        peak = np.unravel_index(np.argmax(img.weights), img.weights.shape)
        assert peak[0] == int(round(rows[137]))
        assert peak[1] == int(round(cols[137]))
        covered = img.weights > 0
        assert_allclose(img.pixels[covered], 0.9, atol=1e-9)

    def test_node_count_mismatch_rejected(self):
        tess = retina.generate_tessellation(100)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(40, 76))
        with pytest.raises(ValueError):
            cortex.splat_cortical_image(constant_iv(99), cmap)

    def test_sigma_must_be_positive(self):
        tess = retina.generate_tessellation(100)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(40, 76))
        with pytest.raises(ValueError):
            cortex.splat_cortical_image(constant_iv(100), cmap, sigma_grid=0.0)

    def test_uncovered_cells_are_zero(self):
        tess = retina.generate_tessellation(50)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(80, 152))
        img = cortex.splat_cortical_image(constant_iv(50, 1.0), cmap)
        uncovered = img.weights == 0
        assert uncovered.any()
        assert_allclose(img.pixels[uncovered], 0.0, atol=0)
        assert np.isfinite(img.pixels).all()


class TestGridding:
    @pytest.mark.parametrize("sigma", [1.0, 0.7, 1.6])
    def test_matches_splat(self, sigma):
        tess = retina.generate_tessellation(2000)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(64, 120))
        rng = np.random.default_rng(9)
        values = rng.random((2000, 3))
        valid = rng.random(2000) > 0.1
        values[~valid] = 0.0
        iv = retina.ImageVector(values, valid)
        a = cortex.splat_cortical_image(iv, cmap, sigma)
        b = cortex.grid_cortical_image(iv, cmap, sigma)
        assert np.abs(a.pixels - b.pixels).max() <= 1e-6
        assert np.array_equal(a.weights > 0, b.weights > 0)

    def test_matches_splat_on_refit_dims(self):
        tess = retina.generate_tessellation(1500)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(64, 120))
        iv = constant_iv(1500, 0.31)
        target = (40, 76)
        refit = cortex.cortical_coordinates(tess, cmap.alpha, target)
        a = cortex.splat_cortical_image(iv, refit)
        b = cortex.grid_cortical_image(iv, cmap, target_dims=target)
        assert b.dims == target
        assert np.abs(a.pixels - b.pixels).max() <= 1e-6

    def test_reduced_target_cell_count(self):
        tess = retina.generate_tessellation(800)
        cmap = cortex.cortical_coordinates(tess)
        img = cortex.grid_cortical_image(constant_iv(800), cmap, target_dims=(230, 345))
        assert img.dims == (230, 345)
        assert img.pixels.shape[0] * img.pixels.shape[1] == 79_350
        assert_allclose(857_476.0 / 79_350.0, 10.806, atol=5e-4)

    def test_constant_conserved(self):
        tess = retina.generate_tessellation(900)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(48, 92))
        img = cortex.grid_cortical_image(constant_iv(900, 0.42), cmap)
        covered = img.weights > 0
        assert_allclose(img.pixels[covered], 0.42, atol=1e-9)

    def test_bad_target_dims_rejected(self):
        tess = retina.generate_tessellation(100)
        cmap = cortex.cortical_coordinates(tess, grid_dims=(40, 76))
        with pytest.raises(ValueError):
            cortex.grid_cortical_image(constant_iv(100), cmap, target_dims=(0, 10))


class TestSubsample:
    def test_dims_and_cell_count(self):
        pixels = np.ones((399, 752, 3))
        weights = np.ones((399, 752))
        out = cortex.subsample_cortical(cortex.CorticalImage(pixels, weights), 2)
        assert out.dims == (199, 376)
        assert out.dims[0] * out.dims[1] == 74_824
        assert_allclose(857_476.0 / 74_824.0, 11.46, atol=5e-3)

    def test_factor_one_is_identity(self):
        rng = np.random.default_rng(3)
        img = cortex.CorticalImage(rng.random((10, 12, 3)), rng.random((10, 12)))
        out = cortex.subsample_cortical(img, 1)
        assert np.array_equal(out.pixels, img.pixels)
        assert np.array_equal(out.weights, img.weights)

    def test_constant_image_preserved(self):
        img = cortex.CorticalImage(np.full((20, 30, 3), 0.6), np.ones((20, 30)))
        out = cortex.subsample_cortical(img, 3)
        assert out.dims == (6, 10)
        assert_allclose(out.pixels, 0.6, atol=1e-12)

    def test_trailing_cells_dropped(self):
        pixels = np.zeros((7, 9, 1))
        pixels[6, :, 0] = 99.0  # dropped row must not leak into the output
        img = cortex.CorticalImage(pixels, np.ones((7, 9)))
        out = cortex.subsample_cortical(img, 2)
        assert out.dims == (3, 4)
        assert out.pixels.max() == 0.0

    def test_mean_over_covered_cells_only(self):
        pixels = np.zeros((2, 2, 1))
        pixels[0, 0, 0] = 0.8
        pixels[0, 1, 0] = 0.4
        weights = np.array([[1.0, 3.0], [0.0, 0.0]])
        out = cortex.subsample_cortical(cortex.CorticalImage(pixels, weights), 2)
        # two covered cells, plain average of their values
        assert_allclose(out.pixels[0, 0, 0], 0.6, rtol=1e-12)
        assert_allclose(out.weights[0, 0], 4.0, rtol=1e-12)

    def test_fully_uncovered_window_stays_zero(self):
        img = cortex.CorticalImage(np.zeros((2, 2, 1)), np.zeros((2, 2)))
        out = cortex.subsample_cortical(img, 2)
        assert out.pixels[0, 0, 0] == 0.0
        assert out.weights[0, 0] == 0.0

    def test_invalid_factor_rejected(self):
        img = cortex.CorticalImage(np.zeros((4, 4, 1)), np.ones((4, 4)))
        with pytest.raises(ValueError):
            cortex.subsample_cortical(img, 0)
        with pytest.raises(ValueError):
            cortex.subsample_cortical(img, 5)


class TestWeightsIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(8)
        weights = rng.random((13, 17))
        weights[rng.random((13, 17)) < 0.3] = 0.0
        path = tmp_path / "img.w"
        cortex.save_cortical_weights(path, weights)
        loaded = cortex.load_cortical_weights(path, (13, 17))
        assert_allclose(loaded, weights.astype(np.float32), rtol=0, atol=0)

    def test_dims_checked(self, tmp_path):
        path = tmp_path / "img.w"
        cortex.save_cortical_weights(path, np.ones((4, 6)))
        with pytest.raises(ParseError):
            cortex.load_cortical_weights(path, (5, 6))

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "img.w"
        path.write_bytes(b"RIV1" + b"\x00" * 12)
        with pytest.raises(ParseError):
            cortex.load_cortical_weights(path, (1, 1))
