"""Brute-force SAD block matcher: exact recovery on integer-shift scenes,
sub-pixel refinement bounds, and breakdown under the spectral transform."""

import numpy as np
import pytest

from xstereo.blockmatch import _box_sum, block_match
from xstereo.data import SyntheticSceneSpec, nir_like_spectral_spec, render_scene


def naive_box_sum(a, radius):
    H, W = a.shape
    out = np.zeros((H, W))
    for i in range(H):
        for j in range(W):
            y0, y1 = max(0, i - radius), min(H, i + radius + 1)
            x0, x1 = max(0, j - radius), min(W, j + radius + 1)
            out[i, j] = a[y0:y1, x0:x1].sum()
    return out


class TestBoxSum:
    @pytest.mark.parametrize("radius", [0, 1, 3])
    def test_matches_naive_window_sum(self, radius, rng):
        a = rng.uniform(-1.0, 1.0, (9, 13))
        np.testing.assert_allclose(_box_sum(a, radius), naive_box_sum(a, radius),
                                   rtol=1e-12, atol=1e-12)


def identity_scene(seed, disparities, size=(24, 24)):
    return render_scene(SyntheticSceneSpec(texture_seed=seed,
                                           layer_disparities=disparities), size)


class TestIntegerRecovery:
    def test_exact_on_integer_shift(self):
        scene = identity_scene(7, (3.0,))
        left = scene.pair.left.data[0]
        right = scene.pair.right.data[0]
        disp, valid = block_match(left, right, 6, window=7, subpixel=False)
        assert valid.all()
        np.testing.assert_array_equal(disp[scene.visible_left], 3.0)

    def test_subpixel_stays_within_half_pixel_of_exact_match(self):
        scene = identity_scene(7, (3.0,))
        disp, _ = block_match(scene.pair.left.data[0], scene.pair.right.data[0],
                              6, window=7, subpixel=True)
        # the parabola vertex can pull off an exact minimum when the two
        # neighbor costs are unequal, but never by more than half a pixel
        assert np.abs(disp[scene.visible_left] - 3.0).max() <= 0.5

    def test_layered_scene_recovery(self):
        scene = identity_scene(11, (1.0, 3.0))
        gt = scene.pair.gt_disparity.data[0, 0]
        disp, valid = block_match(scene.pair.left.data[0], scene.pair.right.data[0],
                                  6, window=7, subpixel=False)
        region = scene.visible_left & valid
        # windows straddling the depth edge may lock to either side; the
        # overwhelming majority of unoccluded pixels must recover exactly
        assert (disp[region] == gt[region]).mean() > 0.85


class TestSubpixel:
    def test_refinement_beats_integer_grid_on_fractional_shift(self):
        scene = identity_scene(9, (2.5,))
        left = scene.pair.left.data[0]
        right = scene.pair.right.data[0]
        vis = scene.visible_left
        integer, _ = block_match(left, right, 6, window=7, subpixel=False)
        refined, _ = block_match(left, right, 6, window=7, subpixel=True)
        mae_int = np.abs(integer[vis] - 2.5).mean()
        mae_ref = np.abs(refined[vis] - 2.5).mean()
        # the true shift sits exactly between grid points, so the integer
        # matcher is off by half a pixel everywhere
        assert mae_int == pytest.approx(0.5)
        assert mae_ref < 0.25
        assert mae_ref < mae_int

    def test_single_candidate_skips_refinement(self):
        scene = identity_scene(3, (1.0,))
        left = scene.pair.left.data[0]
        right = scene.pair.right.data[0]
        disp, _ = block_match(left, right, 1, window=5, subpixel=True)
        # with only disparities {0, 1} there is no parabola to fit
        assert set(np.unique(disp)) <= {0.0, 1.0}


class TestSpectralBreakdown:
    def test_accuracy_degrades_under_band_shift(self):
        def rmse(scene):
            disp, valid = block_match(scene.pair.left.data[0],
                                      scene.pair.right.data[0], 6, window=7)
            gt = scene.pair.gt_disparity.data[0, 0]
            m = scene.visible_left & valid
            return float(np.sqrt(((disp[m] - gt[m]) ** 2).mean()))

        plain = rmse(identity_scene(5, (2.0, 4.0)))
        shifted = rmse(render_scene(nir_like_spectral_spec(5, (2.0, 4.0)), (24, 24)))
        assert shifted >= 2.0 * plain


class TestValidation:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.left = rng.uniform(0, 1, (3, 8, 8))
        self.right = rng.uniform(0, 1, (3, 8, 8))

    def test_float_max_disparity_accepted(self):
        disp, _ = block_match(self.left, self.right, 4.0, window=3)
        assert disp.shape == (8, 8)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="matching"):
            block_match(self.left, self.right[:, :4], 4)

    def test_non_chw_rejected(self):
        with pytest.raises(ValueError, match="matching"):
            block_match(self.left[0], self.right[0], 4)

    def test_even_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            block_match(self.left, self.right, 4, window=4)

    def test_nonpositive_window_rejected(self):
        with pytest.raises(ValueError, match="window"):
            block_match(self.left, self.right, 4, window=0)

    def test_negative_max_disparity_rejected(self):
        with pytest.raises(ValueError, match="max_disparity"):
            block_match(self.left, self.right, -1)
