
import numpy as np
import pytest

from cavityforge.autolabel import (SQUARE_FALLBACK, WATERSHED, LabelingError, label_patch,
                                   mask_edge_radii, mask_to_box, round_half_up, square_label,
                                   tight_bbox)
from cavityforge.patches import ray_angles, rotate_profile, warp_patch, classify_size
from cavityforge.physics import SimulationRequest, simulate_profile


@pytest.fixture(scope="module")
def profile():
    return simulate_profile(SimulationRequest(8.0, -1.3))


class TestHelpers:
    @pytest.mark.parametrize("x,want", [(0.5, 1), (1.5, 2), (2.4999, 2), (-0.5, 0), (3.0, 3)])
    def test_round_half_up(self, x, want):
        assert round_half_up(x) == want

    def test_tight_bbox(self):
        m = np.zeros((10, 12), bool)
        m[2:5, 3:9] = True
        assert tight_bbox(m) == (3, 2, 8, 4)
        with pytest.raises(LabelingError):
            tight_bbox(np.zeros((3, 3), bool))

    def test_square_side(self):
        lab = square_label((41, 41), 5.1)
        x0, y0, x1, y1 = lab.bbox
        assert x1 - x0 + 1 == y1 - y0 + 1 == round_half_up(1.5 * 2 * 5.1)
        assert lab.method == SQUARE_FALLBACK

    def test_mask_to_box(self):
        m = np.zeros((5, 5), bool)
        m[1:4, 0:2] = True
        cx, cy, w, h = mask_to_box(m, (10, 20), (100, 50))
        assert (cx, cy, w, h) == pytest.approx((11 / 100, 22.5 / 50, 2 / 100, 3 / 50))

    def test_mask_to_box_clamps(self):
        m = np.ones((4, 4), bool)
        cx, cy, w, h = mask_to_box(m, (-2, -2), (10, 10))
        assert min(cx, cy, w, h) >= 0.0


class TestWatershed:
    def test_edge_on_fringe(self, profile):
        patch = rotate_profile(profile, 0.1)
        lab = label_patch(patch)
        assert lab.method == WATERSHED
        edges = mask_edge_radii(lab.mask, ray_angles(64))
        assert abs(np.median(edges) - patch.fringe_radius_px) <= 1.0
        assert np.all(np.abs(edges - patch.fringe_radius_px) <= 1.5)

    def test_warped_edge_follows_ray_minima(self, profile):
        patch = rotate_profile(profile, 0.1)
        warped = warp_patch(patch, classify_size(8.0), seed=9)
        lab = label_patch(warped)
        from cavityforge.patches import check_fringe
        fc = check_fringe(warped)
        edges = mask_edge_radii(lab.mask, fc.ray_angles)
        assert abs(np.median(edges) - fc.radius_px) <= 1.0
        assert np.nanmax(np.abs(edges - fc.ray_radii)) <= 1.5

    def test_mask_is_connected_and_contains_centre(self, profile):
        from scipy import ndimage
        lab = label_patch(rotate_profile(profile, 0.1))
        _, n = ndimage.label(lab.mask)
        assert n == 1 and lab.mask[lab.mask.shape[0] // 2, lab.mask.shape[1] // 2]

    def test_small_feature_gets_square(self, profile):
        patch = rotate_profile(profile, 1.5)
        lab = label_patch(patch)
        assert lab.method == SQUARE_FALLBACK
        x0, _, x1, _ = lab.bbox
        assert x1 - x0 + 1 == round_half_up(3.0 * lab.radius_px)

    def test_no_fringe_raises(self, profile):
        from dataclasses import replace
        flat = replace(rotate_profile(profile, 0.1), intensity=np.ones((61, 61)))
        with pytest.raises(LabelingError):
            label_patch(flat)


class TestSpecExamples:
    def test_full_image_box(self):
        assert mask_to_box(np.ones((100, 100), bool), (0, 0), (100, 100)) == (0.5, 0.5, 1.0, 1.0)

    def test_corner_box(self):
        m = np.ones((10, 10), bool)
        assert mask_to_box(m, (0, 0), (100, 100)) == pytest.approx((0.05, 0.05, 0.1, 0.1))

    def test_box_contains_random_masks(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            m = rng.random((9, 9)) < 0.3
            if not m.any():
                continue
            ox, oy = rng.integers(0, 50, 2)
            cx, cy, w, h = mask_to_box(m, (ox, oy), (64, 64))
            x0, x1 = (cx - w / 2) * 64, (cx + w / 2) * 64
            y0, y1 = (cy - h / 2) * 64, (cy + h / 2) * 64
            ys, xs = np.nonzero(m)
            assert np.all(xs + ox >= x0 - 1e-9) and np.all(xs + ox + 1 <= x1 + 1e-9)
            assert np.all(ys + oy >= y0 - 1e-9) and np.all(ys + oy + 1 <= y1 + 1e-9)

    def test_fringe_at_20px_gives_disc(self, profile):
        scale = profile.fringe_rho() * 8.0 / 20.0
        lab = label_patch(rotate_profile(profile, scale))
        x0, y0, x1, y1 = lab.bbox
        assert abs((x1 - x0 + 1) - 41) <= 2 and abs((y1 - y0 + 1) - 41) <= 2

    def test_radius_5_square(self):
        assert square_label((31, 31), 5.0).bbox[2] - square_label((31, 31), 5.0).bbox[0] + 1 == 15

    def test_deterministic(self, profile):
        pa = rotate_profile(profile, 0.1)
        np.testing.assert_array_equal(label_patch(pa).mask, label_patch(pa).mask)

    def test_contains_dark_ring_interior(self, profile):
        pa = rotate_profile(profile, 0.1)
        lab = label_patch(pa)
        y, x = np.mgrid[-pa.half:pa.half + 1, -pa.half:pa.half + 1]
        core = np.hypot(x, y) <= pa.fringe_radius_px - 1.5
        assert np.all(lab.mask[core])

    def test_fallback_trigger_exact(self, small_lut):
        from cavityforge.patches import check_fringe
        for prof in small_lut.entries.values():
            for scale in (0.1, 0.3):
                try:
                    pa = rotate_profile(prof, scale)
                    lab = label_patch(pa)
                except (LabelingError, ValueError):
                    continue
                assert (lab.method == SQUARE_FALLBACK) == (check_fringe(pa).radius_px < 8.0)
