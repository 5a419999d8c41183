import numpy as np
import pytest

from cavityforge.detector import (DetectorError, DetectorParams, apply_mtf, apply_shot_noise,
                                  enhance, filter_mtf, mtf)
from cavityforge.patches import CavityPatch


def flat_patch(value=1.0, size=65):
    return CavityPatch(np.full((size, size), value), 5.0, 0.1)


class TestParams:
    @pytest.mark.parametrize("kwargs", [{"mtf_plateau_a": 1.5}, {"mtf_halfwidth_uc": 0},
                                        {"dqe_zero": 0}, {"dose_per_pixel": -1}])
    def test_validation(self, kwargs):
        with pytest.raises(DetectorError):
            DetectorParams(**kwargs)


class TestMTF:
    def test_dc_is_one(self):
        assert mtf(0.0, DetectorParams()) == pytest.approx(1.0)

    def test_halfwidth(self):
        p = DetectorParams(mtf_plateau_a=0.0, mtf_halfwidth_uc=0.4)
        assert mtf(0.2, p) == pytest.approx(0.5)

    def test_plateau_limit(self):
        assert mtf(1e6, DetectorParams(mtf_plateau_a=0.1)) == pytest.approx(0.1, abs=1e-9)

    def test_flat_image_unchanged(self):
        np.testing.assert_allclose(filter_mtf(np.full((32, 32), 3.0), DetectorParams()), 3.0)

    def test_nyquist_stripes_attenuated(self):
        # stripes along one axis sit exactly at u = 0.5 cycles/px
        p = DetectorParams()
        img = np.tile(np.array([1.0, -1.0]), (64, 32))
        out = filter_mtf(img, p)
        np.testing.assert_allclose(out, mtf(0.5, p) * img, atol=1e-12)

    def test_plateau_one_is_identity(self):
        img = np.random.default_rng(0).normal(size=(16, 16))
        np.testing.assert_array_equal(filter_mtf(img, DetectorParams(mtf_plateau_a=1.0)), img)


class TestNoise:
    def test_statistics(self):
        p = DetectorParams(dose_per_pixel=400.0, dqe_zero=0.5)
        out = apply_shot_noise(flat_patch(size=401), p, np.random.default_rng(1)).intensity
        assert out.mean() == pytest.approx(1.0, abs=2e-3)
        assert out.std() == pytest.approx(1 / np.sqrt(200.0), rel=0.02)

    def test_seeded(self):
        p = DetectorParams()
        a = apply_shot_noise(flat_patch(), p, np.random.default_rng(3)).intensity
        b = apply_shot_noise(flat_patch(), p, np.random.default_rng(3)).intensity
        np.testing.assert_array_equal(a, b)

    def test_order_enforced(self):
        p = DetectorParams()
        noisy = apply_shot_noise(flat_patch(), p)
        with pytest.raises(DetectorError):
            apply_mtf(noisy, p)

    def test_enhance_history(self):
        out = enhance(flat_patch(), DetectorParams(), np.random.default_rng(0))
        assert out.history == ("mtf", "noise")

    def test_negative_rejected(self):
        with pytest.raises(DetectorError):
            apply_shot_noise(flat_patch(-0.1), DetectorParams())
