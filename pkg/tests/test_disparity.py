import numpy as np
import pytest

from lfgen.disparity import (
    CalibrationError,
    DisparityCalibration,
    RelativeDepthMap,
    apply_calibration,
    calibrate,
)
from lfgen.epi import SlopeField


def slope_field_from(d, coherence=None):
    if coherence is None:
        coherence = np.ones_like(d)
    return SlopeField(slope=d, coherence=coherence)


class TestApplyCalibration:
    def test_identity(self):
        f = RelativeDepthMap(values=np.linspace(-1, 1, 12).reshape(3, 4))
        out = apply_calibration(f, DisparityCalibration(alpha=1.0, beta=0.0))
        np.testing.assert_array_equal(out.values, f.values)

    def test_constant_collapse(self):
        f = RelativeDepthMap(values=np.full((4, 4), 0.5))
        out = apply_calibration(f, DisparityCalibration(alpha=2.0, beta=-1.0))
        np.testing.assert_array_equal(out.values, np.zeros((4, 4)))

    def test_affine_inverse_recovers_gt(self):
        rng = np.random.default_rng(0)
        d_gt = rng.uniform(-2, 2, (8, 8))
        f = RelativeDepthMap(values=2.0 * d_gt + 3.0)
        out = apply_calibration(f, DisparityCalibration(alpha=0.5, beta=-1.5))
        np.testing.assert_allclose(out.values, d_gt, atol=1e-12)

    def test_bound_exceeded(self):
        f = RelativeDepthMap(values=np.full((2, 2), 5.0))
        with pytest.raises(ValueError, match="beyond"):
            apply_calibration(f, DisparityCalibration(alpha=2.0, beta=0.0))

    def test_zero_alpha_rejected(self):
        with pytest.raises(ValueError):
            DisparityCalibration(alpha=0.0, beta=0.0)


class TestCalibrate:
    def setup_method(self):
        rng = np.random.default_rng(1)
        self.d_gt = rng.uniform(-2, 2, (16, 16))

    def test_exact_depth_gives_identity(self):
        c = calibrate(RelativeDepthMap(values=self.d_gt), slope_field_from(self.d_gt))
        assert abs(c.alpha - 1.0) < 1e-9
        assert abs(c.beta) < 1e-9
        assert c.residual < 1e-9

    def test_affine_depth_inverted(self):
        f = RelativeDepthMap(values=2.0 * self.d_gt + 3.0)
        c = calibrate(f, slope_field_from(self.d_gt))
        assert abs(c.alpha - 0.5) < 1e-9
        assert abs(c.beta + 1.5) < 1e-9

    def test_round_trip_reproduces_gt(self):
        f = RelativeDepthMap(values=-0.7 * self.d_gt + 0.3)
        c = calibrate(f, slope_field_from(self.d_gt))
        out = apply_calibration(f, c)
        np.testing.assert_allclose(out.values, self.d_gt, atol=1e-9)

    def test_noisy_depth_monte_carlo(self):
        # mean over 100 trials: attenuation stays within 5% and residual ~ sigma
        rng = np.random.default_rng(2)
        alphas, resids = [], []
        for _ in range(100):
            noise = rng.normal(0, 0.1, self.d_gt.shape)
            f = RelativeDepthMap(values=self.d_gt + noise)
            c = calibrate(f, slope_field_from(self.d_gt))
            alphas.append(c.alpha)
            resids.append(c.residual)
        assert abs(np.mean(alphas) - 1.0) <= 0.05
        assert abs(np.mean(resids) - 0.1) <= 0.03

    def test_zero_coherence_pixels_never_matter(self):
        coher = np.ones_like(self.d_gt)
        coher[:4] = 0.0
        corrupted = np.array(self.d_gt)
        corrupted[:4] = 1e6  # poison masked-out pixels
        c1 = calibrate(RelativeDepthMap(values=corrupted), slope_field_from(self.d_gt, coher))
        clean = np.array(self.d_gt)
        clean[:4] = -1e6
        c2 = calibrate(RelativeDepthMap(values=clean), slope_field_from(self.d_gt, coher))
        assert c1.alpha == c2.alpha and c1.beta == c2.beta

    def test_constant_depth_rank_deficient(self):
        f = RelativeDepthMap(values=np.full_like(self.d_gt, 2.0))
        with pytest.raises(CalibrationError):
            calibrate(f, slope_field_from(self.d_gt))

    def test_too_few_confident_pixels(self):
        coher = np.zeros_like(self.d_gt)
        coher[0, 0] = 1.0
        with pytest.raises(CalibrationError):
            calibrate(RelativeDepthMap(values=self.d_gt), slope_field_from(self.d_gt, coher))
