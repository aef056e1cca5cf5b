"""Relative-depth ingestion and scale/shift calibration to absolute disparity.

Monocular depth arrives only affinely related to true disparity; the
calibration solves for that affine map by weighted least squares against
structure-tensor slopes of a reference EPI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epi import SlopeField

MAX_DISPARITY = 8.0  # beyond this the 0.5 px warp window under-samples lines


class CalibrationError(ValueError):
    """Raised when the confident pixel set cannot constrain (alpha, beta)."""


@dataclass(frozen=True)
class RelativeDepthMap:
    """H x W relative depth values (affine-related to true disparity)."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.isfinite(self.values).all():
            raise ValueError("depth map contains non-finite values")


@dataclass(frozen=True)
class DisparityCalibration:
    """Affine map disparity = alpha * relative + beta, with fit residual."""

    alpha: float
    beta: float
    residual: float = 0.0

    def __post_init__(self):
        if self.alpha == 0.0:
            raise ValueError("alpha must be nonzero")


@dataclass(frozen=True)
class DisparityMap:
    """H x W disparity in pixels per view."""

    values: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("disparity map contains non-finite values")


def apply_calibration(
    f: RelativeDepthMap, c: DisparityCalibration, max_disparity: float = MAX_DISPARITY
) -> DisparityMap:
    """Elementwise alpha * f + beta; rejects results beyond the disparity bound."""
    values = c.alpha * f.values + c.beta
    worst = float(np.abs(values).max()) if values.size else 0.0
    if worst > max_disparity:
        raise ValueError(
            f"calibrated disparity reaches {worst:.3f}, beyond the {max_disparity} bound"
        )
    return DisparityMap(values=values)


def calibrate(
    f: RelativeDepthMap, ref_slopes: SlopeField, min_coherence: float = 0.9
) -> DisparityCalibration:
    """Weighted least squares of reference slopes against relative depth.

    Pixels at or above min_coherence participate, weighted by coherence;
    zero-coherence pixels can never influence the fit. The residual is the
    weighted RMS misfit in pixels/view.
    """
    slope = np.asarray(ref_slopes.slope, dtype=np.float64).ravel()
    coher = np.asarray(ref_slopes.coherence, dtype=np.float64).ravel()
    rel = np.asarray(f.values, dtype=np.float64).ravel()
    if slope.shape != rel.shape:
        raise ValueError("slope field and depth map shapes differ")
    sel = (coher >= min_coherence) & (coher > 0.0)
    if sel.sum() < 2:
        raise CalibrationError("fewer than 2 confident pixels for calibration")
    w = coher[sel]
    x = rel[sel]
    y = slope[sel]
    if np.ptp(x) == 0.0:
        raise CalibrationError("relative depth is constant on the confident set")
    sw = np.sqrt(w)
    design = np.stack([x * sw, sw], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(design, y * sw, rcond=None)
    if rank < 2:
        raise CalibrationError("rank-deficient calibration system")
    alpha, beta = float(coef[0]), float(coef[1])
    if alpha == 0.0:
        raise CalibrationError("degenerate fit: alpha is zero")
    resid = y - (alpha * x + beta)
    rms = float(np.sqrt(np.sum(w * resid * resid) / np.sum(w)))
    return DisparityCalibration(alpha=alpha, beta=beta, residual=rms)
