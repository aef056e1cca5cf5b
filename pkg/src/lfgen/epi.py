"""Epipolar-plane-image extraction, forward synthesis, and slope analysis.

An EPI is an A x S slice of the light field (angular rows, spatial
columns). Scene points trace straight lines whose slope in pixels/view
equals their disparity; the forward synthesizer here is the brute-force
oracle that the attention renderer is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import LightField4D
from .imutil import luma

# Defaults for the structure-tensor scales; no canonical values exist,
# these were picked for stable slope recovery on value-noise textures.
SIGMA_GRAD = 0.8
SIGMA_SMOOTH = 1.6

Axis = Literal["horizontal", "vertical"]


@dataclass(frozen=True)
class Epi:
    """A x S grid of RGB with the axis it was sliced along."""

    pixels: np.ndarray
    axis: Axis = "horizontal"

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("EPI must be A x S x 3 with A,S >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class HoleMask:
    """A x S booleans; true marks targets no source ray reached."""

    bits: np.ndarray


@dataclass(frozen=True)
class StructureTensorField:
    """Per-pixel symmetric 2x2 tensors over (spatial, angular) gradients."""

    Jxx: np.ndarray
    Jxu: np.ndarray
    Juu: np.ndarray


@dataclass(frozen=True)
class SlopeField:
    """Per-pixel EPI line slope (pixels/view) with coherence confidence in [0,1]."""

    slope: np.ndarray
    coherence: np.ndarray


@dataclass(frozen=True)
class CorrespondenceSet:
    """(x_i, u_i) pairs tracing one ray across an angular range."""

    entries: tuple


def correspondence_set(x: float, u: float, d: float, angular_range) -> CorrespondenceSet:
    """Positions x_i = x + d*(u_i - u) of the ray's line at each u_i in range."""
    if not all(np.isfinite(val) for val in (x, u, d)):
        raise ValueError("non-finite correspondence inputs")
    entries = tuple((x + d * (u_i - u), u_i) for u_i in angular_range)
    return CorrespondenceSet(entries=entries)


def extract_epi(lf: LightField4D, fixed_spatial: int, fixed_angular: int, axis: Axis = "horizontal") -> Epi:
    """Slice the light field at one spatial row/column and one angular row/column.

    Horizontal: Epi[a][s] = views[fixed_angular][a].pixels[fixed_spatial][s]
    (angular axis u, spatial axis x). Vertical is the symmetric slice.
    """
    g = lf.geometry
    if axis == "horizontal":
        if not (0 <= fixed_angular < g.V) or not (0 <= fixed_spatial < g.H):
            raise IndexError("EPI slice index out of range")
        rows = [lf.views[fixed_angular][a].pixels[fixed_spatial, :, :] for a in range(g.U)]
    elif axis == "vertical":
        if not (0 <= fixed_angular < g.U) or not (0 <= fixed_spatial < g.W):
            raise IndexError("EPI slice index out of range")
        rows = [lf.views[a][fixed_angular].pixels[:, fixed_spatial, :] for a in range(g.V)]
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return Epi(pixels=np.stack(rows, axis=0), axis=axis)


def sample_subpixel(row: np.ndarray, x: float | np.ndarray, clamp: bool = False) -> np.ndarray:
    """Linearly interpolate a row of samples at fractional position(s) x.

    Exact at integer x. Out-of-range positions raise unless clamp=True.
    Works for (S,), (S, C) rows and vectorized x.
    """
    row = np.asarray(row)
    x = np.asarray(x, dtype=np.float64)
    S = row.shape[0]
    if clamp:
        x = np.clip(x, 0.0, S - 1.0)
    elif np.any(x < 0.0) or np.any(x > S - 1.0):
        raise ValueError(f"sample position outside [0, {S - 1}]")
    i0 = np.floor(x).astype(np.int64)
    i0 = np.minimum(i0, S - 2) if S > 1 else np.zeros_like(i0)
    frac = x - i0
    if row.ndim > 1:
        frac = frac[..., None]
    return (1.0 - frac) * row[i0] + frac * row[i0 + 1]


def synthesize_epi(row: np.ndarray, disp: np.ndarray, A: int, u0: int) -> tuple[Epi, HoleMask]:
    """Forward-warp one spatial row into a full EPI using per-pixel disparity.

    Each source pixel x lands at x + disp[x]*(u - u0) in angular row u.
    A target pixel takes the candidate within 0.5 px that has the largest
    disparity (nearest surface occludes); its color is resampled from the
    source row at the winner's line pre-image. Targets with no candidate
    are holes. Row u0 reproduces the input bit-exactly.
    """
    row = np.asarray(row, dtype=np.float64)
    disp = np.asarray(disp, dtype=np.float64)
    if row.shape[0] != disp.shape[0]:
        raise ValueError("row and disparity length mismatch")
    if not (0 <= u0 < A):
        raise ValueError("source row index outside angular range")
    S = row.shape[0]
    xs = np.arange(S, dtype=np.float64)
    pixels = np.zeros((A, S, 3))
    holes = np.ones((A, S), dtype=bool)

    for u in range(A):
        if u == u0:
            pixels[u] = row
            holes[u] = False
            continue
        du = float(u - u0)
        landing = xs + disp * du
        # winner per target: max disparity among sources landing within 0.5 px
        best_disp = np.full(S, -np.inf)
        best_src = np.full(S, -1, dtype=np.int64)
        lo = np.ceil(landing - 0.5).astype(np.int64)
        hi = np.floor(landing + 0.5).astype(np.int64)
        for src in range(S):
            a, b = lo[src], hi[src]
            if b < 0 or a > S - 1:
                continue
            a, b = max(a, 0), min(b, S - 1)
            seg = slice(a, b + 1)
            take = disp[src] > best_disp[seg]
            best_disp[seg] = np.where(take, disp[src], best_disp[seg])
            best_src[seg] = np.where(take, src, best_src[seg])
        hit = best_src >= 0
        holes[u] = ~hit
        if np.any(hit):
            # resample on the winner's line through the target pixel
            pre = xs[hit] - best_disp[hit] * du
            pixels[u][hit] = sample_subpixel(row, pre, clamp=True)
    return Epi(pixels=pixels), HoleMask(bits=holes)


def structure_tensor(
    e: Epi,
    sigma_grad: float = SIGMA_GRAD,
    sigma_smooth: float = SIGMA_SMOOTH,
    shear: int = 0,
) -> StructureTensorField:
    """Smoothed gradient outer products of the EPI's luma channel.

    Central differences (one-sided at borders) after Gaussian pre-smoothing
    with sigma_grad along the spatial axis; smoothing across the short
    angular extent would drag slopes toward zero, so the angular axis is
    left raw. Tensor channels are smoothed with sigma_smooth.

    With shear=s the measurement runs in a frame where each angular row is
    shifted by s pixels per view, which keeps steep EPI lines near-vertical
    where finite differences are accurate; the tensors are mapped back to
    the original frame analytically (a congruence, so PSD is preserved).
    Tensors whose filter support leaves the measured region are zeroed so
    coherence reports no confidence there.
    """
    A, S = e.shape
    if A < 3 or S < 3:
        raise ValueError("EPI too small for structure tensors (need >= 3x3)")
    pivot = (A - 1) // 2
    xs = np.arange(S)
    offsets = shear * (np.arange(A) - pivot)

    if shear == 0:
        sheared = e.pixels
    else:
        sheared = np.empty_like(e.pixels)
        for u in range(A):
            sheared[u] = e.pixels[u, np.clip(xs + offsets[u], 0, S - 1)]

    smooth = gaussian_filter(luma(sheared), sigma=(0.0, sigma_grad), mode="nearest")
    gu, gx = np.gradient(smooth)  # axis 0 = angular u, axis 1 = spatial x
    Jxx = gaussian_filter(gx * gx, sigma=sigma_smooth, mode="nearest")
    Jxu = gaussian_filter(gx * gu, sigma=sigma_smooth, mode="nearest")
    Juu = gaussian_filter(gu * gu, sigma=sigma_smooth, mode="nearest")

    # full spatial filter support: outer smooth + gradient + pre-smooth radii
    rs = int(4.0 * sigma_smooth + 0.5) + 1 + int(4.0 * sigma_grad + 0.5)
    rs = min(rs, (S - 1) // 2)
    ra = min(1 + int(sigma_smooth), (A - 1) // 2)
    support = np.zeros((A, S), dtype=bool)
    for u in range(A):
        lo = max(rs - offsets[u], rs)
        hi = min(S - 1 - rs - offsets[u], S - 1 - rs)
        if ra <= u < A - ra and lo <= hi:
            support[u, lo : hi + 1] = True

    if shear != 0:
        # congruence back to the original frame: v_sheared = (dx - s*du, du)
        Jxu, Juu = Jxu - shear * Jxx, Juu - 2 * shear * Jxu + shear * shear * Jxx
        out = []
        for channel in (Jxx, Jxu, Juu):
            mapped = np.zeros((A, S))
            for u in range(A):
                src = xs - offsets[u]
                ok = (src >= 0) & (src <= S - 1)
                cs = np.clip(src, 0, S - 1)
                mapped[u] = np.where(ok & support[u, cs], channel[u, cs], 0.0)
            out.append(mapped)
        Jxx, Jxu, Juu = out
    else:
        for channel in (Jxx, Jxu, Juu):
            channel[~support] = 0.0
    return StructureTensorField(Jxx=Jxx, Jxu=Jxu, Juu=Juu)


def slopes_from_tensor(st: StructureTensorField) -> SlopeField:
    """Line slope (dx/du) and coherence from each tensor's eigenstructure.

    The eigenvector of the smaller eigenvalue points along the EPI line;
    coherence = ((l1-l2)/(l1+l2))^2 and is 0 where the tensor vanishes.
    """
    trace = st.Jxx + st.Juu
    diff = st.Jxx - st.Juu
    root = np.sqrt(diff * diff + 4.0 * st.Jxu * st.Jxu)
    valid = trace >= 1e-12
    coherence = np.zeros_like(trace)
    np.divide(root, trace, out=coherence, where=valid)
    coherence = np.clip(coherence * coherence, 0.0, 1.0)
    coherence[~valid] = 0.0
    # orientation of the dominant (gradient) eigenvector is theta; the
    # along-line direction is its perpendicular, giving slope = -tan(theta)
    theta = 0.5 * np.arctan2(2.0 * st.Jxu, diff)
    slope = np.clip(-np.tan(theta), -1e6, 1e6)
    slope[~valid] = 0.0
    return SlopeField(slope=slope, coherence=coherence)


def estimate_slopes(
    e: Epi,
    sigma_grad: float = SIGMA_GRAD,
    sigma_smooth: float = SIGMA_SMOOTH,
    max_shear: int = 8,
    refinements: int = 2,
) -> SlopeField:
    """Shear-compensated slope estimation for the full disparity range.

    A first unsheared pass gives rough slopes; each pixel is then
    re-measured in the frame sheared by its rounded slope, iterating while
    the residual disagrees with the chosen shear. Deterministic.
    """
    field = slopes_from_tensor(structure_tensor(e, sigma_grad, sigma_smooth))
    assigned = np.zeros(e.shape, dtype=np.int64)
    for _ in range(refinements):
        want = np.rint(np.clip(field.slope, -max_shear, max_shear)).astype(np.int64)
        want[field.coherence <= 0.0] = 0
        if np.array_equal(want, assigned):
            break
        slope = np.array(field.slope)
        coherence = np.array(field.coherence)
        for s in np.unique(want):
            if s == 0:
                continue
            sel = want == s
            fs = slopes_from_tensor(structure_tensor(e, sigma_grad, sigma_smooth, shear=int(s)))
            slope[sel] = fs.slope[sel]
            coherence[sel] = fs.coherence[sel]
        field = SlopeField(slope=slope, coherence=coherence)
        assigned = want
    return field


def epi_structure_loss(e: Epi, e_gt: Epi, sigma_grad: float = SIGMA_GRAD, sigma_smooth: float = SIGMA_SMOOTH) -> float:
    """Mean L1 distance between the two EPIs' structure-tensor channels."""
    if e.shape != e_gt.shape:
        raise ValueError("EPI shape mismatch")
    ta = structure_tensor(e, sigma_grad, sigma_smooth)
    tb = structure_tensor(e_gt, sigma_grad, sigma_smooth)
    stacked_a = np.stack([ta.Jxx, ta.Jxu, ta.Juu])
    stacked_b = np.stack([tb.Jxx, tb.Jxu, tb.Juu])
    return float(np.mean(np.abs(stacked_a - stacked_b)))
