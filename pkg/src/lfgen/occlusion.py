"""Entropy-thresholded occlusion handling and the iterative generation loop.

Novel views are produced farthest-from-center first; each view's
high-entropy pixels are inpainted and recast as new source rays so later
(nearer) views see consistent content instead of re-hallucinating it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .core import GridGeometry, LightField4D, SubApertureImage, grid_rays
from .renderer import (
    RenderConfig,
    SourceRaySet,
    Weighter,
    render_view_full,
    source_set_from_view,
)


@dataclass(frozen=True)
class OcclusionMask:
    """H x W booleans, true = occluded (needs inpainting)."""

    bits: np.ndarray


@dataclass(frozen=True)
class OcclusionConfig:
    """Entropy threshold: absolute value k, or a ratio of the ln(N) maximum."""

    mode: str = "absolute"  # "absolute" | "relative"
    k: float = 2.3
    ratio: float = 0.8

    def __post_init__(self):
        if self.mode not in ("absolute", "relative"):
            raise ValueError("mode must be absolute or relative")
        if self.k <= 0 or self.ratio <= 0:
            raise ValueError("thresholds must be positive")

    @classmethod
    def default_for(cls, n_sources: int) -> "OcclusionConfig":
        # the absolute threshold 2.3 ~ ln 10 only bites when the weight set
        # is large enough to reach it; small sets fall back to a fraction of
        # their ln N entropy ceiling
        if n_sources >= 10:
            return cls(mode="absolute", k=2.3)
        return cls(mode="relative", ratio=0.8)

    def threshold(self, n_sources: int | None = None) -> float:
        if self.mode == "absolute":
            return self.k
        if n_sources is None:
            raise ValueError("relative mode needs the source count")
        return self.ratio * float(np.log(n_sources))


def detect_mask(ent: np.ndarray, cfg: OcclusionConfig, n_sources: int | None = None) -> OcclusionMask:
    """Flag pixels whose blending-weight entropy reaches the threshold."""
    return OcclusionMask(bits=np.asarray(ent) >= cfg.threshold(n_sources))


class Inpainter(Protocol):
    """fill(image, mask) -> image; must not touch unmasked pixels."""

    def fill(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


class NaiveInpainter:
    """Nearest-valid dilation followed by a box blur over the filled pixels."""

    def fill(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return naive_inpaint(image, mask)


class ConstantInpainter:
    """Fills with a fixed color; useful for tracing recast content in tests."""

    def __init__(self, color):
        self.color = np.asarray(color, dtype=np.float64)

    def fill(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        out = image.copy()
        out[mask] = self.color
        return out


_INPAINTERS: dict[str, Callable[[], Inpainter]] = {"naive": NaiveInpainter}


def register_inpainter(name: str, factory: Callable[[], Inpainter]) -> None:
    _INPAINTERS[name] = factory


def make_inpainter(name: str) -> Inpainter:
    if name not in _INPAINTERS:
        raise KeyError(f"unknown inpainter {name!r}; registered: {sorted(_INPAINTERS)}")
    return _INPAINTERS[name]()


def _dilate_fill(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Iteratively assign masked pixels the mean of valid 8-neighbors."""
    H, W = mask.shape
    out = values.copy()
    valid = ~mask.copy()
    if valid.all():
        return out
    if not valid.any():
        raise ValueError("cannot inpaint a fully masked image")
    acc = np.zeros_like(out)
    while not valid.all():
        acc[:] = 0.0
        cnt = np.zeros((H, W))
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                ys = slice(max(dy, 0), H + min(dy, 0))
                yd = slice(max(-dy, 0), H + min(-dy, 0))
                xs = slice(max(dx, 0), W + min(dx, 0))
                xd = slice(max(-dx, 0), W + min(-dx, 0))
                vsrc = valid[ys, xs]
                acc[yd, xd] += np.where(vsrc[..., None] if out.ndim == 3 else vsrc, out[ys, xs], 0.0)
                cnt[yd, xd] += vsrc
        frontier = (~valid) & (cnt > 0)
        if not frontier.any():
            raise RuntimeError("fill frontier stalled")
        divisor = cnt[frontier][..., None] if out.ndim == 3 else cnt[frontier]
        out[frontier] = acc[frontier] / divisor
        valid |= frontier
    return out


def naive_inpaint(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Default hole fill: nearest-valid dilation, then a 3x3 box blur applied
    only to the filled pixels. Unmasked pixels pass through bit-exact."""
    if image.shape[:2] != mask.shape:
        raise ValueError("mask does not fit image")
    if not mask.any():
        return image.copy()
    filled = _dilate_fill(image, mask)
    H, W = mask.shape
    pad = np.pad(filled, ((1, 1), (1, 1), (0, 0)) if filled.ndim == 3 else 1, mode="edge")
    if filled.ndim == 3:
        windows = np.lib.stride_tricks.sliding_window_view(pad, (3, 3), axis=(0, 1))
        blurred = windows.mean(axis=(-2, -1))
    else:
        windows = np.lib.stride_tricks.sliding_window_view(pad, (3, 3))
        blurred = windows.mean(axis=(-2, -1))
    out = filled
    out[mask] = blurred[mask]
    return out


def fill_disparity_background(disp: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked disparity with the minimum valid neighbor, iteratively.

    Disocclusions expose background, so the smallest nearby disparity is the
    consistent choice for recast content.
    """
    H, W = mask.shape
    out = disp.copy()
    valid = ~mask.copy()
    if not valid.any():
        raise ValueError("cannot fill a fully masked disparity map")
    while not valid.all():
        best = np.full((H, W), np.inf)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                ys = slice(max(dy, 0), H + min(dy, 0))
                yd = slice(max(-dy, 0), H + min(-dy, 0))
                xs = slice(max(dx, 0), W + min(dx, 0))
                xd = slice(max(-dx, 0), W + min(-dx, 0))
                cand = np.where(valid[ys, xs], out[ys, xs], np.inf)
                best[yd, xd] = np.minimum(best[yd, xd], cand)
        frontier = (~valid) & np.isfinite(best)
        if not frontier.any():
            raise RuntimeError("fill frontier stalled")
        out[frontier] = best[frontier]
        valid |= frontier
    return out


def update_source_set(
    s: SourceRaySet,
    view: SubApertureImage,
    view_pose: tuple,
    disp: np.ndarray,
    mask: OcclusionMask,
    generation: int,
    g: GridGeometry,
) -> SourceRaySet:
    """Add one inpainted record per masked pixel; existing records are kept.

    Pixels that already carry an inpainted record from an earlier pass are
    skipped, keeping (slab, provenance) unique.
    """
    bits = mask.bits
    if view.pixels.shape[:2] != bits.shape or disp.shape != bits.shape:
        raise ValueError("view/disparity/mask shapes differ")
    if not bits.any():
        return s
    ys, xs = np.nonzero(bits)
    v, u = view_pose
    existing = {
        (s.x[i], s.y[i], s.u[i], s.v[i])
        for i in range(len(s))
        if s.provenance[i] == "inpainted"
    }
    if existing:
        keep = np.array(
            [(float(x), float(y), float(u), float(v)) not in existing for y, x in zip(ys, xs)]
        )
        ys, xs = ys[keep], xs[keep]
        if len(ys) == 0:
            return s
    xs_f = xs.astype(np.float64)
    ys_f = ys.astype(np.float64)
    d = disp[ys, xs].astype(np.float64)
    return s.extended(
        x=xs_f,
        y=ys_f,
        view_pose=view_pose,
        disp_x=d,
        disp_y=d.copy(),
        colors=view.pixels[ys, xs].astype(np.float64),
        rays=grid_rays(g, v, u, ys_f, xs_f),
        generation=generation,
    )


def plan_view_order(g: GridGeometry) -> list[tuple[int, int]]:
    """Grid views sorted by decreasing distance from the center, center
    excluded; ties resolved by ascending (v, u)."""
    v_c, u_c = g.center
    views = []
    for v in range(g.V):
        for u in range(g.U):
            dist = float(np.hypot(v - v_c, u - u_c))
            if dist == 0.0:
                continue
            views.append((-dist, v, u))
    views.sort()
    return [(v, u) for _, v, u in views]


@dataclass(frozen=True)
class GenerateConfig:
    """Pipeline knobs for the iterative light-field generation."""

    render: RenderConfig = field(default_factory=RenderConfig)
    occlusion: OcclusionConfig | None = None  # None -> default for the weighter
    passes: int = 1
    max_mask_fraction: float = 0.999
    # optional externally supplied disparity for inpainted views, keyed by pose
    novel_view_disparity: Callable[[tuple], np.ndarray] | None = None
    # called before each first-pass view render with (pose, current sources)
    observer: Callable[[tuple, SourceRaySet], None] | None = None


# entropy of the analytic weighter is compressed relative to a trained
# network's, so the pipeline trips at a lower fraction of the ln(N) ceiling
ANALYTIC_ENTROPY_RATIO = 0.45


def default_occlusion_config(weighter: Weighter, k_sources: int) -> OcclusionConfig:
    from .renderer import AnalyticWeighter

    if isinstance(weighter, AnalyticWeighter):
        return OcclusionConfig(mode="relative", ratio=ANALYTIC_ENTROPY_RATIO)
    return OcclusionConfig.default_for(k_sources)


@dataclass(frozen=True)
class GenerationResult:
    """Everything the iterative sweep produced."""

    light_field: LightField4D
    masks: list  # OcclusionMask per view, row-major (v, u); first-pass masks
    entropy: np.ndarray  # (V, U, H, W)
    sources: SourceRaySet


def generate_light_field(
    input_view: SubApertureImage,
    disp: np.ndarray,
    g: GridGeometry,
    weighter: Weighter,
    inpainter: Inpainter | None = None,
    cfg: GenerateConfig = GenerateConfig(),
) -> tuple[LightField4D, list]:
    """Grow a full light field from the center view; see generate_light_field_full."""
    result = generate_light_field_full(input_view, disp, g, weighter, inpainter, cfg)
    return result.light_field, result.masks


def generate_light_field_full(
    input_view: SubApertureImage,
    disp: np.ndarray,
    g: GridGeometry,
    weighter: Weighter,
    inpainter: Inpainter | None = None,
    cfg: GenerateConfig = GenerateConfig(),
) -> GenerationResult:
    """Grow a full light field from the center view.

    For each view, farthest first: render from the current source set,
    detect high-entropy occlusions, inpaint them, and recast the filled
    pixels as new source rays so later views reuse them. The center view is
    stored verbatim. With passes > 1 the sweep repeats, re-rendering every
    view against the final source set; reported masks are first-pass.
    """
    v_c, u_c = g.center
    if input_view.angular_index != (int(v_c), int(u_c)):
        raise ValueError("input view must sit at the grid center")
    if inpainter is None:
        inpainter = NaiveInpainter()
    occ_cfg = cfg.occlusion or default_occlusion_config(weighter, cfg.render.k_sources)

    sources = source_set_from_view(input_view, disp, g)
    n_sources = cfg.render.k_sources
    order = plan_view_order(g)

    center_key = (int(v_c), int(u_c))
    images: dict[tuple, SubApertureImage] = {center_key: input_view}
    masks: dict[tuple, OcclusionMask] = {
        center_key: OcclusionMask(bits=np.zeros((g.H, g.W), dtype=bool))
    }
    entropies: dict[tuple, np.ndarray] = {center_key: np.zeros((g.H, g.W))}

    for pass_idx in range(cfg.passes):
        for step, (v, u) in enumerate(order, start=1 + pass_idx * len(order)):
            if cfg.observer is not None and pass_idx == 0:
                cfg.observer((v, u), sources)
            out = render_view_full(sources, (v, u), g, weighter, cfg.render)
            mask = detect_mask(out.entropy, occ_cfg, n_sources)
            if float(mask.bits.mean()) > cfg.max_mask_fraction:
                raise RuntimeError(f"view ({v},{u}) came out fully occluded")
            filled = inpainter.fill(out.image.pixels, mask.bits)
            if not np.array_equal(filled[~mask.bits], out.image.pixels[~mask.bits]):
                raise RuntimeError("inpainter modified unmasked pixels")
            view_img = SubApertureImage(pixels=np.clip(filled, 0.0, 1.0), angular_index=(v, u))
            if mask.bits.any():
                if cfg.novel_view_disparity is not None:
                    view_disp = np.asarray(cfg.novel_view_disparity((v, u)), dtype=np.float64)
                else:
                    view_disp = fill_disparity_background(
                        0.5 * (out.disparity_x + out.disparity_y), mask.bits
                    )
                sources = update_source_set(
                    sources, view_img, (v, u), view_disp, mask, step, g
                )
            images[(v, u)] = view_img
            if pass_idx == 0:
                masks[(v, u)] = mask
                entropies[(v, u)] = out.entropy

    views = tuple(tuple(images[(v, u)] for u in range(g.U)) for v in range(g.V))
    lf = LightField4D(views=views, geometry=g)
    mask_list = [masks[(v, u)] for v in range(g.V) for u in range(g.U)]
    lf_entropy = np.stack(
        [entropies[(v, u)] for v in range(g.V) for u in range(g.U)]
    ).reshape(g.V, g.U, g.H, g.W)
    return GenerationResult(light_field=lf, masks=mask_list, entropy=lf_entropy, sources=sources)


def coverage_holes(s: SourceRaySet, view: tuple, g: GridGeometry) -> np.ndarray:
    """Analytic disocclusion oracle: forward-splat every record into the view
    with a 0.5 px window; true = no record lands there.

    Independent of the attention path; same window semantics as the EPI
    forward synthesizer (half-integer landings credit both neighbors).
    """
    v_t, u_t = view
    xr = s.x + s.disp_x * (u_t - s.u)
    yr = s.y + s.disp_y * (v_t - s.v)
    H, W = g.H, g.W
    covered = np.zeros((H, W), dtype=bool)
    x_lo = np.ceil(xr - 0.5).astype(np.int64)
    x_hi = np.floor(xr + 0.5).astype(np.int64)
    y_lo = np.ceil(yr - 0.5).astype(np.int64)
    y_hi = np.floor(yr + 0.5).astype(np.int64)
    for xi in (x_lo, x_hi):
        for yi in (y_lo, y_hi):
            ok = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
            covered[yi[ok], xi[ok]] = True
    return ~covered
