"""Ray-space rendering: source-ray bookkeeping, nearest-candidate selection,
blending-weight prediction (analytic and learned), and whole-view rendering.

Selection and weighting operate on reprojected slab coordinates: a source
pixel at (x, y) with disparity (dx, dy) recorded at view (v_s, u_s) lands at
(x + dx * (u_t - u_s), y + dy * (v_t - v_s)) in target view (v_t, u_t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .attention import (
    AttentionConfig,
    RayTransformerParams,
    forward as attention_forward,
)
from .core import (
    GridGeometry,
    LightSlabCoord,
    PluckerRay,
    SubApertureImage,
    grid_rays,
    slab_rays,
)

Provenance = Literal["input", "inpainted"]

# extra candidates fetched beyond k so distance ties can be re-ranked exactly
_TIE_WINDOW = 24


@dataclass(frozen=True)
class SourceRayRecord:
    """One stored light flow: ray, slab coordinate, color, and disparity."""

    ray: PluckerRay
    slab: LightSlabCoord
    color: np.ndarray
    disp_x: float
    disp_y: float
    provenance: Provenance = "input"
    generation: int = 0


class SourceRaySet:
    """Immutable record collection with column arrays for vectorized access.

    Column layout: x, y, u, v, disp_x, disp_y (N,), colors (N, 3),
    rays (N, 6). Extending returns a new set; indices are stable.
    """

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        u: np.ndarray,
        v: np.ndarray,
        disp_x: np.ndarray,
        disp_y: np.ndarray,
        colors: np.ndarray,
        rays: np.ndarray,
        provenance: tuple,
        generation: np.ndarray,
    ):
        n = len(x)
        for arr in (y, u, v, disp_x, disp_y, generation):
            if len(arr) != n:
                raise ValueError("column length mismatch")
        if colors.shape != (n, 3) or rays.shape != (n, 6):
            raise ValueError("colors/rays shape mismatch")
        if len(set(zip(x.tolist(), y.tolist(), u.tolist(), v.tolist(), provenance))) != n:
            raise ValueError("duplicate (slab, provenance) records")
        self.x, self.y, self.u, self.v = x, y, u, v
        self.disp_x, self.disp_y = disp_x, disp_y
        self.colors = colors
        self.rays = rays
        self.provenance = provenance
        self.generation = generation

    def __len__(self) -> int:
        return len(self.x)

    @property
    def tie_disparity(self) -> np.ndarray:
        """Scalar depth proxy used for occlusion-order tie breaking."""
        return 0.5 * (self.disp_x + self.disp_y)

    def record(self, i: int) -> SourceRayRecord:
        return SourceRayRecord(
            ray=PluckerRay(d=self.rays[i, :3], m=self.rays[i, 3:]),
            slab=LightSlabCoord(x=self.x[i], y=self.y[i], u=self.u[i], v=self.v[i]),
            color=self.colors[i],
            disp_x=float(self.disp_x[i]),
            disp_y=float(self.disp_y[i]),
            provenance=self.provenance[i],
            generation=int(self.generation[i]),
        )

    def subset(self, idx: np.ndarray) -> "SourceRaySet":
        idx = np.asarray(idx)
        return SourceRaySet(
            x=self.x[idx],
            y=self.y[idx],
            u=self.u[idx],
            v=self.v[idx],
            disp_x=self.disp_x[idx],
            disp_y=self.disp_y[idx],
            colors=self.colors[idx],
            rays=self.rays[idx],
            provenance=tuple(self.provenance[i] for i in idx),
            generation=self.generation[idx],
        )

    def extended(
        self,
        x: np.ndarray,
        y: np.ndarray,
        view_pose: tuple,
        disp_x: np.ndarray,
        disp_y: np.ndarray,
        colors: np.ndarray,
        rays: np.ndarray,
        generation: int,
    ) -> "SourceRaySet":
        v, u = view_pose
        n = len(x)
        return SourceRaySet(
            x=np.concatenate([self.x, x]),
            y=np.concatenate([self.y, y]),
            u=np.concatenate([self.u, np.full(n, float(u))]),
            v=np.concatenate([self.v, np.full(n, float(v))]),
            disp_x=np.concatenate([self.disp_x, disp_x]),
            disp_y=np.concatenate([self.disp_y, disp_y]),
            colors=np.concatenate([self.colors, colors]),
            rays=np.concatenate([self.rays, rays]),
            provenance=self.provenance + ("inpainted",) * n,
            generation=np.concatenate([self.generation, np.full(n, generation, dtype=np.int64)]),
        )


def source_set_from_view(
    img: SubApertureImage, disparity: np.ndarray, g: GridGeometry, disparity_y: np.ndarray | None = None
) -> SourceRaySet:
    """One record per pixel of a stored view; disparity is shared across both
    angular axes unless a separate vertical map is given."""
    v, u = img.angular_index
    H, W = img.shape
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    xs, ys = xx.ravel(), yy.ravel()
    dx = np.asarray(disparity, dtype=np.float64).ravel()
    dy = dx if disparity_y is None else np.asarray(disparity_y, dtype=np.float64).ravel()
    rays = grid_rays(g, v, u, ys, xs)
    return SourceRaySet(
        x=xs,
        y=ys,
        u=np.full(xs.shape, float(u)),
        v=np.full(xs.shape, float(v)),
        disp_x=dx,
        disp_y=dy,
        colors=img.pixels.reshape(-1, 3).astype(np.float64),
        rays=rays,
        provenance=("input",) * len(xs),
        generation=np.zeros(len(xs), dtype=np.int64),
    )


@dataclass(frozen=True)
class WeightVector:
    """Simplex weights over a selected source subset."""

    weights: np.ndarray
    subset: SourceRaySet | None = None

    def __post_init__(self):
        w = self.weights
        if (w < -1e-12).any() or abs(float(w.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must be a simplex")


def embed_ray(tgt: PluckerRay, src: SourceRayRecord) -> np.ndarray:
    """Fixed 14-feature layout: [tgt d,m | src d,m | disp_x | disp_y]."""
    return np.concatenate(
        [tgt.d, tgt.m, src.ray.d, src.ray.m, [src.disp_x], [src.disp_y]]
    )


def reprojection_distance(
    tgt: LightSlabCoord, s: SourceRaySet, idx: np.ndarray | None = None
) -> np.ndarray:
    """L1 distance between each record's landing point and the target pixel."""
    if idx is None:
        idx = np.arange(len(s))
    xr = s.x[idx] + s.disp_x[idx] * (tgt.u - s.u[idx])
    yr = s.y[idx] + s.disp_y[idx] * (tgt.v - s.v[idx])
    return np.abs(xr - tgt.x) + np.abs(yr - tgt.y)


def select_k_nearest(tgt: LightSlabCoord, s: SourceRaySet, k: int) -> SourceRaySet:
    """The k records with smallest reprojection distance; ties prefer larger
    disparity, then smaller record index. Returns all records when |s| < k."""
    if len(s) == 0:
        raise ValueError("empty source set")
    d = reprojection_distance(tgt, s)
    order = np.lexsort((np.arange(len(s)), -s.tie_disparity, d))
    return s.subset(order[: min(k, len(s))])


def _select_k_batch(
    s: SourceRaySet, view: tuple, targets_x: np.ndarray, targets_y: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized selection for one target view.

    Returns (indices (P, k'), distances (P, k')) ranked like select_k_nearest,
    where k' = min(k, |s|). A KD-tree proposes candidates; rows whose
    distance ties could extend past the candidate window fall back to exact
    brute force so the ranking matches the scalar op everywhere.
    """
    v_t, u_t = view
    n = len(s)
    k_eff = min(k, n)
    xr = s.x + s.disp_x * (u_t - s.u)
    yr = s.y + s.disp_y * (v_t - s.v)
    tie = -s.tie_disparity
    P = len(targets_x)

    kq = min(n, k + _TIE_WINDOW)
    tree = cKDTree(np.stack([xr, yr], axis=1))
    _, idx = tree.query(np.stack([targets_x, targets_y], axis=1), k=kq, p=1)
    if kq == 1:
        idx = idx[:, None]
    dist = np.abs(xr[idx] - targets_x[:, None]) + np.abs(yr[idx] - targets_y[:, None])

    # stable multi-key sort: index, then larger disparity, then distance
    p1 = np.argsort(idx, axis=1, kind="stable")
    idx = np.take_along_axis(idx, p1, axis=1)
    dist = np.take_along_axis(dist, p1, axis=1)
    p2 = np.argsort(tie[idx], axis=1, kind="stable")
    idx = np.take_along_axis(idx, p2, axis=1)
    dist = np.take_along_axis(dist, p2, axis=1)
    p3 = np.argsort(dist, axis=1, kind="stable")
    idx = np.take_along_axis(idx, p3, axis=1)
    dist = np.take_along_axis(dist, p3, axis=1)

    sel_idx = idx[:, :k_eff].copy()
    sel_dist = dist[:, :k_eff].copy()

    if kq < n:
        # ties at the window edge may hide better-ranked records outside it
        risky = np.where(dist[:, k_eff - 1] >= dist[:, -1])[0]
        for r in risky:
            d_all = np.abs(xr - targets_x[r]) + np.abs(yr - targets_y[r])
            order = np.lexsort((np.arange(n), tie, d_all))[:k_eff]
            sel_idx[r] = order
            sel_dist[r] = d_all[order]
    return sel_idx, sel_dist


def entropy(w: WeightVector | np.ndarray) -> float:
    """Natural-log entropy of simplex weights; 0*log(0) counts as 0."""
    arr = w.weights if isinstance(w, WeightVector) else np.asarray(w)
    return float(entropy_of(arr[None])[0])


def entropy_of(w: np.ndarray) -> np.ndarray:
    """Row-wise entropy of (..., k) weight arrays."""
    safe = np.where(w > 0.0, w, 1.0)
    return -(np.where(w > 0.0, w * np.log(safe), 0.0)).sum(axis=-1)


@dataclass(frozen=True)
class AnalyticWeighter:
    """Closed-form weighting: Gaussian in reprojection distance with a bias
    toward nearer surfaces. The oracle counterpart of the learned network.

    With `saturate` set, distances are clamped to it before squaring: when no
    candidate lands within reach every candidate scores alike, so the weight
    entropy rises exactly where coverage is missing. Without it the quadratic
    concentrates harder the farther the candidates sit, which anti-correlates
    entropy with occlusion.
    """

    sigma: float = 0.5
    gamma: float = 1.0
    saturate: float | None = None

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.saturate is not None and self.saturate <= 0:
            raise ValueError("saturation distance must be positive")

    def scores(self, dist: np.ndarray, disp: np.ndarray) -> np.ndarray:
        if self.saturate is not None:
            dist = np.minimum(dist, self.saturate)
        return -(dist * dist) / (2.0 * self.sigma * self.sigma) + self.gamma * disp


@dataclass(frozen=True)
class LearnedWeighter:
    """Attention-network weighting from checkpointed parameters."""

    params: RayTransformerParams


Weighter = AnalyticWeighter | LearnedWeighter


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sort(e, axis=-1).sum(axis=-1, keepdims=True)


def analytic_weights(
    tgt: LightSlabCoord,
    subset: SourceRaySet,
    sigma: float = 0.5,
    gamma: float = 1.0,
    saturate: float | None = None,
) -> WeightVector:
    """Softmax over -(reprojection distance)^2 / (2 sigma^2) + gamma * disparity."""
    if len(subset) == 0:
        raise ValueError("empty subset")
    dist = reprojection_distance(tgt, subset)
    scores = AnalyticWeighter(sigma, gamma, saturate).scores(dist, subset.tie_disparity)
    return WeightVector(weights=_softmax_rows(scores[None])[0], subset=subset)


def transformer_weights(
    params: RayTransformerParams, cfg: AttentionConfig, embeddings: Sequence[np.ndarray]
) -> WeightVector:
    """Attention weights for one candidate set of ray embeddings."""
    emb = np.stack(list(embeddings), axis=0)
    if emb.ndim != 2:
        raise ValueError("expected a list of 14-vectors")
    w, _ = attention_forward(params, emb[None])
    return WeightVector(weights=w[0])


def render_ray(w: WeightVector) -> np.ndarray:
    """Blend the subset's colors with the weight vector."""
    if w.subset is None:
        raise ValueError("weight vector carries no source records")
    return w.weights @ w.subset.colors


@dataclass(frozen=True)
class RenderConfig:
    """Rendering knobs shared by both weighters."""

    k_sources: int = 5
    chunk: int = 4096
    # optional per-source spatial offsets for view-dependent warps
    warp_offset_x: np.ndarray | None = field(default=None, repr=False)
    warp_offset_y: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class ViewRender:
    """Full per-view render product."""

    image: SubApertureImage
    entropy: np.ndarray
    disparity_x: np.ndarray
    disparity_y: np.ndarray


def render_view(
    s: SourceRaySet,
    target_view: tuple,
    g: GridGeometry,
    weighter: Weighter,
    cfg: RenderConfig = RenderConfig(),
) -> tuple[SubApertureImage, np.ndarray]:
    """Render one grid view from the source set.

    Per pixel: build the target ray, select the k nearest reprojected
    sources, predict weights, and blend. Returns the image and the per-pixel
    blending-weight entropy.
    """
    out = render_view_full(s, target_view, g, weighter, cfg)
    return out.image, out.entropy


def render_view_full(
    s: SourceRaySet,
    target_view: tuple,
    g: GridGeometry,
    weighter: Weighter,
    cfg: RenderConfig = RenderConfig(),
) -> ViewRender:
    if len(s) == 0:
        raise ValueError("empty source set")
    v_t, u_t = target_view
    H, W = g.H, g.W
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    tx, ty = xx.ravel(), yy.ravel()

    src = s
    if cfg.warp_offset_x is not None or cfg.warp_offset_y is not None:
        src = _warped_copy(s, cfg.warp_offset_x, cfg.warp_offset_y, g)

    idx, dist = _select_k_batch(src, target_view, tx, ty, cfg.k_sources)
    P, k_eff = idx.shape

    if isinstance(weighter, AnalyticWeighter):
        weights = _softmax_rows(weighter.scores(dist, src.tie_disparity[idx]))
    else:
        params = weighter.params
        if cfg.k_sources > params.config.k_sources:
            raise ValueError("render k_sources exceeds the checkpoint's set size")
        tgt_rays = grid_rays(g, v_t, u_t, ty, tx)
        weights = np.empty((P, k_eff))
        emb = np.empty((P, k_eff, 14))
        emb[:, :, :6] = tgt_rays[:, None, :]
        emb[:, :, 6:12] = src.rays[idx]
        emb[:, :, 12] = src.disp_x[idx]
        emb[:, :, 13] = src.disp_y[idx]
        for lo in range(0, P, cfg.chunk):
            hi = min(lo + cfg.chunk, P)
            weights[lo:hi], _ = attention_forward(params, emb[lo:hi])

    colors = np.einsum("pk,pkc->pc", weights, src.colors[idx])
    ent = entropy_of(weights)
    ddx = np.einsum("pk,pk->p", weights, src.disp_x[idx])
    ddy = np.einsum("pk,pk->p", weights, src.disp_y[idx])
    img = SubApertureImage(
        pixels=np.clip(colors.reshape(H, W, 3), 0.0, 1.0),
        angular_index=(int(v_t), int(u_t)),
    )
    return ViewRender(
        image=img,
        entropy=ent.reshape(H, W),
        disparity_x=ddx.reshape(H, W),
        disparity_y=ddy.reshape(H, W),
    )


def _warped_copy(
    s: SourceRaySet, off_x: np.ndarray | None, off_y: np.ndarray | None, g: GridGeometry
) -> SourceRaySet:
    """Source set with spatial slab coordinates displaced per record.

    Rays are rebuilt from the displaced positions so embeddings see the
    warped geometry, not just the selection.
    """
    any_offset = (off_x is not None and np.any(off_x != 0.0)) or (
        off_y is not None and np.any(off_y != 0.0)
    )
    if not any_offset:
        return s
    x = s.x + (0.0 if off_x is None else off_x)
    y = s.y + (0.0 if off_y is None else off_y)
    return SourceRaySet(
        x=x,
        y=y,
        u=s.u,
        v=s.v,
        disp_x=s.disp_x,
        disp_y=s.disp_y,
        colors=s.colors,
        rays=slab_rays(g, s.v, s.u, y, x),
        provenance=s.provenance,
        generation=s.generation,
    )
