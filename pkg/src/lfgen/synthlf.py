"""Procedural layered scenes with exact light fields, disparity, and occlusion masks.

Scenes are stacks of frontoparallel textured layers at constant disparity.
Non-background shapes are placed far enough apart that they never occlude
one another in any view, which keeps visibility fully determined by the
center view and makes the EPI round trip analytically exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import GridGeometry, LightField4D, SubApertureImage
from .imutil import sample_bilinear

TextureKind = Literal["value-noise", "stripes", "checker"]
ShapeKind = Literal["rects", "disks"]

MIN_GRADIENT_ENERGY = 1e-5  # rejects flat texture draws (typical draws are >= 2e-4)


@dataclass(frozen=True)
class Layer:
    """Constant-disparity textured plane with a boolean coverage mask."""

    texture: np.ndarray  # H x W x 3 in [0,1]
    disparity: float
    alpha: np.ndarray  # H x W bool

    def __post_init__(self):
        if self.texture.shape[:2] != self.alpha.shape:
            raise ValueError("texture/alpha shape mismatch")


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a seeded scene."""

    layers: int = 2
    height: int = 128
    width: int = 128
    disparity_range: tuple[float, float] = (0.0, 2.0)
    texture: TextureKind = "value-noise"
    shapes: ShapeKind = "rects"
    seed: int = 0
    max_view_offset: int = 4  # shape separation assumes offsets up to this

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("need at least one layer")
        lo, hi = self.disparity_range
        if not (lo <= hi):
            raise ValueError("disparity range must be ordered")


def _value_noise(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    out = np.zeros((H, W, 3))
    for cell, amp in ((16, 0.6), (8, 0.4)):
        gh, gw = H // cell + 2, W // cell + 2
        grid = rng.random((gh, gw, 3))
        ys = np.arange(H) / cell
        xs = np.arange(W) / cell
        yy, xx = np.meshgrid(ys, xs, indexing="ij")
        out += amp * sample_bilinear(grid, yy, xx)
    out -= out.min()
    peak = out.max()
    if peak > 0:
        out /= peak
    return 0.05 + 0.9 * out


def _stripes(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(0.05, 0.15)
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
    base = rng.random(3) * 0.5
    span = 0.4 + 0.5 * rng.random(3)
    return np.clip(base + wave[..., None] * span, 0.0, 1.0)


def _checker(rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    cell = int(rng.integers(6, 14))
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    board = ((yy // cell + xx // cell) % 2).astype(np.float64)
    c0 = rng.random(3) * 0.4 + 0.05
    c1 = rng.random(3) * 0.4 + 0.55
    return board[..., None] * c1 + (1.0 - board[..., None]) * c0


_TEXTURES = {"value-noise": _value_noise, "stripes": _stripes, "checker": _checker}


def _gradient_energy(tex: np.ndarray) -> float:
    gy, gx = np.gradient(tex.mean(axis=2))
    return float(np.mean(gy * gy + gx * gx))


def _draw_texture(rng: np.random.Generator, kind: TextureKind, H: int, W: int) -> np.ndarray:
    make = _TEXTURES[kind]
    for _ in range(16):
        tex = make(rng, H, W)
        if _gradient_energy(tex) >= MIN_GRADIENT_ENERGY:
            return tex
    raise RuntimeError("texture generator kept producing flat content")


def generate_scene(spec: SceneSpec) -> list[Layer]:
    """Seeded layer stack, ordered back to front (ascending disparity).

    The backmost layer covers the full frame; each further layer is a
    single shape whose bounding box, padded by the worst-case parallax,
    avoids every other shape, so shapes only ever occlude the background.
    """
    rng = np.random.default_rng(spec.seed)
    H, W = spec.height, spec.width
    lo, hi = spec.disparity_range
    if spec.layers == 1:
        disps = [lo]
    else:
        disps = list(np.linspace(lo, hi, spec.layers))

    layers = [
        Layer(
            texture=_draw_texture(rng, spec.texture, H, W),
            disparity=float(disps[0]),
            alpha=np.ones((H, W), dtype=bool),
        )
    ]
    pad = int(np.ceil((hi - lo) * spec.max_view_offset)) + 1
    taken: list[tuple[int, int, int, int]] = []  # padded bboxes (y0,y1,x0,x1)
    for disp in disps[1:]:
        alpha, bbox = _place_shape(rng, spec.shapes, H, W, pad, taken)
        taken.append(bbox)
        layers.append(
            Layer(texture=_draw_texture(rng, spec.texture, H, W), disparity=float(disp), alpha=alpha)
        )
    return layers


def _place_shape(rng, kind: ShapeKind, H: int, W: int, pad: int, taken) -> tuple[np.ndarray, tuple]:
    for attempt in range(200):
        shrink = 1.0 / (1 + attempt // 40)  # fall back to smaller shapes when crowded
        h = max(int(rng.integers(H // 8, H // 3) * shrink), 4)
        w = max(int(rng.integers(W // 8, W // 3) * shrink), 4)
        y0 = int(rng.integers(pad, max(H - h - pad, pad + 1)))
        x0 = int(rng.integers(pad, max(W - w - pad, pad + 1)))
        bbox = (y0 - pad, y0 + h + pad, x0 - pad, x0 + w + pad)
        if any(not (bbox[1] <= t[0] or t[1] <= bbox[0] or bbox[3] <= t[2] or t[3] <= bbox[2]) for t in taken):
            continue
        alpha = np.zeros((H, W), dtype=bool)
        if kind == "rects":
            alpha[y0 : y0 + h, x0 : x0 + w] = True
        else:
            r = min(h, w) / 2.0
            cy, cx = y0 + h / 2.0, x0 + w / 2.0
            yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
            alpha = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        return alpha, bbox
    raise RuntimeError("could not place a non-overlapping shape; too many layers for the frame")


def render_ground_truth(
    layers: list[Layer], g: GridGeometry
) -> tuple[LightField4D, np.ndarray, np.ndarray]:
    """Composite the exact light field plus per-view disparity and occlusion masks.

    Returns (light field, disparity maps (V,U,H,W), masks (V,U,H,W) bool).
    A mask bit is true where the view pixel's surface point is not visible
    from the center view (occluded there or outside its frame).
    """
    if not layers:
        raise ValueError("no layers")
    H, W = g.H, g.W
    v_c, u_c = g.center
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")

    # winner index per pixel in the center view (front-most layer covering it)
    center_winner = np.zeros((H, W), dtype=np.int64)
    for idx, layer in enumerate(layers):
        center_winner[layer.alpha] = idx

    views = np.empty((g.V, g.U, H, W, 3))
    disparity = np.empty((g.V, g.U, H, W))
    occlusion = np.empty((g.V, g.U, H, W), dtype=bool)
    for v in range(g.V):
        for u in range(g.U):
            dv, du = v - v_c, u - u_c
            img = np.zeros((H, W, 3))
            disp = np.zeros((H, W))
            winner = np.full((H, W), -1, dtype=np.int64)
            pre_y = np.zeros((H, W))
            pre_x = np.zeros((H, W))
            for idx, layer in enumerate(layers):
                ly = yy - layer.disparity * dv
                lx = xx - layer.disparity * du
                if idx == 0:
                    covered = np.ones((H, W), dtype=bool)  # backmost spans everything
                else:
                    ry = np.rint(ly).astype(np.int64)
                    rx = np.rint(lx).astype(np.int64)
                    inside = (ry >= 0) & (ry < H) & (rx >= 0) & (rx < W)
                    covered = np.zeros((H, W), dtype=bool)
                    covered[inside] = layer.alpha[ry[inside], rx[inside]]
                if not covered.any():
                    continue
                img[covered] = sample_bilinear(layer.texture, ly, lx)[covered]
                disp[covered] = layer.disparity
                winner[covered] = idx
                pre_y[covered] = ly[covered]
                pre_x[covered] = lx[covered]
            in_frame = (pre_y >= 0) & (pre_y <= H - 1) & (pre_x >= 0) & (pre_x <= W - 1)
            ry = np.clip(np.rint(pre_y).astype(np.int64), 0, H - 1)
            rx = np.clip(np.rint(pre_x).astype(np.int64), 0, W - 1)
            visible = in_frame & (center_winner[ry, rx] == winner)
            views[v, u] = img
            disparity[v, u] = disp
            occlusion[v, u] = ~visible
    lf = LightField4D.from_array(views, plane_separation=g.plane_separation)
    return lf, disparity, occlusion
