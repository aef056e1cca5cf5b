"""Two-plane ray geometry and the dense 4D light-field container.

Rays live in a light slab bounded by the angular plane (z=0) and the
spatial plane (z=1), separated by exactly 1.0 so that disparity in
pixels-per-view equals EPI line slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLUCKER_TOL = 1e-9


class DegenerateRayError(ValueError):
    """Raised for rays with zero direction."""


@dataclass(frozen=True)
class LightSlabCoord:
    """Ray as its two plane intersections: spatial (x, y), angular (u, v).

    Spatial coordinates are in pixels, angular coordinates in grid units;
    both may be fractional for continuous views.
    """

    x: float
    y: float
    u: float
    v: float

    def __post_init__(self):
        for name in ("x", "y", "u", "v"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite slab coordinate {name}")


@dataclass(frozen=True)
class PluckerRay:
    """Six-component ray (direction d, moment m = origin x d), <d, m> = 0."""

    d: np.ndarray
    m: np.ndarray

    def as_vector(self) -> np.ndarray:
        """Concatenated [d, m] length-6 vector."""
        return np.concatenate([self.d, self.m])


def plucker_normalize(r: PluckerRay) -> PluckerRay:
    """Scale (d, m) so that ||d|| = 1; ray identity is preserved."""
    n = float(np.linalg.norm(r.d))
    if n <= 0.0:
        raise DegenerateRayError("ray direction has zero norm")
    return PluckerRay(d=r.d / n, m=r.m / n)


def slab_to_plucker(c: LightSlabCoord) -> PluckerRay:
    """Ray through o=(u,v,0) on the angular plane and p=(x,y,1) on the spatial plane.

    Coordinates are interpreted directly as plane coordinates; grid-based
    pixel conversions happen in :func:`grid_ray`.
    """
    o = np.array([c.u, c.v, 0.0])
    d = np.array([c.x - c.u, c.y - c.v, 1.0])
    d = d / np.linalg.norm(d)
    m = np.cross(o, d)
    return PluckerRay(d=d, m=m)


@dataclass(frozen=True)
class GridGeometry:
    """Regular angular grid layout: V x U views of H x W pixels each."""

    V: int
    U: int
    H: int
    W: int
    plane_separation: float = 1.0

    def __post_init__(self):
        if self.V < 1 or self.U < 1 or self.H < 1 or self.W < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.plane_separation <= 0:
            raise ValueError("plane separation must be positive")

    @property
    def center(self) -> tuple[float, float]:
        """Angular center (v_c, u_c), fractional for even grids."""
        return ((self.V - 1) / 2.0, (self.U - 1) / 2.0)

    @property
    def spatial_center(self) -> tuple[float, float]:
        """Pixel-space center (y_c, x_c)."""
        return ((self.H - 1) / 2.0, (self.W - 1) / 2.0)


def grid_ray(g: GridGeometry, v: float, u: float, y: float, x: float) -> PluckerRay:
    """Ray for pixel (y, x) of view (v, u).

    Pixel and angular units map 1:1 onto the two planes, both centered on
    the grid center so the center pixel of the center view is the axis ray.
    Angular indices outside the grid are rejected; spatial coordinates are
    unrestricted (continuous and out-of-frame rays are legal).
    """
    if not (0 <= v <= g.V - 1) or not (0 <= u <= g.U - 1):
        raise ValueError(f"angular index ({v},{u}) outside {g.V}x{g.U} grid")
    v_c, u_c = g.center
    y_c, x_c = g.spatial_center
    return slab_to_plucker(LightSlabCoord(x=x - x_c, y=y - y_c, u=u - u_c, v=v - v_c))


def grid_rays(g: GridGeometry, v: float, u: float, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Vectorized grid_ray for one view: (N, 6) array of normalized [d, m] rows."""
    if not (0 <= v <= g.V - 1) or not (0 <= u <= g.U - 1):
        raise ValueError(f"angular index ({v},{u}) outside {g.V}x{g.U} grid")
    ys = np.asarray(ys, dtype=np.float64)
    return slab_rays(g, np.full(ys.shape, float(v)), np.full(ys.shape, float(u)), ys, xs)


def slab_rays(g: GridGeometry, vs: np.ndarray, us: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Rays for per-element (v, u, y, x) pixel/grid coordinates; no range check."""
    v_c, u_c = g.center
    y_c, x_c = g.spatial_center
    xs = np.asarray(xs, dtype=np.float64) - x_c
    ys = np.asarray(ys, dtype=np.float64) - y_c
    up = np.asarray(us, dtype=np.float64) - u_c
    vp = np.asarray(vs, dtype=np.float64) - v_c
    d = np.stack([xs - up, ys - vp, np.ones_like(xs)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.stack([up, vp, np.zeros_like(up)], axis=-1)
    m = np.cross(o, d)
    return np.concatenate([d, m], axis=-1)


@dataclass(frozen=True)
class SubApertureImage:
    """One view of the light field: H x W x 3 array of RGB in [0, 1]."""

    pixels: np.ndarray
    angular_index: tuple[int, int]  # (v, u)

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3:
            raise ValueError("pixels must be H x W x 3")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("channels must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class LightField4D:
    """Dense V x U grid of sub-aperture images."""

    views: tuple  # tuple of V tuples of U SubApertureImage
    geometry: GridGeometry = field(repr=False)

    def __post_init__(self):
        g = self.geometry
        if len(self.views) != g.V or any(len(row) != g.U for row in self.views):
            raise ValueError("view grid does not match geometry")
        for row in self.views:
            for view in row:
                if view.shape != (g.H, g.W):
                    raise ValueError("all views must share the same H x W")

    def view(self, v: int, u: int) -> SubApertureImage:
        return self.views[v][u]

    @classmethod
    def from_array(cls, arr: np.ndarray, plane_separation: float = 1.0) -> "LightField4D":
        """Build from a (V, U, H, W, 3) array."""
        V, U, H, W, _ = arr.shape
        g = GridGeometry(V=V, U=U, H=H, W=W, plane_separation=plane_separation)
        views = tuple(
            tuple(SubApertureImage(pixels=arr[v, u], angular_index=(v, u)) for u in range(U))
            for v in range(V)
        )
        return cls(views=views, geometry=g)

    def to_array(self) -> np.ndarray:
        """Stack back into a (V, U, H, W, 3) array."""
        g = self.geometry
        out = np.empty((g.V, g.U, g.H, g.W, 3))
        for v in range(g.V):
            for u in range(g.U):
                out[v, u] = self.views[v][u].pixels
        return out
