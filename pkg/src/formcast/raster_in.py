"""Input image preparation: die height map, blank mask, scalar channels.

Produces the 4 x n x n input stack: [normalized die height,
t_spacer * mask, t_init * mask, speed * mask]. Scalars are normalized to
[0.1, 1.0] so the blank silhouette stays recoverable at range minima.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import QhullError

from .geometry import FRAME_MM, MAX_DESIGN_HEIGHT, BlankOutline
from .params import ParameterBounds, ParameterVector, DEFAULT_BOUNDS, RangeError

CHANNEL_ORDER = ("die_height", "t_spacer", "t_init", "speed")
SCALAR_FLOOR = 0.1


@dataclass(frozen=True)
class GridSpec:
    n_pixels: int = 256
    frame_mm: float = FRAME_MM

    def __post_init__(self):
        if self.n_pixels < 8:
            raise ValueError("grid must be at least 8 pixels per side")

    @property
    def pixel_mm(self) -> float:
        return self.frame_mm / self.n_pixels

    def centers(self) -> np.ndarray:
        """1D pixel-center coordinates in mm."""
        return (np.arange(self.n_pixels) + 0.5) * self.pixel_mm

    def center_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) meshes indexed [row, col] with x along columns."""
        c = self.centers()
        return np.meshgrid(c, c, indexing="xy")


@dataclass
class InputStack:
    data: np.ndarray             # (4, n, n) float32 in [0, 1]
    mask: np.ndarray             # (n, n) uint8
    grid: GridSpec
    channel_order: tuple = CHANNEL_ORDER
    checksum: str = field(default="")

    def __post_init__(self):
        if not self.checksum:
            self.checksum = stack_order_checksum(self.channel_order)

    def verify(self):
        if self.checksum != stack_order_checksum(self.channel_order):
            raise ValueError("input stack channel-order checksum mismatch")


def stack_order_checksum(order) -> str:
    return hashlib.sha256("|".join(order).encode()).hexdigest()[:16]


class TriangulationError(ValueError):
    pass


def interpolate_scattered(points: np.ndarray, values: np.ndarray,
                          grid: GridSpec) -> np.ndarray:
    """Linear barycentric interpolation with nearest-node fallback."""
    if len(points) == 0:
        raise TriangulationError("empty point cloud")
    gx, gy = grid.center_mesh()
    try:
        lin = LinearNDInterpolator(points, values)
    except QhullError as e:
        raise TriangulationError(f"degenerate point cloud: {e}") from e
    img = lin(gx, gy)
    holes = np.isnan(img)
    if holes.any():
        near = NearestNDInterpolator(points, values)
        img[holes] = near(gx[holes], gy[holes])
    return img.astype(np.float64)


def rasterize_die(cloud: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Interpolate die node heights onto the grid and normalize by 120 mm."""
    cloud = np.asarray(cloud, dtype=float)
    return interpolate_scattered(cloud[:, :2], cloud[:, 2], grid) / MAX_DESIGN_HEIGHT


def _points_in_polygon(poly: np.ndarray, px: np.ndarray, py: np.ndarray,
                       boundary_tol: float = 1e-9) -> np.ndarray:
    """Even-odd rule point-in-polygon test; boundary counts as inside."""
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    px = px[:, None]
    py = py[:, None]
    crosses = ((y0 > py) != (y1 > py)) & (
        px < (x1 - x0) * (py - y0) / np.where(y1 == y0, np.inf, y1 - y0) + x0)
    inside = crosses.sum(axis=1) % 2 == 1
    # points on (or numerically at) an edge count as inside
    ex, ey = x1 - x0, y1 - y0
    elen2 = np.maximum(ex * ex + ey * ey, 1e-30)
    t = np.clip(((px - x0) * ex + (py - y0) * ey) / elen2, 0.0, 1.0)
    d2 = (px - (x0 + t * ex)) ** 2 + (py - (y0 + t * ey)) ** 2
    on_edge = (d2 <= boundary_tol).any(axis=1)
    return inside | on_edge


def rasterize_blank(outline: BlankOutline, grid: GridSpec) -> np.ndarray:
    """Binary map: 1 where the pixel center lies inside the blank outline."""
    poly = np.asarray(outline.points, dtype=float)
    if len(poly) < 3:
        raise ValueError("open or degenerate polygon")
    gx, gy = grid.center_mesh()
    inside = _points_in_polygon(poly, gx.ravel(), gy.ravel())
    return inside.reshape(gx.shape).astype(np.uint8)


def scalar_norm(value: float, lo: float, hi: float) -> float:
    if not lo <= value <= hi:
        raise RangeError(f"scalar {value} outside [{lo}, {hi}]")
    return SCALAR_FLOOR + (1.0 - SCALAR_FLOOR) * (value - lo) / (hi - lo)


def scalar_channels(mask: np.ndarray, pv: ParameterVector,
                    bounds: ParameterBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Three constant-times-mask images for t_spacer, t_init, speed."""
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask must be binary")
    chans = []
    for name in ("t_spacer", "t_init", "speed"):
        lo, hi = getattr(bounds, name)
        chans.append(mask.astype(np.float64) * scalar_norm(getattr(pv, name), lo, hi))
    return np.stack(chans)


def assemble_input(die_img: np.ndarray, scalar_imgs: np.ndarray,
                   mask: np.ndarray, grid: GridSpec) -> InputStack:
    """Stack channels in the fixed [die, t_spacer, t_init, speed] order."""
    if die_img.shape != (grid.n_pixels, grid.n_pixels):
        raise ValueError("die image does not match the grid")
    if scalar_imgs.shape != (3, grid.n_pixels, grid.n_pixels):
        raise ValueError("expected 3 scalar channels matching the grid")
    data = np.concatenate([die_img[None], scalar_imgs]).astype(np.float32)
    return InputStack(data=data, mask=mask.astype(np.uint8), grid=grid)


def build_input_stack(pv: ParameterVector, grid: GridSpec,
                      bounds: ParameterBounds = DEFAULT_BOUNDS,
                      die_spacing: float = 5.0, seed: int = 0) -> InputStack:
    """Full Algorithm-1-style pipeline for one sample."""
    from . import geometry as geo
    cloud = geo.die_point_cloud(pv, die_spacing, seed=seed)
    die_img = rasterize_die(cloud, grid)
    mask = rasterize_blank(geo.blank_outline(pv), grid)
    scal = scalar_channels(mask, pv, bounds)
    return assemble_input(die_img, scal, mask, grid)
