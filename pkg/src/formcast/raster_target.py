"""Target image preparation from forming results.

Elemental thinning is averaged to nodes, outlier samples are clipped at
their 0.5th/99.5th percentiles, nodes are mapped back to the undeformed
blank, and fields are interpolated onto the grid and masked to 0 outside
the blank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MAX_DESIGN_HEIGHT
from .oracle import FormingResult
from .raster_in import GridSpec, interpolate_scattered

DISPLACEMENT_NORM_MM = MAX_DESIGN_HEIGHT  # 120 mm


@dataclass(frozen=True)
class ClipThresholds:
    c1: float = 0.40    # max allowable thinning
    c2: float = -0.40   # min allowable thinning (max thickening, negative)

    def __post_init__(self):
        if not self.c1 > 0.0 > self.c2:
            raise ValueError("need c1 > 0 > c2")


@dataclass
class TargetStack:
    thinning: np.ndarray       # (1, n, n) float32, fraction
    displacement: np.ndarray   # (3, n, n) float32, mm / 120
    mask: np.ndarray           # (n, n) uint8
    flagged: bool              # thinning outliers were clipped
    grid: GridSpec


class ConnectivityError(ValueError):
    pass


def elemental_to_nodal(values: np.ndarray, connectivity: np.ndarray,
                       n_nodes: int | None = None) -> np.ndarray:
    """Average elemental values to their connected nodes."""
    values = np.asarray(values, dtype=float)
    conn = np.asarray(connectivity, dtype=np.int64)
    if n_nodes is None:
        n_nodes = int(conn.max()) + 1
    if conn.min() < 0 or conn.max() >= n_nodes:
        raise ConnectivityError("connectivity indices out of range")
    total = np.zeros(n_nodes)
    count = np.zeros(n_nodes)
    for col in range(conn.shape[1]):
        np.add.at(total, conn[:, col], values)
        np.add.at(count, conn[:, col], 1.0)
    if (count == 0).any():
        orphans = np.flatnonzero(count == 0)
        raise ConnectivityError(f"orphan nodes with no element: {orphans[:5]}")
    return total / count


def detect_and_clip(field: np.ndarray,
                    thresholds: ClipThresholds = ClipThresholds()
                    ) -> tuple[np.ndarray, bool]:
    """Clip a field at its 0.5th/99.5th percentiles if it violates thresholds."""
    field = np.asarray(field, dtype=float)
    if field.size == 0:
        raise ValueError("empty field")
    flagged = bool(field.max() > thresholds.c1 or field.min() < thresholds.c2)
    if not flagged:
        return field, False
    # percentile clip, then clamp to the allowable band so broad (not
    # merely rare) excursions cannot survive the percentile trim
    lo = max(np.percentile(field, 0.5), thresholds.c2)
    hi = min(np.percentile(field, 99.5), thresholds.c1)
    return np.clip(field, lo, hi), True


def undeform(d: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Undeformed coordinates d0 = d - delta."""
    d = np.asarray(d, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if d.shape != delta.shape:
        raise ValueError("coordinate/displacement length mismatch")
    return d - delta


def grid_interpolate(values: np.ndarray, points_xy: np.ndarray,
                     mask: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Interpolate nodal values at undeformed positions, masked to the blank."""
    img = interpolate_scattered(points_xy, values, grid)
    return img * mask.astype(img.dtype)


def assemble_targets(result: FormingResult, mask: np.ndarray, grid: GridSpec,
                     thresholds: ClipThresholds = ClipThresholds()) -> TargetStack:
    """Full target-prep loop: thinning (element based) plus 3 displacement fields."""
    d0 = undeform(result.nodes_final, result.displacements)
    xy0 = d0[:, :2]

    nodal_thinning = elemental_to_nodal(result.elemental_thinning,
                                        result.elements, n_nodes=len(d0))
    nodal_thinning, flagged = detect_and_clip(nodal_thinning, thresholds)
    thin_img = grid_interpolate(nodal_thinning, xy0, mask, grid)

    disp_imgs = [grid_interpolate(result.displacements[:, k] / DISPLACEMENT_NORM_MM,
                                  xy0, mask, grid)
                 for k in range(3)]

    return TargetStack(thinning=thin_img[None].astype(np.float32),
                       displacement=np.stack(disp_imgs).astype(np.float32),
                       mask=mask.astype(np.uint8),
                       flagged=flagged,
                       grid=grid)
