"""As-formed 3D surface reconstruction from predicted displacement images,
plus wrinkle-height extraction on the flange band.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import geometry
from .io_formats import write_fqm
from .params import ParameterVector
from .raster_in import GridSpec
from .raster_target import DISPLACEMENT_NORM_MM

DEFAULT_WINDOW_PX = 15


@dataclass
class AsFormedMesh:
    vertices: np.ndarray      # (n_v, 3) mm
    faces: np.ndarray         # (n_f, 4) quad connectivity
    thinning: np.ndarray      # (n_v,) fraction
    vertex_index: np.ndarray  # (n, n) int, -1 off mask

    def __post_init__(self):
        if len(self.faces) and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValueError("faces reference invalid vertices")


def as_formed_mesh(displacement: np.ndarray, thinning: np.ndarray,
                   mask: np.ndarray, grid: GridSpec) -> AsFormedMesh:
    """Deform the pixel-center grid by the un-normalized displacements.

    Vertex = (pixel center + (dx, dy) * 120, dz * 120) mm; one vertex per
    in-mask pixel, one quad per 2x2 all-in-mask pixel neighborhood.
    """
    disp = np.asarray(displacement)
    thin = np.squeeze(np.asarray(thinning))
    m = np.asarray(mask).astype(bool)
    n = grid.n_pixels
    if disp.shape != (3, n, n) or thin.shape != (n, n) or m.shape != (n, n):
        raise ValueError("displacement, thinning and mask must share the grid")
    if not m.any():
        raise ValueError("empty mask: nothing to reconstruct")

    xs, ys = grid.center_mesh()
    vx = xs + disp[0] * DISPLACEMENT_NORM_MM
    vy = ys + disp[1] * DISPLACEMENT_NORM_MM
    vz = disp[2] * DISPLACEMENT_NORM_MM

    vertex_index = np.full((n, n), -1, dtype=np.int64)
    vertex_index[m] = np.arange(int(m.sum()))
    vertices = np.column_stack([vx[m], vy[m], vz[m]])

    quad_ok = m[:-1, :-1] & m[:-1, 1:] & m[1:, :-1] & m[1:, 1:]
    r, c = np.nonzero(quad_ok)
    faces = np.column_stack([vertex_index[r, c], vertex_index[r, c + 1],
                             vertex_index[r + 1, c + 1], vertex_index[r + 1, c]])
    return AsFormedMesh(vertices=vertices, faces=faces,
                        thinning=thin[m], vertex_index=vertex_index)


def formed_height_map(mesh: AsFormedMesh,
                      grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Surface height z of the as-formed mesh sampled at pixel centers.

    Returns (z image, coverage mask); pixels outside the formed footprint
    are 0 with coverage 0.
    """
    from scipy.interpolate import griddata
    xs, ys = grid.center_mesh()
    z = griddata(mesh.vertices[:, :2], mesh.vertices[:, 2], (xs, ys),
                 method="linear")
    coverage = np.isfinite(z)
    return np.where(coverage, z, 0.0), coverage.astype(np.uint8)


def flange_band_mask(pv: ParameterVector, grid: GridSpec) -> np.ndarray:
    """Pixels whose die-profile signed distance exceeds w_wall + r_die."""
    xs, ys = grid.center_mesh()
    s0 = geometry.plan_signed_distance(xs, ys, pv.r_plan)
    return s0 > geometry.WALL_BAND_MM + pv.r_die


def wrinkle_height(z_field: np.ndarray, pv: ParameterVector, grid: GridSpec,
                   window: int = DEFAULT_WINDOW_PX,
                   mask: np.ndarray | None = None) -> np.ndarray:
    """Deviation of z from its moving average, on the flange band only (mm).

    `z_field` is a height map of the formed surface at pixel centers (see
    formed_height_map); the band is the part of the plan with die-profile
    signed distance beyond the die radius, where the ideal flange is flat.
    """
    z = np.squeeze(np.asarray(z_field, dtype=np.float64))
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and >= 3")
    if window > grid.n_pixels:
        raise ValueError("window larger than the grid")
    if z.shape != (grid.n_pixels, grid.n_pixels):
        raise ValueError("z field does not match the grid")
    band = flange_band_mask(pv, grid)
    support = band.astype(np.float64)
    if mask is not None:
        support *= np.asarray(mask).astype(np.float64)
    # band-weighted moving average: wall and off-part pixels never bias
    # the reference surface of the (ideally flat) flange
    num = ndimage.uniform_filter(z * support, size=window, mode="constant")
    den = ndimage.uniform_filter(support, size=window, mode="constant")
    reference = np.divide(num, den, out=np.zeros_like(z), where=den > 0.0)
    return (z - reference) * support


def wrinkle_count_along_arc(wrinkle_field: np.ndarray, pv: ParameterVector,
                            grid: GridSpec, threshold_mm: float = 0.1,
                            n_theta: int = 181) -> int:
    """Local maxima of wrinkle height along the mid-flange corner arc."""
    from scipy.signal import find_peaks
    w = np.squeeze(np.asarray(wrinkle_field))
    c = geometry.PUNCH_HALF_WIDTH - pv.r_plan  # corner-arc center
    radius = pv.r_plan + geometry.WALL_BAND_MM + pv.r_die \
        + 0.5 * geometry.FLANGE_WIDTH
    theta = np.linspace(0.0, np.pi / 2.0, n_theta)
    px = (c + radius * np.cos(theta)) / grid.pixel_mm - 0.5
    py = (c + radius * np.sin(theta)) / grid.pixel_mm - 0.5
    profile = ndimage.map_coordinates(w.astype(np.float64), [py, px],
                                      order=1, mode="nearest")
    peaks, _ = find_peaks(profile, height=threshold_mm)
    return int(len(peaks))


def mesh_summary(mesh: AsFormedMesh, wrinkle_field: np.ndarray,
                 pv: ParameterVector, grid: GridSpec) -> dict:
    return {
        "max_thinning": float(mesh.thinning.max()),
        "max_wrinkle_height_mm": float(np.abs(wrinkle_field).max()),
        "wrinkle_count_corner_arc": wrinkle_count_along_arc(
            wrinkle_field, pv, grid),
    }


def export_mesh(mesh: AsFormedMesh, mesh_path,
                summary: dict | None = None, summary_path=None) -> None:
    write_fqm(mesh_path, mesh.vertices, mesh.faces)
    if summary is not None and summary_path is not None:
        with open(summary_path, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
