"""Analytic die height field and blank outline for a quarter corner model.

The punch plan outline is a rounded square of half-width W with corner
radius r_plan; the die height is a piecewise profile of the signed
distance s to that outline (s < 0 inside). The vertical wall is replaced
by a narrow linear band of width ``WALL_BAND_MM`` so the height map stays
a single-valued function of (x, y).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterVector, validate

PUNCH_HALF_WIDTH = 500.0   # W, mm
FLANGE_WIDTH = 50.0        # F, mm
FRAME_MM = 740.0           # fixed physical frame side, mm
WALL_BAND_MM = 2.0         # w_wall, mm
MAX_DESIGN_HEIGHT = 120.0  # global height normalizer, mm


class DegenerateOutlineError(ValueError):
    pass


@dataclass(frozen=True)
class BlankOutline:
    """Closed polygon (quarter rounded square) in the frame, mm."""
    points: np.ndarray       # (m, 2), first point not repeated at the end
    half_length: float       # L_blank * a_scale
    corner_radius: float     # r_blank * b_scale

    def area(self) -> float:
        """Shoelace area of the discretized polygon."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))

    def area_closed_form(self) -> float:
        """Exact area of the rounded quarter square."""
        L, R = self.half_length, self.corner_radius
        return L * L - R * R * (1.0 - np.pi / 4.0)


def blank_dimensions(pv: ParameterVector) -> tuple[float, float]:
    """Unscaled blank half-length and corner radius (developed lengths)."""
    l_blank = PUNCH_HALF_WIDTH + pv.h_design + FLANGE_WIDTH
    r_blank = pv.r_plan + pv.h_design + FLANGE_WIDTH
    return l_blank, r_blank


def blank_outline(pv: ParameterVector, max_arc_step_deg: float = 1.0) -> BlankOutline:
    """Quarter rounded-square blank outline, arc discretized at <= 1 deg."""
    l_blank, r_blank = blank_dimensions(pv)
    L = l_blank * pv.a_scale
    R = r_blank * pv.b_scale
    if R > L:
        raise DegenerateOutlineError(
            f"corner radius {R:.1f} exceeds half-length {L:.1f}")
    pts = [(0.0, 0.0), (L, 0.0)]
    if R > 0.0:
        pts.append((L, L - R))
        n_arc = max(2, int(np.ceil(90.0 / max_arc_step_deg)) + 1)
        ang = np.linspace(0.0, np.pi / 2.0, n_arc)
        cx = cy = L - R
        for a in ang[1:-1]:
            pts.append((cx + R * np.cos(a), cy + R * np.sin(a)))
        pts.append((L - R, L))
    else:
        pts.append((L, L))
    pts.append((0.0, L))
    return BlankOutline(points=np.array(pts, dtype=float),
                        half_length=L, corner_radius=R)


def plan_signed_distance(x, y, r_plan: float,
                         half_width: float = PUNCH_HALF_WIDTH):
    """Signed distance to the rounded-square punch plan outline (s < 0 inside).

    The quarter model lives in x, y >= 0; the full rounded square is
    symmetric about both axes, so absolute coordinates are used.
    """
    x = np.abs(np.asarray(x, dtype=float))
    y = np.abs(np.asarray(y, dtype=float))
    qx = x - (half_width - r_plan)
    qy = y - (half_width - r_plan)
    outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
    inside = np.minimum(np.maximum(qx, qy), 0.0)
    return outside + inside - r_plan


def plan_inward_direction(x, y, r_plan: float,
                          half_width: float = PUNCH_HALF_WIDTH,
                          eps: float = 1e-4):
    """Unit direction of steepest descent of the signed distance (points inward)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gx = (plan_signed_distance(x + eps, y, r_plan, half_width)
          - plan_signed_distance(x - eps, y, r_plan, half_width)) / (2 * eps)
    gy = (plan_signed_distance(x, y + eps, r_plan, half_width)
          - plan_signed_distance(x, y - eps, r_plan, half_width)) / (2 * eps)
    norm = np.hypot(gx, gy)
    norm = np.where(norm < 1e-12, 1.0, norm)
    return -gx / norm, -gy / norm


def profile_height(s, pv: ParameterVector):
    """Die height as a function of signed distance to the punch plan outline."""
    s = np.asarray(s, dtype=float)
    h, rp, rd, w = pv.h_design, pv.r_punch, pv.r_die, WALL_BAND_MM
    z = np.zeros_like(s)
    # plateau
    z = np.where(s <= -rp, h, z)
    # punch radius arc
    m = (s > -rp) & (s <= 0.0)
    z = np.where(m, h - rp + np.sqrt(np.maximum(rp * rp - (s + rp) ** 2, 0.0)), z)
    # linear wall band
    m = (s > 0.0) & (s <= w)
    z = np.where(m, (h - rp) + (rd - (h - rp)) * (s / w), z)
    # die radius arc
    m = (s > w) & (s <= w + rd)
    z = np.where(m, rd - np.sqrt(np.maximum(rd * rd - (s - w - rd) ** 2, 0.0)), z)
    return z


def die_height(x, y, pv: ParameterVector):
    """Height of the die surface at (x, y), mm."""
    s = plan_signed_distance(x, y, pv.r_plan)
    return profile_height(s, pv)


def refinement_band_halfwidth(pv: ParameterVector) -> float:
    """Half-width in s of the band that gets 2x node densification."""
    return pv.r_die + pv.r_punch + WALL_BAND_MM


def _contour_ring(s: float, r_plan: float, step: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Points along the offset contour at signed distance s, spaced ~step.

    The offset of the rounded square at distance s is itself a rounded
    square of half-width W + s with corner radius r_plan + s. Points are
    jittered tangentially only, so their signed distance stays exact.
    """
    r = r_plan + s
    if r < 0.0:
        return np.zeros((0, 2))
    c = PUNCH_HALF_WIDTH - r_plan
    edge = PUNCH_HALF_WIDTH + s
    pts = []
    # two straight edges (y = edge and x = edge), clipped to the quadrant
    n_e = max(2, int(np.ceil(c / step)))
    for t in (np.arange(n_e) + rng.uniform(0.0, 1.0)) / n_e * c:
        pts.append((t, edge))
        pts.append((edge, t))
    # corner arc about (c, c)
    arc_len = r * np.pi / 2.0
    n_a = max(2, int(np.ceil(arc_len / step)))
    phase = rng.uniform(0.0, 1.0)
    for phi in (np.arange(n_a + 1) + phase) / (n_a + 1) * (np.pi / 2.0):
        pts.append((c + r * np.cos(phi), c + r * np.sin(phi)))
    pts = np.asarray(pts)
    keep = (pts <= FRAME_MM).all(axis=1) & (pts >= 0.0).all(axis=1)
    return pts[keep]


def _ring_levels(pv: ParameterVector, sag_tol: float = 0.05) -> list[float]:
    """Signed-distance levels whose contour rings resolve the die profile.

    The two profile arcs are sampled at equal circle angles so the chord
    deviation stays below sag_tol; the wall band is linear, so its two
    edge rings are exact.
    """
    levels = []
    for radius, lo, sign in ((pv.r_punch, -pv.r_punch, 1.0),
                             (pv.r_die, WALL_BAND_MM, 1.0)):
        n = max(3, int(np.ceil((np.pi / 2.0) / np.sqrt(8.0 * sag_tol / radius))))
        psi = np.linspace(0.0, np.pi / 2.0, n + 1)
        if lo < 0.0:   # punch arc: s = -r_punch + r_punch*sin(psi)
            levels.extend(lo + radius * np.sin(psi))
        else:          # die arc: s = w_wall + r_die*(1 - cos(psi))
            levels.extend(lo + radius * (1.0 - np.cos(psi)))
    levels.append(-pv.r_punch - 2.0)              # plateau anchor
    levels.append(WALL_BAND_MM + pv.r_die + 2.0)  # flange anchor
    return sorted(set(float(s) for s in levels))


def die_point_cloud(pv: ParameterVector, spacing: float,
                    seed: int = 0) -> np.ndarray:
    """Jittered quasi-uniform (x, y, z) scatter of the die surface.

    A jittered grid covers the frame; contour rings at profile-resolved
    signed-distance levels densify the band |s| <= r_die + r_punch + w_wall
    so linear interpolation reproduces the steep wall region.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if spacing >= FRAME_MM:
        raise ValueError("spacing larger than the physical frame")
    bad = validate(pv)
    if bad:
        raise ValueError("invalid parameter vector: " + "; ".join(bad))
    rng = np.random.default_rng(seed)

    ax = np.arange(0.0, FRAME_MM + 1e-9, spacing)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    base = np.column_stack([gx.ravel(), gy.ravel()])
    base += rng.uniform(-0.3, 0.3, base.shape) * spacing
    base = np.clip(base, 0.0, FRAME_MM)
    # keep the steep band to the exact ring points only
    s_base = plan_signed_distance(base[:, 0], base[:, 1], pv.r_plan)
    base = base[np.abs(s_base) > refinement_band_halfwidth(pv)]

    # rings need a short tangential step so the triangulation prefers
    # within-band edges over chords across the steep wall
    step = min(spacing / 2.0, 0.75)
    parts = [np.column_stack([base, die_height(base[:, 0], base[:, 1], pv)])]
    for s in _ring_levels(pv):
        ring = _contour_ring(s, pv.r_plan, step, rng)
        if len(ring):
            z = float(profile_height(np.array(s), pv))
            parts.append(np.column_stack([ring, np.full(len(ring), z)]))
    return np.vstack(parts)
