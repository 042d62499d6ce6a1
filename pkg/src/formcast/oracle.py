"""Deterministic synthetic forming solver.

Stands in for coupled thermo-mechanical FE stamping simulations. The
output carries the qualitative behaviour the surrogate pipeline needs:
a thinning peak at the punch radius that grows with blank temperature
and shrinks with speed and punch radius, flange thickening near the
corner, and deterministic sinusoidal flange wrinkles whose amplitude is
set by the spacer gap. It makes no claim of FE fidelity.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import geometry
from .params import ParameterVector, validate

BLANK_THICKNESS_MM = 2.0


@dataclass(frozen=True)
class OracleConfig:
    """Fit-free coefficients of the synthetic solver."""
    k_draw: float = 0.25          # in-plane draw-in scale
    t_peak: float = 0.18          # thinning peak at r_punch = 15 mm
    corner_gain: float = 0.8      # extra thinning at the plan corner
    t_hoop: float = 0.12          # flange thickening magnitude
    wrinkle_waves: int = 12       # sinusoid count around the corner
    wrinkle_gain: float = 0.9     # mm of ripple per mm of free gap
    wrinkle_thinning: float = 0.05  # sidewall thinning per mm of ripple
    flange_ramp_mm: float = 5.0   # ramp-in width of the wrinkle band

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_ORACLE = OracleConfig()


@dataclass
class FormingResult:
    nodes_final: np.ndarray        # (n_nodes, 3) mm, as-formed
    displacements: np.ndarray      # (n_nodes, 3) mm
    elements: np.ndarray           # (n_elem, 4) quad connectivity
    elemental_thinning: np.ndarray  # (n_elem,) fraction, + = thinning

    @property
    def nodes_initial(self) -> np.ndarray:
        return self.nodes_final - self.displacements


def blank_thickness() -> float:
    """Initial blank thickness, constant for all samples (mm)."""
    return BLANK_THICKNESS_MM


def temperature_factor(t_init: float) -> float:
    return 0.6 + 0.8 * (t_init - 350.0) / 150.0


def speed_factor(speed: float) -> float:
    return 1.3 - 0.6 * (speed - 50.0) / 450.0


def wrinkle_amplitude(pv: ParameterVector,
                      config: OracleConfig = DEFAULT_ORACLE) -> float:
    """Ripple amplitude in mm; zero when the spacer pinches the flange."""
    free_gap = pv.t_spacer - BLANK_THICKNESS_MM - 0.5
    return config.wrinkle_gain * max(0.0, free_gap)


def _corner_proximity(x, y, r_plan):
    """1 on the plan-corner arc sector, decaying along the straight edges."""
    cx = cy = geometry.PUNCH_HALF_WIDTH - r_plan
    dx = np.maximum(cx - np.asarray(x, dtype=float), 0.0)
    dy = np.maximum(cy - np.asarray(y, dtype=float), 0.0)
    d = np.hypot(dx, dy)
    return np.exp(-((d / r_plan) ** 2))


def _corner_angle(x, y, r_plan):
    """Polar angle about the plan-corner center."""
    c = geometry.PUNCH_HALF_WIDTH - r_plan
    return np.arctan2(np.asarray(y, dtype=float) - c,
                      np.asarray(x, dtype=float) - c)


def _wrinkle_field(x, y, s0, pv, config):
    """Out-of-plane ripple height on the flange band, mm."""
    a = wrinkle_amplitude(pv, config)
    if a <= 0.0:
        return np.zeros_like(np.asarray(s0, dtype=float))
    flange_start = geometry.WALL_BAND_MM + pv.r_die
    ramp = np.clip((np.asarray(s0) - flange_start) / config.flange_ramp_mm,
                   0.0, 1.0)
    theta = _corner_angle(x, y, pv.r_plan)
    return a * np.sin(config.wrinkle_waves * theta) * ramp


def _blank_quad_mesh(pv: ParameterVector, spacing: float, seed: int):
    """Quad mesh of the undeformed blank with 2x refinement near the tools.

    A coarse structured grid over the blank bounding box is clipped to the
    outline, then cells inside the refinement band are split into four.
    The refined cells introduce hanging nodes, mimicking adaptive mesh
    refinement; downstream image prep must not assume grid correspondence.
    """
    outline = geometry.blank_outline(pv)
    L = outline.half_length
    rng = np.random.default_rng(seed)
    n_cells = max(4, int(np.ceil(L / spacing)))
    ax = np.linspace(0.0, L, n_cells + 1)
    # jitter interior grid lines so nodes never align with pixel centers
    jitter = rng.uniform(-0.15, 0.15, size=ax.shape) * (L / n_cells)
    jitter[0] = jitter[-1] = 0.0
    ax = ax + jitter

    band = geometry.refinement_band_halfwidth(pv)
    nodes: list[tuple[float, float]] = []
    node_ids: dict[tuple[float, float], int] = {}

    def nid(x, y):
        key = (round(x, 6), round(y, 6))
        if key not in node_ids:
            node_ids[key] = len(nodes)
            nodes.append((x, y))
        return node_ids[key]

    def inside_blank(x, y):
        if outline.corner_radius <= 0.0:
            return x <= L and y <= L
        cx = cy = L - outline.corner_radius
        if x <= cx or y <= cy:
            return x <= L and y <= L
        return (x - cx) ** 2 + (y - cy) ** 2 <= outline.corner_radius ** 2

    elems = []
    for i in range(n_cells):
        for j in range(n_cells):
            x0, x1, y0, y1 = ax[i], ax[i + 1], ax[j], ax[j + 1]
            xc, yc = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
            if not inside_blank(xc, yc):
                continue
            s_c = float(geometry.plan_signed_distance(xc, yc, pv.r_plan))
            if abs(s_c) <= band:
                # split into 4 quads
                for (ax0, ax1) in ((x0, xc), (xc, x1)):
                    for (ay0, ay1) in ((y0, yc), (yc, y1)):
                        elems.append((nid(ax0, ay0), nid(ax1, ay0),
                                      nid(ax1, ay1), nid(ax0, ay1)))
            else:
                elems.append((nid(x0, y0), nid(x1, y0),
                              nid(x1, y1), nid(x0, y1)))
    nodes_xy = np.array(nodes, dtype=float)
    elements = np.array(elems, dtype=np.int64)
    # project corner-cell nodes that poke past the outline arc back onto it
    on_arc = np.zeros(len(nodes_xy), dtype=bool)
    if outline.corner_radius > 0.0:
        c = L - outline.corner_radius
        px, py = nodes_xy[:, 0] - c, nodes_xy[:, 1] - c
        r = np.hypot(px, py)
        out = (px > 0) & (py > 0) & (r > outline.corner_radius)
        scale = np.where(out, outline.corner_radius / np.maximum(r, 1e-12), 1.0)
        nodes_xy[:, 0] = c + px * scale
        nodes_xy[:, 1] = c + py * scale
        on_arc = out
    # break the structured-grid cocircularity with a small independent
    # jitter of interior nodes, so the downstream triangulation of node
    # positions is unique and target prep is enumeration-order insensitive
    cell = L / n_cells
    eps = 1e-9
    interior = (~on_arc
                & (nodes_xy[:, 0] > eps) & (nodes_xy[:, 1] > eps)
                & (nodes_xy[:, 0] < L - eps) & (nodes_xy[:, 1] < L - eps))
    wiggle = rng.uniform(-0.1, 0.1, size=nodes_xy.shape) * cell
    nodes_xy = nodes_xy + wiggle * interior[:, None]
    return nodes_xy, elements


def simulate(pv: ParameterVector, spacing: float = 8.0,
             seed: int = 0, config: OracleConfig = DEFAULT_ORACLE) -> FormingResult:
    """Run the synthetic forming solver for one parameter vector."""
    bad = validate(pv)
    if bad:
        raise ValueError("invalid parameter vector: " + "; ".join(bad))

    nodes_xy, elements = _blank_quad_mesh(pv, spacing, seed)
    x0, y0 = nodes_xy[:, 0], nodes_xy[:, 1]
    s0 = geometry.plan_signed_distance(x0, y0, pv.r_plan)

    f_t = temperature_factor(pv.t_init)
    f_s = speed_factor(pv.speed)

    # in-plane draw-in, decaying away from the punch footprint
    ux, uy = geometry.plan_inward_direction(x0, y0, pv.r_plan)
    g = np.where(s0 > 0.0,
                 config.k_draw * pv.h_design * f_t * f_s
                 * np.exp(-np.maximum(s0, 0.0) / pv.h_design),
                 0.0)
    dx, dy = g * ux, g * uy

    x1, y1 = x0 + dx, y0 + dy
    z1 = geometry.die_height(x1, y1, pv) + _wrinkle_field(x0, y0, s0, pv, config)

    nodes_final = np.column_stack([x1, y1, z1])
    displacements = np.column_stack([dx, dy, z1])

    # elemental thinning at undeformed element centroids
    cen = nodes_xy[elements].mean(axis=1)
    cx, cy = cen[:, 0], cen[:, 1]
    s_c = geometry.plan_signed_distance(cx, cy, pv.r_plan)

    t_pk = config.t_peak * np.sqrt(15.0 / pv.r_punch)
    s_pk = -pv.r_punch / 2.0
    sigma = pv.r_punch + pv.r_die
    prox = _corner_proximity(cx, cy, pv.r_plan)
    thin = (t_pk * np.exp(-((s_c - s_pk) / sigma) ** 2) * f_t * f_s
            * (1.0 + config.corner_gain * prox))

    # flange corner thickening from hoop compression
    flange_start = geometry.WALL_BAND_MM + pv.r_die
    hoop = np.exp(-(((s_c - (flange_start + 10.0)) / 15.0) ** 2)) * prox
    thin = thin - config.t_hoop * np.where(s_c > flange_start, hoop, 0.0)

    # wrinkle-induced localized thinning on the lower sidewall
    a = wrinkle_amplitude(pv, config)
    if a > 0.0:
        theta = _corner_angle(cx, cy, pv.r_plan)
        band = (s_c > 0.0) & (s_c < pv.r_die)
        thin = thin + np.where(band,
                               config.wrinkle_thinning * a
                               * np.abs(np.sin(config.wrinkle_waves * theta)),
                               0.0)

    # soft squash keeps every value strictly inside [-1, 1] while
    # preserving strict parameter monotonicity
    thin = np.tanh(thin)

    return FormingResult(nodes_final=nodes_final,
                         displacements=displacements,
                         elements=elements,
                         elemental_thinning=thin)
