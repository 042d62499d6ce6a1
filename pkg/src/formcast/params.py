"""Design space definition, validation and Latin hypercube sampling.

The design space has 9 scalars: four die/component dimensions, two blank
scaling factors and three process parameters. All lengths are mm,
temperatures degC, speeds mm/s.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields

import numpy as np

# Minimum vertical wall segment (mm) between the punch and die radii.
WALL_MARGIN = 10.0

PARAM_NAMES = (
    "r_die", "r_punch", "r_plan", "h_design",
    "a_scale", "b_scale", "t_spacer", "t_init", "speed",
)


@dataclass(frozen=True)
class ParameterVector:
    r_die: float
    r_punch: float
    r_plan: float
    h_design: float
    a_scale: float
    b_scale: float
    t_spacer: float
    t_init: float
    speed: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_array(cls, a) -> "ParameterVector":
        return cls(**{n: float(v) for n, v in zip(PARAM_NAMES, a)})

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterVector":
        return cls(**{n: float(d[n]) for n in PARAM_NAMES})


@dataclass(frozen=True)
class ParameterBounds:
    """Per-parameter (lower, upper) pairs."""
    r_die: tuple = (5.0, 25.0)
    r_punch: tuple = (5.0, 25.0)
    r_plan: tuple = (60.0, 120.0)
    h_design: tuple = (60.0, 120.0)
    a_scale: tuple = (0.9, 1.1)
    b_scale: tuple = (0.1, 1.1)
    t_spacer: tuple = (2.0, 10.0)
    t_init: tuple = (350.0, 500.0)
    speed: tuple = (50.0, 500.0)

    def __post_init__(self):
        for f in fields(self):
            lo, hi = getattr(self, f.name)
            if not lo < hi:
                raise ValueError(f"bounds for {f.name}: lower must be < upper")

    def lowers(self) -> np.ndarray:
        return np.array([getattr(self, n)[0] for n in PARAM_NAMES])

    def uppers(self) -> np.ndarray:
        return np.array([getattr(self, n)[1] for n in PARAM_NAMES])

    def as_dict(self) -> dict:
        return {n: list(getattr(self, n)) for n in PARAM_NAMES}


DEFAULT_BOUNDS = ParameterBounds()


class EmptyRequestError(ValueError):
    pass


class RangeError(ValueError):
    pass


def wall_constraint_ok(r_die: float, r_punch: float, h_design: float) -> bool:
    """A straight wall segment must exist between the two tool radii."""
    return h_design >= r_die + r_punch + WALL_MARGIN


def validate(pv: ParameterVector, bounds: ParameterBounds = DEFAULT_BOUNDS) -> list[str]:
    """Return a list of violated constraints; empty list means ok."""
    violations = []
    for name in PARAM_NAMES:
        lo, hi = getattr(bounds, name)
        v = getattr(pv, name)
        if not (lo <= v <= hi):
            violations.append(f"{name} out of range [{lo}, {hi}]: {v}")
    if not wall_constraint_ok(pv.r_die, pv.r_punch, pv.h_design):
        violations.append(
            "wall constraint: h_design >= r_die + r_punch + "
            f"{WALL_MARGIN} violated ({pv.h_design} < "
            f"{pv.r_die + pv.r_punch + WALL_MARGIN})"
        )
    return violations


def is_valid(pv: ParameterVector, bounds: ParameterBounds = DEFAULT_BOUNDS) -> bool:
    return not validate(pv, bounds)


def to_unit(pv: ParameterVector, bounds: ParameterBounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Affine map of a vector into the unit cube."""
    lo, hi = bounds.lowers(), bounds.uppers()
    x = pv.as_array()
    if np.any(x < lo) or np.any(x > hi):
        raise RangeError("parameter vector outside bounds")
    return (x - lo) / (hi - lo)


def from_unit(u, bounds: ParameterBounds = DEFAULT_BOUNDS) -> ParameterVector:
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise RangeError("unit coordinates outside [0, 1]")
    lo, hi = bounds.lowers(), bounds.uppers()
    return ParameterVector.from_array(lo + u * (hi - lo))


def lhs_sample(n: int, bounds: ParameterBounds = DEFAULT_BOUNDS,
               seed: int = 0) -> list[ParameterVector]:
    """Latin hypercube draw of n valid parameter vectors.

    Each dimension is split into n equal strata with exactly one sample
    per stratum; the position inside a stratum is uniform jitter. Vectors
    violating the wall constraint are repaired by resampling the offending
    coordinate inside its own stratum, which preserves stratification.
    """
    if n < 1:
        raise EmptyRequestError("requested an empty LHS design")
    rng = np.random.default_rng(seed)
    ndim = len(PARAM_NAMES)
    # unit[i, k]: sample i, dimension k
    unit = np.empty((n, ndim))
    strata = np.empty((n, ndim), dtype=int)
    for k in range(ndim):
        perm = rng.permutation(n)
        strata[:, k] = perm
        unit[:, k] = (perm + rng.uniform(size=n)) / n

    lo, hi = bounds.lowers(), bounds.uppers()
    idx = {name: i for i, name in enumerate(PARAM_NAMES)}
    i_rd, i_rp, i_h = idx["r_die"], idx["r_punch"], idx["h_design"]
    samples = []
    for i in range(n):
        u = unit[i].copy()
        # Repair the wall constraint within the strata already assigned.
        for _ in range(1000):
            x = lo + u * (hi - lo)
            if wall_constraint_ok(x[i_rd], x[i_rp], x[i_h]):
                break
            for k in (i_h, i_rd, i_rp):
                u[k] = (strata[i, k] + rng.uniform()) / n
        else:
            # Strata too constrained to repair by jitter alone: snap the
            # radii to their stratum lower edges and h to its upper edge.
            u[i_rd] = strata[i, i_rd] / n
            u[i_rp] = strata[i, i_rp] / n
            u[i_h] = (strata[i, i_h] + 1.0 - 1e-9) / n
            x = lo + u * (hi - lo)
            if not wall_constraint_ok(x[i_rd], x[i_rp], x[i_h]):
                raise RuntimeError("could not repair LHS sample "
                                   f"{i} within its strata")
        samples.append(ParameterVector.from_array(lo + u * (hi - lo)))
    return samples


def export_doe(samples: list[ParameterVector], seed: int,
               bounds: ParameterBounds = DEFAULT_BOUNDS) -> str:
    """One JSON document per run: {seed, n, bounds, samples}."""
    doc = {
        "seed": seed,
        "n": len(samples),
        "bounds": bounds.as_dict(),
        "samples": [pv.as_dict() for pv in samples],
    }
    return json.dumps(doc, indent=2)
