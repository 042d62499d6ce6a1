"""Stateless prediction service: /health, /meta and /predict.

Responses are pure functions of the request given fixed checkpoints; two
identical requests produce byte-identical tensor payloads.
"""
from __future__ import annotations

import base64
import hashlib
import time
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException

from functools import lru_cache

from . import geometry
from .io_formats import encode_fqt, load_checkpoint
from .network import ResSEUNet
from .params import DEFAULT_BOUNDS, ParameterBounds, ParameterVector, validate
from .raster_in import (
    GridSpec,
    assemble_input,
    rasterize_blank,
    rasterize_die,
    scalar_channels,
)
from .reconstruct import (
    as_formed_mesh,
    formed_height_map,
    wrinkle_height,
)


@dataclass
class ModelBundle:
    thinning: ResSEUNet
    displacement: ResSEUNet
    thinning_id: str
    displacement_id: str
    bounds: ParameterBounds

    @property
    def resolution(self) -> int:
        return self.thinning.config.resolution


def _model_id(path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:12]


def load_models(thinning_ckpt, displacement_ckpt,
                bounds: ParameterBounds = DEFAULT_BOUNDS) -> ModelBundle:
    thin_net, _, _ = load_checkpoint(thinning_ckpt)
    disp_net, _, _ = load_checkpoint(displacement_ckpt)
    if thin_net.config.out_channels != 1:
        raise ValueError("thinning checkpoint must have 1 output channel")
    if disp_net.config.out_channels != 3:
        raise ValueError("displacement checkpoint must have 3 output channels")
    if thin_net.config.resolution != disp_net.config.resolution:
        raise ValueError("checkpoints disagree on the grid resolution")
    return ModelBundle(thinning=thin_net, displacement=disp_net,
                       thinning_id=f"thinning-{_model_id(thinning_ckpt)}",
                       displacement_id=f"displacement-{_model_id(displacement_ckpt)}",
                       bounds=bounds)


def _b64_tensor(name: str, arr: np.ndarray) -> str:
    return base64.b64encode(encode_fqt({name: arr})).decode("ascii")


@lru_cache(maxsize=128)
def _geometry_images(r_die: float, r_punch: float, r_plan: float,
                     h_design: float, a_scale: float, b_scale: float,
                     n_pixels: int, frame_mm: float):
    """Die raster and blank mask for one tool geometry (exploration cache:
    process-parameter sliders leave these untouched)."""
    pv = ParameterVector(r_die=r_die, r_punch=r_punch, r_plan=r_plan,
                         h_design=h_design, a_scale=a_scale, b_scale=b_scale,
                         t_spacer=6.0, t_init=425.0, speed=275.0)
    grid = GridSpec(n_pixels=n_pixels, frame_mm=frame_mm)
    cloud = geometry.die_point_cloud(pv, 5.0, seed=0)
    die_img = rasterize_die(cloud, grid)
    mask = rasterize_blank(geometry.blank_outline(pv), grid)
    die_img.setflags(write=False)
    mask.setflags(write=False)
    return die_img, mask


def predict_fields(models: ModelBundle, pv: ParameterVector,
                   grid: GridSpec) -> dict[str, np.ndarray]:
    die_img, mask = _geometry_images(pv.r_die, pv.r_punch, pv.r_plan,
                                     pv.h_design, pv.a_scale, pv.b_scale,
                                     grid.n_pixels, grid.frame_mm)
    stack = assemble_input(die_img, scalar_channels(mask, pv, models.bounds),
                           mask, grid)
    batch = stack.data[None]
    return {
        "thinning": models.thinning.predict(batch)[0],
        "displacement": models.displacement.predict(batch)[0],
        "mask": stack.mask,
    }


def summarize_fields(fields: dict[str, np.ndarray], pv: ParameterVector,
                     grid: GridSpec) -> dict[str, float]:
    """Scalar summary recomputable from the response tensors alone."""
    mask = fields["mask"].astype(bool)
    thinning = fields["thinning"][0]
    mesh = as_formed_mesh(fields["displacement"], fields["thinning"],
                          fields["mask"], grid)
    z, coverage = formed_height_map(mesh, grid)
    wrinkles = wrinkle_height(z, pv, grid, mask=coverage)
    return {
        "max_thinning": float(thinning[mask].max()),
        "mean_thinning": float(thinning[mask].mean()),
        "max_wrinkle_height_mm": float(np.abs(wrinkles).max()),
    }


def create_app(models: ModelBundle | None = None) -> FastAPI:
    app = FastAPI(title="formcast")
    app.state.models = models

    def _require_models() -> ModelBundle:
        if app.state.models is None:
            raise HTTPException(status_code=503,
                                detail="checkpoints not loaded")
        return app.state.models

    @app.get("/health")
    def health():
        return {"status": "ok", "loaded": app.state.models is not None}

    @app.get("/meta")
    def meta():
        m = _require_models()
        return {
            "bounds": m.bounds.as_dict(),
            "models": {"thinning": m.thinning_id,
                       "displacement": m.displacement_id},
            "resolution": m.resolution,
        }

    @lru_cache(maxsize=256)
    def _cached_response(model_key, n, pv_fields):
        # responses are pure functions of (checkpoints, params, grid), so
        # repeated what-if requests are served from memory
        m = app.state.models
        pv = ParameterVector(*pv_fields)
        grid = GridSpec(n_pixels=n, frame_mm=740.0)
        fields = predict_fields(m, pv, grid)
        summary = summarize_fields(fields, pv, grid)
        return {
            "thinning": _b64_tensor("thinning", fields["thinning"]),
            "displacement": _b64_tensor("displacement",
                                        fields["displacement"]),
            "mask": _b64_tensor("mask", fields["mask"].astype(np.float32)),
            "summary": summary,
            "models": {"thinning": m.thinning_id,
                       "displacement": m.displacement_id},
        }

    @app.post("/predict")
    def predict(body: dict):
        m = _require_models()
        t0 = time.monotonic()
        try:
            pv = ParameterVector.from_dict(
                {k: float(body[k]) for k in ParameterVector.__dataclass_fields__})
        except (KeyError, TypeError, ValueError):
            raise HTTPException(status_code=400,
                                detail={"violations": ["malformed request: "
                                                       "need the 9 parameter fields"]})
        violations = validate(pv, m.bounds)
        if violations:
            raise HTTPException(status_code=400,
                                detail={"violations": violations})
        n = int(body.get("resolution", m.resolution))
        if n != m.resolution:
            raise HTTPException(
                status_code=400,
                detail={"violations": [
                    f"grid override {n} does not match the model "
                    f"resolution {m.resolution}"]})
        key = (m.thinning_id, m.displacement_id)
        response = dict(_cached_response(key, n, tuple(
            getattr(pv, f) for f in ParameterVector.__dataclass_fields__)))
        response["latency_ms"] = (time.monotonic() - t0) * 1000.0
        return response

    return app
