"""Forming-feasibility surrogate toolkit.

Parametric deep-drawn corner geometries, a synthetic forming oracle,
raster pipelines, a from-scratch autodiff engine and Res-SE-U-Net, training
and evaluation utilities, 3D reconstruction, and a prediction service.
"""

__version__ = "0.1.0"
