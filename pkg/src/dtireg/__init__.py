"""Diffeomorphic registration of diffusion tensor images.

A velocity field ``v`` on a regular grid generates a deformation ``h`` by
particle flow; the floating image ``T`` is pulled back through ``h`` with
finite-strain reorientation and compared to the target ``D``. Registration
minimizes ``||v||_F^2 + ||T <> h - D||^2`` over a smooth sine basis.
"""
from .errors import DtiRegError
from .fields import GridSpec, TensorImage, VelocityField
from .flow import FlowResult, build_h_and_inverse, flow_map
from .objective import ObjectiveConfig, ObjectiveReport, grad_check, minimize, objective
from .phantom import make_phantom
from .reorient import fs_transform, ssd

__version__ = "0.1.0"

__all__ = [
    "DtiRegError",
    "FlowResult",
    "GridSpec",
    "ObjectiveConfig",
    "ObjectiveReport",
    "TensorImage",
    "VelocityField",
    "build_h_and_inverse",
    "flow_map",
    "fs_transform",
    "grad_check",
    "make_phantom",
    "minimize",
    "objective",
    "ssd",
]
