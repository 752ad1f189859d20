"""Synthetic tensor images for tests and demos."""
from __future__ import annotations

import numpy as np

from . import spd3
from .errors import BadParams
from .fields import GridSpec, TensorImage

KINDS = ("uniform", "two-compartment", "fiber-bundle")


def _stick(direction, axial: float, radial: float) -> np.ndarray:
    e = np.asarray(direction, dtype=float)
    n = np.linalg.norm(e)
    if not np.isfinite(n) or n == 0.0:
        raise BadParams("fiber direction must be a nonzero finite vector")
    e = e / n
    return radial * np.eye(3) + (axial - radial) * np.outer(e, e)


def make_phantom(grid: GridSpec, kind: str = "two-compartment", *, direction=(1.0, 0.0, 0.0),
                 axial: float = 1.7, radial: float = 0.3, iso: float = 0.8,
                 radius: float = 0.3, noise: float = 0.0, max_aniso: float = 1e3,
                 seed: int = 0) -> TensorImage:
    """Build a tensor phantom on ``grid``.

    ``uniform``: the stick tensor everywhere. ``two-compartment``: the stick
    tensor inside a ball of ``radius`` (fraction of the shortest box side)
    centred in the box, isotropic ``iso`` outside. ``fiber-bundle``: a
    cylinder along ``direction`` through the box centre holding the stick
    tensor, isotropic elsewhere. ``noise`` adds symmetric Gaussian noise
    scaled by ``iso`` and re-projects onto the SPD cone. Diffusivities are
    in um^2/ms, which keeps tensor entries of order one.
    """
    if kind not in KINDS:
        raise BadParams(f"unknown phantom kind {kind!r}; expected one of {KINDS}")
    if not (axial > 0 and radial > 0 and iso > 0):
        raise BadParams("diffusivities must be positive")
    if axial / radial > max_aniso:
        raise BadParams(f"anisotropy ratio {axial / radial:.3g} exceeds max_aniso={max_aniso:g}")
    if not 0 < radius <= 0.5:
        raise BadParams("radius must lie in (0, 0.5]")
    if noise < 0:
        raise BadParams("noise must be non-negative")
    stick = _stick(direction, axial, radial)
    x = grid.nodes()
    centre = 0.5 * (grid.lower + grid.upper)
    r = radius * float(np.min(grid.upper - grid.lower))
    if kind == "uniform":
        inside = np.ones(grid.dims, dtype=bool)
    elif kind == "two-compartment":
        inside = np.linalg.norm(x - centre, axis=-1) <= r
    else:
        e = np.asarray(direction, dtype=float) / np.linalg.norm(direction)
        d = x - centre
        perp = d - (d @ e)[..., None] * e
        inside = np.linalg.norm(perp, axis=-1) <= r
    mats = np.where(inside[..., None, None], stick, iso * np.eye(3))
    if noise > 0:
        rng = np.random.default_rng(seed)
        n = rng.normal(scale=noise * iso, size=mats.shape)
        mats = spd3.project_spd(mats + 0.5 * (n + np.swapaxes(n, -1, -2)), eps_rel=1e-3)
    return TensorImage(grid, spd3.mat_to_sym6(mats))
