"""Finite-strain transport of tensor images and the tensor SSD metric."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd3
from .errors import GridMismatch, NonPositiveJacobian
from .fields import GridSpec, TensorImage, check_same_grid, trilinear
from .flow import FlowResult

# off-diagonal entries appear twice in the full 3x3 matrix
SSD_WEIGHTS = np.array([1.0, 2.0, 2.0, 1.0, 2.0, 1.0])


@dataclass(frozen=True)
class ReorientedImage:
    grid: GridSpec
    voxels: np.ndarray
    source: str | None = None
    deformation_id: str | None = None

    def to_image(self) -> TensorImage:
        return TensorImage(self.grid, self.voxels)


def _pullback_array(voxels: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    # componentwise trilinear, reads outside the box clamp to the boundary
    return trilinear(voxels, grid, points, outside="clamp")


def pullback(T: TensorImage, h_field: FlowResult) -> TensorImage:
    """``T o h`` sampled at the nodes: componentwise trilinear at ``h(x)``.

    Interpolated tensors that fall out of the SPD cone are re-projected by
    clamping their eigenvalues.
    """
    if not T.grid.same_space(h_field.grid):
        raise GridMismatch("image and deformation grids differ")
    out = _pullback_array(T.voxels, T.grid, h_field.endpoints)
    mats = spd3.sym6_to_mat(out)
    bad = ~spd3.is_spd(mats)
    if bad.any():
        out[bad] = spd3.mat_to_sym6(spd3.project_spd(mats[bad]))
    return TensorImage(T.grid, out)


def _fs_array(pulled: np.ndarray, jac: np.ndarray) -> np.ndarray:
    d = spd3.det3(jac)
    if np.any(d <= 0.0):
        raise NonPositiveJacobian(f"det J <= 0 at {int(np.count_nonzero(d <= 0.0))} voxels")
    r = spd3.polar_rotation_newton(jac)
    m = spd3.sym6_to_mat(pulled)
    return spd3.mat_to_sym6(r @ m @ np.swapaxes(r, -1, -2))


def fs_transform(T: TensorImage, h_field: FlowResult, J_field,
                 source: str | None = None, deformation_id: str | None = None) -> ReorientedImage:
    """``T <> h``: pull back through ``h`` then conjugate each voxel by
    ``R = J^T (J J^T)^{-1/2}``.

    ``J_field`` is a ``dims + (3, 3)`` array or a FlowResult whose Jacobian
    is used (normally the forward flow ``h^-1``).
    """
    jac = J_field.jacobian if isinstance(J_field, FlowResult) else np.asarray(J_field, dtype=float)
    if jac is None:
        raise ValueError("J_field carries no Jacobian")
    if jac.shape != T.grid.dims + (3, 3):
        raise GridMismatch(f"Jacobian field shape {jac.shape} does not match image")
    pulled = pullback(T, h_field)
    return ReorientedImage(T.grid, _fs_array(pulled.voxels, jac), source, deformation_id)


def _ssd_array(a: np.ndarray, b: np.ndarray, cell_volume: float) -> float:
    d = a - b
    return float(np.sum((d * d) @ SSD_WEIGHTS) * cell_volume)


def ssd(Tt, D) -> float:
    """Sum over voxels of the squared 3x3 entrywise tensor difference, times
    the cell volume. Accepts TensorImage or ReorientedImage on either side."""
    check_same_grid(Tt.grid, D.grid)
    return _ssd_array(np.asarray(Tt.voxels), np.asarray(D.voxels), Tt.grid.cell_volume)
