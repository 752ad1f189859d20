"""Low-dimensional sine-mode parameterization of velocity fields.

``v_c(x, t_k) = sum_{klm} coeff[k_t, c, k, l, m] sin(k pi u) sin(l pi w) sin(m pi z)``
with ``u, w, z`` the node coordinates normalized to ``[0, 1]``. Every mode
vanishes on the box faces, so any coefficient array yields a valid
``VelocityField``.
"""
from __future__ import annotations

import numpy as np

from .fields import GridSpec, VelocityField


class SineBasis:
    def __init__(self, grid: GridSpec, modes: int):
        if modes < 1:
            raise ValueError("modes must be >= 1")
        if modes > min(grid.dims) // 2:
            raise ValueError(f"modes={modes} exceeds dims/2 for {grid.dims}")
        self.grid = grid
        self.modes = modes
        self.tables = []
        for n in grid.dims:
            u = np.arange(n) / (n - 1)
            tab = np.sin(np.pi * np.arange(1, modes + 1)[:, None] * u[None, :])
            tab[:, 0] = tab[:, -1] = 0.0
            self.tables.append(tab)

    @property
    def coeff_shape(self) -> tuple[int, ...]:
        m = self.modes
        return (self.grid.nt, 3, m, m, m)

    @property
    def size(self) -> int:
        return int(np.prod(self.coeff_shape))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.coeff_shape)

    def samples(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float).reshape(self.coeff_shape)
        bx, by, bz = self.tables
        return np.einsum("tcklm,kx,ly,mz->txyzc", c, bx, by, bz, optimize=True)

    def velocity(self, coeffs) -> VelocityField:
        return VelocityField(self.grid, self.samples(coeffs))

    def project(self, v: VelocityField) -> np.ndarray:
        """Least-squares coefficients of ``v`` (exact for fields in the span).

        Uses discrete sine orthogonality: each table row has squared norm
        ``(n - 1) / 2`` and distinct rows are orthogonal.
        """
        bx, by, bz = self.tables
        norms = [(n - 1) / 2.0 for n in self.grid.dims]
        c = np.einsum("txyzc,kx,ly,mz->tcklm", v.samples, bx, by, bz, optimize=True)
        return c / (norms[0] * norms[1] * norms[2])


def band_limited_field(grid: GridSpec, modes: int, max_speed: float, seed: int = 0,
                       stationary: bool = False) -> VelocityField:
    """Random smooth field with coefficients decaying like ``1/(k^2+l^2+m^2)``,
    rescaled so the largest node speed equals ``max_speed``."""
    rng = np.random.default_rng(seed)
    basis = SineBasis(grid, modes)
    c = rng.normal(size=basis.coeff_shape)
    k = np.arange(1, modes + 1)
    decay = 3.0 / (k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2)
    c *= decay
    if stationary:
        c[:] = c[0]
    s = basis.samples(c)
    peak = np.linalg.norm(s, axis=-1).max()
    return VelocityField.from_array(grid, s * (max_speed / peak))
