"""Discrete domain, tensor images, velocity fields and the F-norm.

The domain is the axis-aligned box spanned by the grid nodes
``origin + i * spacing`` for ``i = 0 .. dims - 1``. Velocity samples live on
those nodes at ``nt`` equally spaced times in ``[0, tau]``; the first and
last node along every axis form the boundary, where velocities vanish.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from . import _kernels, spd3
from .errors import (
    BoundaryViolation,
    GridMismatch,
    GridTooSmall,
    NotSpd,
    TimeOutOfRange,
)

# all (a, b, c) with a + b + c = 3, i.e. the ten third-order partials
MULTI_INDICES = tuple(
    (a, b, c) for a, b, c in product(range(4), repeat=3) if a + b + c == 3
)


@dataclass(frozen=True)
class GridSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    tau: float = 1.0
    nt: int = 2

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(h) for h in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "nt", int(self.nt))
        if len(self.dims) != 3 or len(self.spacing) != 3 or len(self.origin) != 3:
            raise ValueError("dims, spacing and origin need three entries")
        if min(self.dims) < 4:
            raise GridTooSmall(f"dims {self.dims}: need at least 4 nodes per axis")
        if min(self.spacing) <= 0 or not np.all(np.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.nt < 2:
            raise ValueError(f"nt must be >= 2, got {self.nt}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def nvox(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def cell_volume(self) -> float:
        return self.spacing[0] * self.spacing[1] * self.spacing[2]

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.tau, self.nt)

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``dims + (3,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.dims, dtype=bool)
        m[0, :, :] = m[-1, :, :] = True
        m[:, 0, :] = m[:, -1, :] = True
        m[:, :, 0] = m[:, :, -1] = True
        return m

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        m = np.zeros(self.dims, dtype=bool)
        m[margin:-margin, margin:-margin, margin:-margin] = True
        return m

    def same_space(self, other: "GridSpec") -> bool:
        return (self.dims == other.dims
                and np.allclose(self.spacing, other.spacing, rtol=1e-12, atol=0)
                and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12 * max(self.spacing)))

    def with_time(self, tau: float | None = None, nt: int | None = None) -> "GridSpec":
        return GridSpec(self.dims, self.spacing, self.origin,
                        self.tau if tau is None else tau, self.nt if nt is None else nt)


def check_same_grid(a: GridSpec, b: GridSpec) -> None:
    if not a.same_space(b):
        raise GridMismatch(f"grids differ: {a.dims}/{a.spacing} vs {b.dims}/{b.spacing}")


@dataclass(frozen=True)
class TensorImage:
    """Regular grid of diffusion tensors stored as (xx, xy, xz, yy, yz, zz)."""

    grid: GridSpec
    voxels: np.ndarray

    def __post_init__(self):
        vox = np.array(self.voxels, dtype=float)
        if vox.shape != self.grid.dims + (6,):
            raise ValueError(f"voxels shape {vox.shape} != {self.grid.dims + (6,)}")
        if not np.all(np.isfinite(vox)):
            raise ValueError("tensor image has non-finite entries")
        bad = ~spd3.is_spd(spd3.sym6_to_mat(vox))
        if bad.any():
            raise NotSpd(np.argwhere(bad)[0])
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)

    def matrices(self) -> np.ndarray:
        return spd3.sym6_to_mat(self.voxels)


@dataclass(frozen=True)
class VelocityField:
    """Time-sampled velocity, shape ``(nt,) + dims + (3,)``, zero on the boundary."""

    grid: GridSpec
    samples: np.ndarray

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        if s.shape != (self.grid.nt,) + self.grid.dims + (3,):
            raise ValueError(f"samples shape {s.shape} does not match grid")
        if not np.all(np.isfinite(s)):
            raise ValueError("velocity field has non-finite entries")
        if np.any(s[:, self.grid.boundary_mask()] != 0.0):
            raise BoundaryViolation("velocity must vanish on boundary voxels")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_array(cls, grid: GridSpec, samples) -> "VelocityField":
        """Build a field, zeroing whatever ``samples`` hold on the boundary."""
        s = np.array(samples, dtype=float)
        s[:, grid.boundary_mask()] = 0.0
        return cls(grid, s)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        return cls(grid, np.zeros((grid.nt,) + grid.dims + (3,)))

    def scaled(self, c: float) -> "VelocityField":
        return VelocityField(self.grid, c * self.samples)

    def __add__(self, other: "VelocityField") -> "VelocityField":
        check_same_grid(self.grid, other.grid)
        return VelocityField(self.grid, self.samples + other.samples)

    def max_speed(self) -> float:
        return float(np.linalg.norm(self.samples, axis=-1).max())


# ---------------------------------------------------------------- interpolation

def trilinear(values: np.ndarray, grid: GridSpec, x, outside: str = "zero") -> np.ndarray:
    """Interpolate node data ``values`` (``dims + (C,)``) at points ``x`` (``(..., 3)``).

    ``outside="zero"`` returns 0 for points outside the closed box,
    ``outside="clamp"`` projects them onto it. Node positions reproduce
    the stored data exactly.
    """
    if outside not in ("zero", "clamp"):
        raise ValueError(outside)
    x = np.asarray(x, dtype=float)
    vals = np.ascontiguousarray(values, dtype=float)
    out = _kernels.trilinear_points(vals, grid.lower, np.asarray(grid.spacing),
                                    np.ascontiguousarray(x.reshape(-1, 3)), outside == "clamp")
    return out.reshape(x.shape[:-1] + (vals.shape[-1],))


def _check_time(grid: GridSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    slack = 1e-12 * grid.tau
    if np.any(t < -slack) or np.any(t > grid.tau + slack) or not np.all(np.isfinite(t)):
        raise TimeOutOfRange(f"t outside [0, {grid.tau}]")
    return np.clip(t, 0.0, grid.tau)


def _time_bracket(grid: GridSpec, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pos = t * ((grid.nt - 1) / grid.tau)
    k = np.minimum(np.floor(pos).astype(np.intp), grid.nt - 2)
    return k, pos - k


def velocity_slice(v: VelocityField, t: float) -> np.ndarray:
    """Spatial velocity samples at a single time (linear in time)."""
    t = float(_check_time(v.grid, t))
    k, a = _time_bracket(v.grid, np.asarray(t))
    k, a = int(k), float(a)
    if a == 0.0:
        return v.samples[k]
    return (1.0 - a) * v.samples[k] + a * v.samples[k + 1]


def sample_velocity(v: VelocityField, x, t) -> np.ndarray:
    """Velocity at points ``x`` (``(..., 3)``) and time(s) ``t``.

    Trilinear in space, linear in time, zero outside the domain. ``t`` is a
    scalar or an array broadcastable against ``x.shape[:-1]``.
    """
    x = np.asarray(x, dtype=float)
    t = _check_time(v.grid, t)
    if t.ndim == 0:
        return trilinear(velocity_slice(v, float(t)), v.grid, x)
    t = np.broadcast_to(t, x.shape[:-1]).reshape(-1)
    k, a = _time_bracket(v.grid, t)
    xf = x.reshape(-1, 3)
    out = np.empty_like(xf)
    for kk in np.unique(k):
        sel = k == kk
        lo = trilinear(v.samples[kk], v.grid, xf[sel])
        hi = trilinear(v.samples[kk + 1], v.grid, xf[sel])
        aa = a[sel, None]
        out[sel] = (1.0 - aa) * lo + aa * hi
    return out.reshape(x.shape)


def _value_and_gradient(values: np.ndarray, grid: GridSpec, x):
    """Interpolated value and central-difference Jacobian (half-voxel step)."""
    x = np.asarray(x, dtype=float)
    val, grad = _kernels.value_and_gradient(
        np.ascontiguousarray(values, dtype=float), grid.lower, np.asarray(grid.spacing),
        np.ascontiguousarray(x.reshape(-1, 3)))
    return val.reshape(x.shape), grad.reshape(x.shape[:-1] + (3, 3))


def velocity_and_gradient(v: VelocityField, x, t: float):
    """``v(x, t)`` and ``grad[..., i, j] = d v_i / d x_j`` at a common time ``t``."""
    return _value_and_gradient(velocity_slice(v, t), v.grid, x)


# ------------------------------------------------------------- operator L

def _fd_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights on integer ``offsets`` for the given derivative."""
    n = len(offsets)
    a = np.vander(offsets.astype(float), n, increasing=True).T
    fact = np.array([np.prod(np.arange(1, p + 1)) for p in range(n)], dtype=float)
    rhs = np.zeros(n)
    rhs[order] = fact[order]
    return np.linalg.solve(a, rhs)


@lru_cache(maxsize=64)
def diff_matrix(n: int, h: float, order: int) -> np.ndarray:
    """Dense ``n x n`` matrix applying a second-order accurate derivative.

    Central stencils where they fit (3 points for orders 1-2, 5 points for
    order 3), one-sided windows of ``order + 2`` nodes near the ends.
    """
    if order == 0:
        return np.eye(n)
    half = 1 if order <= 2 else 2
    npts = min(order + 2, n)
    d = np.zeros((n, n))
    for i in range(n):
        if i - half >= 0 and i + half <= n - 1:
            start, stop = i - half, i + half + 1
        else:
            start = int(np.clip(i - half, 0, n - npts))
            stop = start + npts
        idx = np.arange(start, stop)
        d[i, idx] = _fd_weights(idx - i, order)
    d /= h ** order
    d.setflags(write=False)
    return d


def third_jet(values: np.ndarray, spacing) -> np.ndarray:
    """All third-order partials of node data ``dims + (C,)``.

    Returns ``dims + (10, C)`` ordered like ``MULTI_INDICES``.
    """
    values = np.asarray(values, dtype=float)
    nx, ny, nz = values.shape[:3]
    hx, hy, hz = (float(h) for h in spacing)
    if min(nx, ny, nz) < 4:
        raise GridTooSmall("third differences need at least 4 nodes per axis")
    dx = [np.einsum("ij,j...->i...", diff_matrix(nx, hx, a), values) for a in range(4)]
    out = np.empty(values.shape[:3] + (len(MULTI_INDICES),) + values.shape[3:])
    for m, (a, b, c) in enumerate(MULTI_INDICES):
        f = dx[a]
        if b:
            f = np.einsum("ij,xj...->xi...", diff_matrix(ny, hy, b), f)
        if c:
            f = np.einsum("ij,xyj...->xyi...", diff_matrix(nz, hz, c), f)
        out[:, :, :, m] = f
    return out


def apply_L(v: VelocityField, ti: int) -> np.ndarray:
    """Third-order jet of the velocity at time sample ``ti``: ``dims + (10, 3)``."""
    return third_jet(v.samples[ti], v.grid.spacing)


def _space_weights(grid: GridSpec) -> np.ndarray:
    # node-centred cells; boundary nodes own half a cell per axis
    ws = []
    for n, h in zip(grid.dims, grid.spacing):
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
        ws.append(w)
    return ws[0][:, None, None] * ws[1][None, :, None] * ws[2][None, None, :]


def _time_weights(grid: GridSpec) -> np.ndarray:
    dt = grid.tau / (grid.nt - 1)
    w = np.full(grid.nt, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


def l2_norm_sq_jet(jet: np.ndarray, grid: GridSpec) -> float:
    """Spatial quadrature of ``sum |D^a v_i|^2`` for one time sample."""
    dens = np.einsum("xyzmc,xyzmc->xyz", jet, jet)
    return float(np.sum(dens * _space_weights(grid)))


def f_norm_sq(v: VelocityField) -> float:
    """``||v||_F^2``: trapezoid in time of the spatial integral of the squared jet."""
    wt = _time_weights(v.grid)
    total = 0.0
    for ti in range(v.grid.nt):
        if wt[ti] == 0.0 or not np.any(v.samples[ti]):
            continue
        total += wt[ti] * l2_norm_sq_jet(apply_L(v, ti), v.grid)
    return total


# ------------------------------------------------------------ diagnostics

def _l1(a: np.ndarray, axes) -> np.ndarray:
    return np.abs(a).sum(axis=axes)


def probe_field(values: np.ndarray, grid: GridSpec, npairs: int, seed: int = 0) -> tuple[float, float]:
    """Empirical Lipschitz and Hoelder-1/2 quotients of a static vector field.

    Pairs are drawn with log-uniform separation between half a voxel and the
    box diagonal. Distances use the entrywise absolute sum, as does the
    gradient difference.
    """
    if npairs < 1:
        raise ValueError("npairs must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = grid.lower, grid.upper
    x = lo + rng.random((npairs, 3)) * (hi - lo)
    direction = rng.normal(size=(npairs, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    rmin = 0.5 * min(grid.spacing)
    rmax = float(np.linalg.norm(hi - lo))
    r = np.exp(rng.uniform(np.log(rmin), np.log(rmax), size=(npairs, 1)))
    y = np.clip(x + r * direction, lo, hi)
    d = _l1(x - y, 1)
    keep = d > 0.0
    if not keep.any():
        return 0.0, 0.0
    x, y, d = x[keep], y[keep], d[keep]
    vx, gx = _value_and_gradient(values, grid, x)
    vy, gy = _value_and_gradient(values, grid, y)
    lip = _l1(vx - vy, 1) / d
    hold = _l1(gx - gy, (1, 2)) / np.sqrt(d)
    return float(lip.max()), float(hold.max())


def lipschitz_probe(v: VelocityField, ti: int, npairs: int, seed: int = 0) -> tuple[float, float]:
    return probe_field(v.samples[ti], v.grid, npairs, seed)
