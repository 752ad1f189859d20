"""Particle flow of a velocity field and its spatial Jacobian.

``eta(s; t, x)`` is the position at time ``s`` of the particle that sits at
``x`` at time ``t``. Trajectories are integrated with fixed-step classical
RK4; the Jacobian ``Theta = d eta / d x`` rides along in the same RK4 loop
together with ``log det Theta``, integrated as ``div v`` along the path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels, spd3
from .errors import LeftDomain, NoConvergence, NonPositiveJacobian
from .fields import GridSpec, VelocityField, sample_velocity, velocity_slice


@dataclass
class Trajectory:
    """Sampled path(s). ``times`` is ``(nsamples,) + batch``, ``positions`` adds a 3-axis."""

    x: np.ndarray
    t_from: np.ndarray | float
    t_to: np.ndarray | float
    times: np.ndarray
    positions: np.ndarray
    iterations: np.ndarray | None = None
    residuals: list = field(default_factory=list)

    @property
    def endpoint(self) -> np.ndarray:
        return self.positions[-1]


@dataclass
class FlowResult:
    """Per-voxel endpoints ``eta(t_to; t_from, x)`` and Jacobians ``Theta``.

    ``exp_div`` holds ``exp(int div v ds)`` along each path; it is ``None``
    for results read back from disk. Endpoint-only flows carry no Jacobian.
    """

    grid: GridSpec
    t_from: float
    t_to: float
    endpoints: np.ndarray
    jacobian: np.ndarray | None
    det_theta: np.ndarray | None
    exp_div: np.ndarray | None = None

    def displacement(self) -> np.ndarray:
        return self.endpoints - self.grid.nodes()

    @classmethod
    def identity(cls, grid: GridSpec, t_from: float = 0.0, t_to: float = 0.0) -> "FlowResult":
        eye = np.broadcast_to(np.eye(3), grid.dims + (3, 3)).copy()
        ones = np.ones(grid.dims)
        return cls(grid, t_from, t_to, grid.nodes(), eye, ones, ones.copy())


def _contain(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Clamp sub-voxel overshoot back into the box; larger exits are errors."""
    lo, hi = grid.lower, grid.upper
    h = np.asarray(grid.spacing)
    over = np.maximum(np.maximum(lo - pts, pts - hi), 0.0) / h
    worst = float(over.max()) if over.size else 0.0
    if worst > 1.0:
        raise LeftDomain(f"trajectory left the domain by {worst:.3g} voxels; increase nsteps")
    if worst > 0.0:
        pts = np.clip(pts, lo, hi)
    return pts


def _as_batch(x, t_from, t_to):
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    t0 = np.broadcast_to(np.asarray(t_from, dtype=float), batch)
    t1 = np.broadcast_to(np.asarray(t_to, dtype=float), batch)
    return x, batch, t0, t1


def integrate_trajectory(v: VelocityField, t_from, x, t_to, nsteps: int) -> Trajectory:
    """RK4 on ``d eta/ds = v(eta, s)`` from ``(t_from, x)`` to ``t_to``.

    ``x`` may be a single point or a batch ``(..., 3)``; ``t_from`` and
    ``t_to`` broadcast against the batch. Backward integration
    (``t_to < t_from``) just uses a negative step.
    """
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    x, batch, t0, t1 = _as_batch(x, t_from, t_to)
    grid = v.grid
    dt = (t1 - t0) / nsteps
    dtc = dt[..., None]
    times = np.empty((nsteps + 1,) + batch)
    pos = np.empty((nsteps + 1,) + batch + (3,))
    times[0] = t0
    pos[0] = x
    eta = x.copy()
    for k in range(nsteps):
        s = t0 + k * dt
        k1 = sample_velocity(v, eta, s)
        k2 = sample_velocity(v, eta + 0.5 * dtc * k1, s + 0.5 * dt)
        k3 = sample_velocity(v, eta + 0.5 * dtc * k2, s + 0.5 * dt)
        k4 = sample_velocity(v, eta + dtc * k3, s + dt)
        eta = _contain(grid, eta + dtc / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        times[k + 1] = t0 + (k + 1) * dt
        pos[k + 1] = eta
    times[-1] = t1
    return Trajectory(x, t_from, t_to, times, pos)


def picard_trajectory(v: VelocityField, t_from, x, t_to, tol: float, max_iter: int,
                      nodes: int = 257) -> Trajectory:
    """Fixed-point iteration ``phi <- x + int_{t_from}^{s} v(phi(r), r) dr``.

    Starts from the constant path ``phi_0 = x`` on ``nodes`` equally spaced
    times; the integral is a cumulative trapezoid. Stops per trajectory once
    successive iterates are within ``tol`` in sup-distance. ``iterations``
    records how many applications of the map each path needed.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if nodes < 2:
        raise ValueError("nodes must be >= 2")
    x, batch, t0, t1 = _as_batch(x, t_from, t_to)
    xf = x.reshape(-1, 3)
    n = xf.shape[0]
    t0f, t1f = t0.reshape(-1), t1.reshape(-1)
    frac = np.linspace(0.0, 1.0, nodes)
    s = t0f[None, :] + frac[:, None] * (t1f - t0f)[None, :]
    s[-1] = t1f
    ds = ((t1f - t0f) / (nodes - 1))[None, :, None]
    phi = np.broadcast_to(xf, (nodes, n, 3)).copy()
    iterations = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    residuals = []
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        f = sample_velocity(v, phi[:, idx], s[:, idx])
        inc = 0.5 * ds[:, idx] * (f[1:] + f[:-1])
        new = np.empty_like(f)
        new[0] = xf[idx]
        new[1:] = xf[idx][None] + np.cumsum(inc, axis=0)
        dist = np.linalg.norm(new - phi[:, idx], axis=-1).max(axis=0)
        phi[:, idx] = new
        res = np.zeros(n)
        res[idx] = dist
        residuals.append(res)
        done = dist <= tol
        iterations[idx[done]] = it
        active[idx[done]] = False
        if not active.any():
            break
    if active.any():
        raise NoConvergence(
            f"{int(active.sum())} trajectories not within tol={tol:g} after {max_iter} iterations"
        )
    phi = _contain(v.grid, phi)
    phi[0] = xf
    return Trajectory(
        x, t_from, t_to,
        s.reshape((nodes,) + batch),
        phi.reshape((nodes,) + batch + (3,)),
        iterations.reshape(batch),
        residuals,
    )


def flow_map(v: VelocityField, t_from: float, t_to: float, nsteps: int,
             jacobian: bool = True) -> FlowResult:
    """Endpoints and Jacobians of the flow for every grid node.

    State per node: position (3), Jacobian (3x3) and the running integral
    of ``div v`` (1), all advanced by one RK4 with shared stage evaluations.
    With ``jacobian=False`` only positions are integrated (identical
    endpoints, no Jacobian or determinant fields).
    """
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    grid = v.grid
    eta = grid.nodes().reshape(-1, 3)
    n = eta.shape[0]
    theta = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    logdet = np.zeros(n)
    dt = (float(t_to) - float(t_from)) / nsteps
    if not np.any(v.samples):
        # every stage is exactly zero; skip the arithmetic
        nsteps = 0

    lower, spacing = grid.lower, np.asarray(grid.spacing)

    if not jacobian:
        for k in range(nsteps):
            s = float(t_from) + k * dt
            sl = velocity_slice(v, s)
            mid = velocity_slice(v, s + 0.5 * dt)
            end = velocity_slice(v, s + dt)
            a1 = _kernels.value_only(sl, lower, spacing, eta)
            a2 = _kernels.value_only(mid, lower, spacing, eta + 0.5 * dt * a1)
            a3 = _kernels.value_only(mid, lower, spacing, eta + 0.5 * dt * a2)
            a4 = _kernels.value_only(end, lower, spacing, eta + dt * a3)
            eta = _contain(grid, eta + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4))
        return FlowResult(grid, float(t_from), float(t_to), eta.reshape(grid.dims + (3,)),
                          None, None, None)

    def rhs(p, th, s):
        vel, g = _kernels.value_and_gradient(velocity_slice(v, s), lower, spacing, p)
        return vel, g @ th, np.trace(g, axis1=1, axis2=2)

    for k in range(nsteps):
        s = float(t_from) + k * dt
        a1, b1, c1 = rhs(eta, theta, s)
        a2, b2, c2 = rhs(eta + 0.5 * dt * a1, theta + 0.5 * dt * b1, s + 0.5 * dt)
        a3, b3, c3 = rhs(eta + 0.5 * dt * a2, theta + 0.5 * dt * b2, s + 0.5 * dt)
        a4, b4, c4 = rhs(eta + dt * a3, theta + dt * b3, s + dt)
        eta = _contain(grid, eta + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4))
        theta = theta + dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        logdet = logdet + dt / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)

    shape = grid.dims
    return FlowResult(
        grid,
        float(t_from),
        float(t_to),
        eta.reshape(shape + (3,)),
        theta.reshape(shape + (3, 3)),
        spd3.det3(theta).reshape(shape),
        np.exp(logdet).reshape(shape),
    )


def det_identity_report(fr: FlowResult) -> tuple[float, float]:
    """Max and mean of ``|det Theta - exp(int div v)| / exp(int div v)``."""
    if fr.exp_div is None:
        raise ValueError("flow result carries no divergence diagnostics")
    rel = np.abs(fr.det_theta - fr.exp_div) / fr.exp_div
    return float(rel.max()), float(rel.mean())


def build_h_and_inverse(v: VelocityField, nsteps: int) -> tuple[FlowResult, FlowResult]:
    """``h = eta(0; tau, .)`` and ``h^-1 = eta(tau; 0, .)`` on the grid.

    The Jacobian of ``h^-1`` is the ``J`` used for tensor reorientation.
    """
    tau = v.grid.tau
    h = flow_map(v, tau, 0.0, nsteps)
    h_inv = flow_map(v, 0.0, tau, nsteps)
    for name, fr in (("h", h), ("h^-1", h_inv)):
        bad = fr.det_theta <= 0.0
        if bad.any():
            raise NonPositiveJacobian(
                f"det Theta <= 0 at {int(bad.sum())} voxels of {name}, first {tuple(np.argwhere(bad)[0])}"
            )
    return h, h_inv


def compose(outer: FlowResult, inner: FlowResult, order: int = 3) -> np.ndarray:
    """Positions ``outer(inner(x))`` for every node.

    ``outer``'s displacement is resampled at ``inner``'s endpoints with a
    spline of the given order.
    """
    grid = outer.grid
    disp = outer.displacement()
    f = (inner.endpoints - grid.lower) / np.asarray(grid.spacing)
    coords = np.moveaxis(f, -1, 0)
    moved = np.stack(
        [ndimage.map_coordinates(disp[..., c], coords, order=order, mode="nearest")
         for c in range(3)],
        axis=-1,
    )
    return inner.endpoints + moved


def inverse_consistency_error(h: FlowResult, h_inv: FlowResult, order: int = 3) -> np.ndarray:
    """``|h(h^-1(x)) - x|`` per node, in voxel units."""
    grid = h.grid
    err = (compose(h, h_inv, order) - grid.nodes()) / np.asarray(grid.spacing)
    return np.linalg.norm(err, axis=-1)
