"""Registration energy ``H(v) = ||v||_F^2 + ||T <> h - D||^2`` and its descent.

Velocities are searched in the span of a :class:`~dtireg.basis.SineBasis`.
The gradient with respect to the coefficients is taken by central finite
differences and steps are accepted by Armijo backtracking, so every
iterate of the descent has a strictly lower energy than the one before.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .basis import SineBasis
from .errors import BadConfig, DtiRegError, GridMismatch, NonPositiveJacobian
from .fields import (
    TensorImage,
    VelocityField,
    _space_weights,
    _time_weights,
    check_same_grid,
    f_norm_sq,
    probe_field,
    third_jet,
)
from .flow import build_h_and_inverse, flow_map
from .reorient import _fs_array, _pullback_array, _ssd_array, fs_transform, ssd

log = logging.getLogger(__name__)


@dataclass
class ObjectiveConfig:
    nsteps_flow: int = 4
    modes: int = 3
    nt: int = 2
    tau: float = 1.0
    max_iter: int = 12
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    min_step: float = 1e-12
    grad_eps: float = 1e-4
    stop_tol: float | None = None
    reg_weight: float = 1.0
    probe_pairs: int = 2000
    seed: int = 0

    def __post_init__(self):
        for name in ("nsteps_flow", "modes", "nt", "max_iter", "probe_pairs"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise BadConfig(f"{name} must be a positive integer")
        if self.nt < 2:
            raise BadConfig("nt must be >= 2")
        for name in ("tau", "initial_step", "min_step", "grad_eps", "reg_weight"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise BadConfig(f"{name} must be positive")
        if not 0 < self.armijo_c1 < 1 or not 0 < self.backtrack < 1:
            raise BadConfig("armijo_c1 and backtrack must lie in (0, 1)")
        if self.stop_tol is not None and not self.stop_tol >= 0:
            raise BadConfig("stop_tol must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise BadConfig(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise BadConfig(str(e)) from None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ObjectiveReport:
    reg: float
    data: float
    total: float
    trace: list = field(default_factory=list)
    lipschitz: float | None = None
    holder: float | None = None
    status: str = "evaluated"
    iterations: int = 0
    min_det: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class Problem:
    """Floating/target pair plus configuration; evaluates ``H`` at coefficients."""

    def __init__(self, T: TensorImage, D: TensorImage, cfg: ObjectiveConfig):
        check_same_grid(T.grid, D.grid)
        self.T, self.D, self.cfg = T, D, cfg
        self.grid = T.grid.with_time(tau=cfg.tau, nt=cfg.nt)
        if cfg.modes > min(self.grid.dims) // 2:
            raise BadConfig(f"modes={cfg.modes} exceeds dims/2 for {self.grid.dims}")
        self.basis = SineBasis(self.grid, cfg.modes)
        self.gram = regularizer_gram(self.basis)
        self.evaluations = 0

    def velocity(self, coeffs) -> VelocityField:
        return self.basis.velocity(coeffs)

    def evaluate(self, coeffs) -> dict:
        """Energy terms at ``coeffs``; raises on degenerate flows."""
        self.evaluations += 1
        v = self.velocity(coeffs)
        cf = np.ravel(coeffs)
        reg = float(cf @ self.gram @ cf)
        n = self.cfg.nsteps_flow
        h = flow_map(v, self.grid.tau, 0.0, n, jacobian=False)
        h_inv = flow_map(v, 0.0, self.grid.tau, n)
        min_det = float(h_inv.det_theta.min())
        if min_det <= 0.0:
            raise NonPositiveJacobian(f"min det J = {min_det:.3e}")
        pulled = _pullback_array(self.T.voxels, self.grid, h.endpoints)
        moved = _fs_array(pulled, h_inv.jacobian)
        data = _ssd_array(moved, self.D.voxels, self.grid.cell_volume)
        total = self.cfg.reg_weight * reg + data
        return {"reg": reg, "data": data, "total": total, "min_det": min_det}

    def total_or_inf(self, coeffs) -> tuple[float, dict | None]:
        try:
            r = self.evaluate(coeffs)
        except DtiRegError as e:
            log.debug("trial point rejected: %s", e)
            return math.inf, None
        return r["total"], r


def fd_gradient(problem: Problem, coeffs, eps: float, fn=None) -> np.ndarray:
    """Central differences of ``fn`` (default: total energy), one coefficient at a time."""
    fn = fn or (lambda c: problem.evaluate(c)["total"])
    c = np.array(coeffs, dtype=float).reshape(-1)
    g = np.empty_like(c)
    for i in range(c.size):
        old = c[i]
        c[i] = old + eps
        fp = fn(c)
        c[i] = old - eps
        fm = fn(c)
        c[i] = old
        g[i] = (fp - fm) / (2.0 * eps)
    return g.reshape(np.shape(coeffs))


def regularizer_gram(basis: SineBasis) -> np.ndarray:
    """Matrix ``G`` with ``f_norm_sq(basis.velocity(c)) == c.ravel() @ G @ c.ravel()``."""
    grid = basis.grid
    m = basis.modes
    bx, by, bz = basis.tables
    modes = np.einsum("kx,ly,mz->klmxyz", bx, by, bz).reshape(m ** 3, *grid.dims)
    jets = third_jet(np.moveaxis(modes, 0, -1), grid.spacing)
    w = _space_weights(grid)
    spatial = np.einsum("xyzak,xyzal,xyz->kl", jets, jets, w)
    wt = _time_weights(grid)
    return np.kron(np.diag(wt), np.kron(np.eye(3), spatial))


def objective(v: VelocityField, T: TensorImage, D: TensorImage,
              cfg: ObjectiveConfig | None = None) -> ObjectiveReport:
    """Evaluate ``H(v)`` for an arbitrary velocity field (not just the basis span)."""
    cfg = cfg or ObjectiveConfig()
    check_same_grid(T.grid, D.grid)
    check_same_grid(T.grid, v.grid)
    reg = f_norm_sq(v)
    h, h_inv = build_h_and_inverse(v, cfg.nsteps_flow)
    data = ssd(fs_transform(T, h, h_inv), D)
    total = cfg.reg_weight * reg + data
    return ObjectiveReport(reg, data, total, min_det=float(h_inv.det_theta.min()))


def minimize(T: TensorImage, D: TensorImage, cfg: ObjectiveConfig | None = None,
             callback=None) -> tuple[VelocityField, ObjectiveReport]:
    """Armijo gradient descent on the sine coefficients, starting from ``v = 0``.

    Stops with status ``"converged"`` once an accepted step lowers ``H`` by
    less than ``stop_tol`` (default ``1e-8 * H(0)``) or no step length passes
    the Armijo test; status ``"budget"`` means ``max_iter`` ran out and the
    best (last) iterate is returned.
    """
    cfg = cfg or ObjectiveConfig()
    prob = Problem(T, D, cfg)
    c = prob.basis.zeros()
    cur = prob.evaluate(c)
    f = cur["total"]
    stop_tol = cfg.stop_tol if cfg.stop_tol is not None else 1e-8 * f
    trace = [{"iter": 0, "total": f, "reg": cur["reg"], "data": cur["data"],
              "step": 0.0, "grad_norm": None, "min_det": cur["min_det"]}]
    status = "budget"
    alpha = None
    it = 0
    if f == 0.0:
        status = "converged"
    while status == "budget" and it < cfg.max_iter:
        g = fd_gradient(prob, c, cfg.grad_eps)
        gsq = float(np.sum(g * g))
        gmax = float(np.abs(g).max())
        if gmax == 0.0:
            status = "converged"
            break
        if alpha is None:
            alpha = cfg.initial_step / gmax
        accepted = None
        while alpha * gmax >= cfg.min_step:
            trial = c - alpha * g
            ft, rep = prob.total_or_inf(trial)
            if ft <= f - cfg.armijo_c1 * alpha * gsq and ft < f:
                accepted = (trial, ft, rep)
                break
            alpha *= cfg.backtrack
        if accepted is None:
            status = "converged"
            break
        it += 1
        decrease = f - accepted[1]
        c, f, cur = accepted
        trace.append({"iter": it, "total": f, "reg": cur["reg"], "data": cur["data"],
                      "step": alpha, "grad_norm": math.sqrt(gsq), "min_det": cur["min_det"]})
        log.info("iter %d  H=%.6g  step=%.3g  |g|=%.3g", it, f, alpha, math.sqrt(gsq))
        if callback is not None:
            callback(it, c, trace[-1])
        if decrease < stop_tol:
            status = "converged"
            break
        alpha /= cfg.backtrack

    v = prob.velocity(c)
    h = flow_map(v, prob.grid.tau, 0.0, cfg.nsteps_flow, jacobian=False)
    lip, hold = probe_field(h.displacement(), prob.grid, cfg.probe_pairs, cfg.seed)
    report = ObjectiveReport(cur["reg"], cur["data"], f, trace, lip, hold, status, it,
                             min(t["min_det"] for t in trace))
    report.coefficients = c
    return v, report


def grad_check(v, T: TensorImage, D: TensorImage, cfg: ObjectiveConfig | None = None) -> float:
    """Richardson-style consistency of the finite-difference gradient.

    Compares gradients at ``grad_eps`` and ``grad_eps / 2`` and returns
    ``max |g1 - g2| / max |g2|``. ``v`` is a VelocityField (projected onto
    the basis), a coefficient array, or ``None`` for zero.
    """
    cfg = cfg or ObjectiveConfig()
    prob = Problem(T, D, cfg)
    if v is None:
        c = prob.basis.zeros()
    elif isinstance(v, VelocityField):
        if v.grid.dims != prob.grid.dims or v.grid.nt != prob.grid.nt:
            raise GridMismatch("velocity grid does not match the problem")
        c = prob.basis.project(v)
    else:
        c = np.asarray(v, dtype=float).reshape(prob.basis.coeff_shape)
    g1 = fd_gradient(prob, c, cfg.grad_eps)
    g2 = fd_gradient(prob, c, 0.5 * cfg.grad_eps)
    scale = float(np.abs(g2).max())
    diff = float(np.abs(g1 - g2).max())
    if scale == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / scale
