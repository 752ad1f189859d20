"""Property suites run by ``dtireg verify``.

Each check returns a :class:`Check` with the worst residual observed and
the threshold it must stay under. The random generators here are shared
with the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spd3
from .basis import band_limited_field
from .fields import GridSpec
from .flow import (
    build_h_and_inverse,
    det_identity_report,
    flow_map,
    integrate_trajectory,
    inverse_consistency_error,
    picard_trajectory,
)


@dataclass
class Check:
    suite: str
    name: str
    residual: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.threshold)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.suite}.{self.name}: residual {self.residual:.3e} (threshold {self.threshold:.1e})"


def random_rotation(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, 3, 3)))
    q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
    q[np.linalg.det(q) < 0, :, 0] *= -1.0
    return q


def random_spd(rng, n: int, max_cond: float = 1e6, scale: float = 1.0) -> np.ndarray:
    """SPD matrices with log-uniform condition numbers in ``[1, max_cond]``."""
    cond = np.exp(rng.uniform(0.0, np.log(max_cond), n))
    mid = np.exp(rng.uniform(0.0, 1.0, n) * np.log(cond))
    w = np.stack([cond, mid, np.ones(n)], axis=1) * scale / cond[:, None]
    q = random_rotation(rng, n)
    p = (q * w[:, None, :]) @ np.swapaxes(q, 1, 2)
    return 0.5 * (p + np.swapaxes(p, 1, 2))


def random_general(rng, n: int, max_cond: float, positive_det: bool = True) -> np.ndarray:
    """``U diag(s) V^T`` with log-uniform condition numbers up to ``max_cond``."""
    cond = np.exp(rng.uniform(0.0, np.log(max_cond), n))
    mid = np.exp(rng.uniform(0.0, 1.0, n) * np.log(cond))
    s = np.stack([cond, mid, np.ones(n)], axis=1) / cond[:, None] * np.exp(rng.uniform(-1, 1, (n, 1)))
    a = (random_rotation(rng, n) * s[:, None, :]) @ np.swapaxes(random_rotation(rng, n), 1, 2)
    if not positive_det:
        flip = rng.random(n) < 0.5
        a[flip, :, 0] *= -1.0
    return a


def random_sym(rng, n: int, size: float) -> np.ndarray:
    """Symmetric perturbations with ``mat_norm == size``."""
    e = rng.normal(size=(n, 3, 3))
    e = e + np.swapaxes(e, 1, 2)
    return e * (size / spd3.mat_norm(e))[:, None, None]


def spd3_suite(n: int = 1000, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []

    p = random_spd(rng, n, 1e6)
    b = spd3.inv_sqrt_sym(p)
    eye = np.eye(3)
    res = spd3.mat_norm(b @ b @ p - eye) / spd3.mat_norm(p)
    out.append(Check("spd3", "inv_sqrt_residual", float(res.max()), 1e-8))

    j = random_general(rng, n, 1e4)
    r = spd3.polar_rotation(j)
    orth = spd3.mat_norm(r @ np.swapaxes(r, -1, -2) - eye)
    out.append(Check("spd3", "polar_orthogonality", float(orth.max()), 1e-9))
    out.append(Check("spd3", "polar_det", float(np.abs(spd3.det3(r) - 1.0).max()), 1e-9))

    p = random_spd(rng, 100, 1e3)
    lam = spd3.sym_eig(p).values
    worst = 0.0
    for eps in (1e-4, 1e-6):
        lam_e = spd3.sym_eig(p + random_sym(rng, 100, eps)).values
        worst = max(worst, float(np.abs(lam_e - lam).max()) / (100.0 * eps))
    out.append(Check("spd3", "eigen_continuity_ratio", worst, 1.0))

    bmat = random_general(rng, n, 1e6, positive_det=False)
    rhs = rng.normal(size=(n, 3))
    x = spd3.cramer_solve(bmat, rhs)
    ref = np.linalg.solve(bmat, rhs[..., None])[..., 0]
    rel = np.abs(x - ref).max(axis=1) / np.abs(ref).max(axis=1)
    out.append(Check("spd3", "cramer_vs_elimination", float(rel.max()), 1e-10))

    a = random_general(rng, n, 1e3, positive_det=False)
    u, s, v = spd3.svd3(a)
    rec = spd3.mat_norm(u * s[:, None, :] @ np.swapaxes(v, 1, 2) - a) / spd3.mat_norm(a)
    out.append(Check("spd3", "svd_reconstruction", float(rec.max()), 1e-12))
    return out


def flow_suite(dims: int = 16, nsteps: int = 64, npoints: int = 1000, seed: int = 1) -> list[Check]:
    rng = np.random.default_rng(seed)
    n = dims - 1
    grid = GridSpec((dims,) * 3, spacing=(1.0 / n,) * 3, nt=5)
    v = band_limited_field(grid, 3, 0.05, seed=seed)
    out = []

    fr = flow_map(v, 0.0, grid.tau, nsteps)
    coarse, _ = det_identity_report(fr)
    fine, _ = det_identity_report(flow_map(v, 0.0, grid.tau, 2 * nsteps))
    out.append(Check("flow", "det_identity", coarse, 1e-3))
    ratio = coarse / fine if fine > 0 else np.inf
    out.append(Check("flow", "det_identity_refinement_inverse_ratio", 1.0 / ratio, 1.0 / 8.0))

    x = grid.lower + rng.random((npoints, 3)) * (grid.upper - grid.lower)
    t0 = rng.random(npoints) * grid.tau
    t1 = rng.random(npoints) * grid.tau
    rk = integrate_trajectory(v, t0, x, t1, nsteps)
    pc = picard_trajectory(v, t0, x, t1, tol=1e-8, max_iter=50)
    out.append(Check("flow", "picard_rk4_distance",
                     float(np.linalg.norm(rk.endpoint - pc.endpoint, axis=-1).max()), 1e-5))
    out.append(Check("flow", "picard_iterations", float(np.max(pc.iterations)), 20.0))

    h, h_inv = build_h_and_inverse(v, nsteps)
    err = inverse_consistency_error(h, h_inv)[grid.interior_mask()]
    out.append(Check("flow", "inverse_consistency_p99_voxels", float(np.percentile(err, 99)), 1e-2))
    return out


SUITES = {"spd3": spd3_suite, "flow": flow_suite}


def run(suite: str = "all") -> list[Check]:
    names = list(SUITES) if suite == "all" else [suite]
    checks = []
    for name in names:
        checks.extend(SUITES[name]())
    return checks
