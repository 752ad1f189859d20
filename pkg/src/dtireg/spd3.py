"""Small-matrix linear algebra for 3x3 real and symmetric positive definite
matrices.

Every function accepts a single matrix of shape ``(3, 3)`` or a stack of
shape ``(..., 3, 3)`` and operates element-wise over the leading axes, so
whole tensor images can be processed without Python loops.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NearSingular, NonSymmetric

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 30
SYM_TOL = 1e-12
EPS_SPD_REL = 1e-12
EPS_DET_REL = 1e-15

# storage order of the six independent components
SYM6_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))
_PAIRS = ((0, 1), (0, 2), (1, 2))


class EigenTriple(NamedTuple):
    """Eigenvalues in descending order and unit eigenvectors as columns."""

    values: np.ndarray
    vectors: np.ndarray


def mat_norm(a) -> np.ndarray | float:
    """Entrywise absolute sum, the matrix norm used throughout the model."""
    a = np.asarray(a, dtype=float)
    return np.abs(a).sum(axis=(-2, -1))


def det3(a) -> np.ndarray | float:
    a = np.asarray(a, dtype=float)
    return (
        a[..., 0, 0] * (a[..., 1, 1] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 1])
        - a[..., 0, 1] * (a[..., 1, 0] * a[..., 2, 2] - a[..., 1, 2] * a[..., 2, 0])
        + a[..., 0, 2] * (a[..., 1, 0] * a[..., 2, 1] - a[..., 1, 1] * a[..., 2, 0])
    )


def cofactor(a) -> np.ndarray:
    """Matrix of cofactors; ``cofactor(a)[..., i, j]`` belongs to entry (i, j)."""
    a = np.asarray(a, dtype=float)
    c = np.empty_like(a)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            # cyclic index order absorbs the (-1)^(i+j) sign
            c[..., i, j] = a[..., i1, j1] * a[..., i2, j2] - a[..., i1, j2] * a[..., i2, j1]
    return c


def sym6_to_mat(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    m = np.empty(s.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(SYM6_INDEX):
        m[..., i, j] = s[..., k]
        m[..., j, i] = s[..., k]
    return m


def mat_to_sym6(m) -> np.ndarray:
    """Symmetrize and pack into (xx, xy, xz, yy, yz, zz)."""
    m = np.asarray(m, dtype=float)
    return np.stack([0.5 * (m[..., i, j] + m[..., j, i]) for i, j in SYM6_INDEX], axis=-1)


def _check_symmetric(s: np.ndarray) -> None:
    scale = np.maximum(1.0, np.abs(s).max(axis=(-2, -1)))
    asym = np.abs(s - np.swapaxes(s, -1, -2)).max(axis=(-2, -1))
    if np.any(asym > SYM_TOL * scale):
        raise NonSymmetric(f"asymmetry {float(np.max(asym)):.3e} exceeds tolerance")


def _jacobi(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a flat stack ``(n, 3, 3)``; returns diagonal and rotations."""
    a = a.copy()
    n = a.shape[0]
    v = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    scale = np.sqrt((a * a).sum(axis=(1, 2)))
    tiny = np.finfo(float).tiny / np.finfo(float).eps
    for _ in range(JACOBI_MAX_SWEEPS):
        diag = np.abs(np.diagonal(a, axis1=1, axis2=2))
        done = np.ones(n, dtype=bool)
        for p, q in _PAIRS:
            # relative to the diagonal so small eigenvalues keep their accuracy
            lim = JACOBI_TOL * np.sqrt(diag[:, p] * diag[:, q]) + tiny * scale
            done &= np.abs(a[:, p, q]) <= lim
        if done.all():
            break
        for p, q in _PAIRS:
            apq = a[:, p, q]
            active = apq != 0.0
            if not active.any():
                continue
            safe = np.where(active, apq, 1.0)
            with np.errstate(over="ignore"):
                theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
            big = np.abs(theta) > 1e150
            th = np.where(big, 1.0, theta)
            t = np.where(
                big,
                0.5 / np.where(big, theta, 1.0),
                np.copysign(1.0, th) / (np.abs(th) + np.sqrt(th * th + 1.0)),
            )
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            g = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
            g[:, p, p] = c
            g[:, q, q] = c
            g[:, p, q] = s
            g[:, q, p] = -s
            a = np.swapaxes(g, 1, 2) @ a @ g
            a[:, p, q] = 0.0
            a[:, q, p] = 0.0
            v = v @ g
    return np.diagonal(a, axis1=1, axis2=2).copy(), v


def sym_eig(s) -> EigenTriple:
    """Eigen-decomposition of symmetric 3x3 matrices by cyclic Jacobi rotations.

    Raises NonSymmetric if any matrix departs from symmetry by more than
    1e-12 (relative to its largest entry, floored at 1).
    """
    s = np.asarray(s, dtype=float)
    if s.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {s.shape}")
    _check_symmetric(s)
    batch = s.shape[:-2]
    flat = 0.5 * (s + np.swapaxes(s, -1, -2)).reshape(-1, 3, 3)
    w, v = _jacobi(flat)
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return EigenTriple(w.reshape(batch + (3,)), v.reshape(batch + (3, 3)))


def _complete_basis(u1: np.ndarray) -> np.ndarray:
    """A unit vector orthogonal to each unit row of ``u1``."""
    k = np.argmin(np.abs(u1), axis=1)
    e = np.zeros_like(u1)
    e[np.arange(len(u1)), k] = 1.0
    w = e - (e * u1).sum(axis=1, keepdims=True) * u1
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def svd3(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Singular value decomposition ``a = U diag(S) V^T``.

    V holds the eigenvectors of ``a^T a`` and ``S`` the square roots of its
    eigenvalues (non-negative, descending). U's columns are ``a v_i / s_i``,
    orthonormalized, with Gram-Schmidt completion when singular values
    vanish.
    """
    a = np.asarray(a, dtype=float)
    batch = a.shape[:-2]
    af = a.reshape(-1, 3, 3)
    n = af.shape[0]
    # unit max-entry scaling keeps a^T a clear of underflow and overflow
    amax = np.abs(af).max(axis=(1, 2))
    scale = np.where(amax > 0.0, amax, 1.0)
    af = af / scale[:, None, None]
    w, v = sym_eig(np.swapaxes(af, 1, 2) @ af)
    sv = np.sqrt(np.clip(w, 0.0, None))
    av = af @ v
    cutoff = 1e-12 * sv[:, :1]

    u = np.zeros((n, 3, 3))
    c0 = av[:, :, 0]
    ok0 = (sv[:, 0] > 0.0)[:, None]
    u1 = np.where(ok0, c0 / np.where(ok0, np.linalg.norm(c0, axis=1, keepdims=True), 1.0),
                  np.array([1.0, 0.0, 0.0]))
    c1 = av[:, :, 1]
    for _ in range(2):
        c1 = c1 - (c1 * u1).sum(axis=1, keepdims=True) * u1
    n1 = np.linalg.norm(c1, axis=1, keepdims=True)
    ok1 = n1 > cutoff
    u2 = np.where(ok1, c1 / np.where(ok1, n1, 1.0), _complete_basis(u1))
    u3 = np.cross(u1, u2)
    flip = (u3 * av[:, :, 2]).sum(axis=1) < 0.0
    u3[flip] *= -1.0
    u[:, :, 0], u[:, :, 1], u[:, :, 2] = u1, u2, u3
    # u_i . a v_i recovers small singular values that sqrt(eig(a^T a)) loses
    sv = np.maximum(np.einsum("nji,nji->ni", u, av), 0.0)
    order = np.argsort(-sv, axis=1, kind="stable")
    sv = np.take_along_axis(sv, order, axis=1) * scale[:, None]
    u = np.take_along_axis(u, order[:, None, :], axis=2)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return u.reshape(batch + (3, 3)), sv.reshape(batch + (3,)), v.reshape(batch + (3, 3))


def inv_sqrt_sym(p) -> np.ndarray:
    """``P^{-1/2}`` for SPD ``P`` via its eigen-decomposition ``U S^{-1} U^T``.

    Raises NearSingular when the smallest eigenvalue falls below
    ``1e-12 * trace(P)``.
    """
    p = np.asarray(p, dtype=float)
    w, u = sym_eig(p)
    tr = np.trace(p, axis1=-2, axis2=-1)
    bad = (w[..., 2] < EPS_SPD_REL * tr) | (tr <= 0.0)
    if np.any(bad):
        raise NearSingular(f"{int(np.count_nonzero(bad))} matrices have lambda_min < eps_spd")
    return (u / np.sqrt(w)[..., None, :]) @ np.swapaxes(u, -1, -2)


def _det_floor(a: np.ndarray) -> np.ndarray:
    return EPS_DET_REL * mat_norm(a) ** 3


def polar_rotation(j) -> np.ndarray:
    """Finite-strain rotation ``R = J^T (J J^T)^{-1/2}``.

    The result is the orthogonal polar factor of ``J^T``; one Newton step
    ``R <- (R + R^{-T}) / 2`` removes the orthogonality loss that forming
    ``J J^T`` costs for ill-conditioned ``J``.
    """
    j = np.asarray(j, dtype=float)
    d = det3(j)
    if np.any(np.abs(d) < _det_floor(j)) or not np.all(np.isfinite(d)):
        raise NearSingular("|det J| below eps_det")
    jt = np.swapaxes(j, -1, -2)
    r = jt @ inv_sqrt_sym(j @ jt)
    # R^{-T} = cofactor(R) / det(R)
    r = 0.5 * (r + cofactor(r) / det3(r)[..., None, None])
    return r


def polar_rotation_newton(j, max_iter: int = 30) -> np.ndarray:
    """Same rotation as :func:`polar_rotation` by the Newton iteration
    ``X <- (X + X^{-T}) / 2`` started at ``J^T``, with determinant scaling.

    Needs no eigen-decomposition, so it is the faster choice for whole
    deformation fields whose Jacobians are moderately conditioned.
    """
    j = np.asarray(j, dtype=float)
    d = det3(j)
    if np.any(np.abs(d) < _det_floor(j)) or not np.all(np.isfinite(d)):
        raise NearSingular("|det J| below eps_det")
    x = np.swapaxes(j, -1, -2).copy()
    for _ in range(max_iter):
        dx = det3(x)
        # scaling by |det|^(-1/3) speeds up the early iterations
        g = np.abs(dx) ** (-1.0 / 3.0)
        xn = 0.5 * (g[..., None, None] * x + cofactor(x) / (g * dx)[..., None, None])
        delta = float(np.max(np.abs(xn - x), initial=0.0))
        x = xn
        if delta < 1e-15:
            break
    return x


def _cramer(b: np.ndarray, rhs: np.ndarray, cof: np.ndarray, d: np.ndarray) -> np.ndarray:
    # x_j = sum_i rhs_i C_ij / det B
    return np.einsum("...ij,...i->...j", cof, rhs) / d[..., None]


def cramer_solve(b, rhs, refine: int = 2) -> np.ndarray:
    """Solve ``B x = rhs`` by Cramer's rule, each component a cofactor ratio.

    Plain Cramer loses about ``cond(B)`` times more accuracy than Gaussian
    elimination on 3x3 systems; ``refine`` rounds of residual correction
    (each correction again solved by cofactor ratios) recover it.
    """
    b = np.asarray(b, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    d = det3(b)
    if np.any(np.abs(d) < _det_floor(b)) or not np.all(np.isfinite(d)):
        raise NearSingular("|det B| below eps_det")
    cof = cofactor(b)
    x = _cramer(b, rhs, cof, d)
    for _ in range(refine):
        r = rhs - np.einsum("...ij,...j->...i", b, x)
        x = x + _cramer(b, r, cof, d)
    return x


def is_spd(p) -> np.ndarray | bool:
    """True where the smallest eigenvalue clears ``1e-12 * trace``."""
    p = np.asarray(p, dtype=float)
    w, _ = sym_eig(p)
    tr = np.trace(p, axis1=-2, axis2=-1)
    return (w[..., 2] >= EPS_SPD_REL * tr) & (tr > 0.0)


def project_spd(p, eps_rel: float = EPS_SPD_REL) -> np.ndarray:
    """Clamp eigenvalues at ``eps_rel * trace`` so the result lies inside the SPD cone."""
    p = np.asarray(p, dtype=float)
    w, u = sym_eig(p)
    tr = np.maximum(np.trace(p, axis1=-2, axis2=-1), 0.0)
    floor = np.maximum(eps_rel * tr, np.finfo(float).tiny)
    w = np.maximum(w, floor[..., None])
    return (u * w[..., None, :]) @ np.swapaxes(u, -1, -2)
