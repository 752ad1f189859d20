"""Compiled trilinear interpolation kernels (the flow integrator's hot path).

Fractional indices within ``SNAP`` of an integer are snapped to it so that
node coordinates such as ``origin + i * spacing`` reproduce stored values
bit for bit despite rounding in ``(x - origin) / spacing``.
"""
import numba as nb
import numpy as np

SNAP = 1e-11


@nb.njit(cache=True, inline="always")
def _frac(p, lo, ih):
    f = (p - lo) * ih
    r = np.floor(f + 0.5)
    if abs(f - r) <= SNAP:
        return r
    return f


@nb.njit(cache=True, inline="always")
def _cell(f, n):
    i = int(f)
    if i > n - 2:
        i = n - 2
    return i, f - i


@nb.njit(cache=True)
def trilinear_points(values, lower, h, pts, clamp):
    n = pts.shape[0]
    nx, ny, nz, nc = values.shape
    out = np.empty((n, nc))
    ih = 1.0 / h
    for p in range(n):
        f0 = _frac(pts[p, 0], lower[0], ih[0])
        f1 = _frac(pts[p, 1], lower[1], ih[1])
        f2 = _frac(pts[p, 2], lower[2], ih[2])
        if clamp:
            f0 = min(max(f0, 0.0), nx - 1.0)
            f1 = min(max(f1, 0.0), ny - 1.0)
            f2 = min(max(f2, 0.0), nz - 1.0)
        elif not (0.0 <= f0 <= nx - 1.0 and 0.0 <= f1 <= ny - 1.0 and 0.0 <= f2 <= nz - 1.0):
            for c in range(nc):
                out[p, c] = 0.0
            continue
        i, wx = _cell(f0, nx)
        j, wy = _cell(f1, ny)
        k, wz = _cell(f2, nz)
        ux, uy, uz = 1.0 - wx, 1.0 - wy, 1.0 - wz
        for c in range(nc):
            v00 = values[i, j, k, c] * uz + values[i, j, k + 1, c] * wz
            v01 = values[i, j + 1, k, c] * uz + values[i, j + 1, k + 1, c] * wz
            v10 = values[i + 1, j, k, c] * uz + values[i + 1, j, k + 1, c] * wz
            v11 = values[i + 1, j + 1, k, c] * uz + values[i + 1, j + 1, k + 1, c] * wz
            out[p, c] = (v00 * uy + v01 * wy) * ux + (v10 * uy + v11 * wy) * wx
    return out


@nb.njit(cache=True, inline="always")
def _tri3(values, lower, ih, p0, p1, p2):
    nx, ny, nz, _ = values.shape
    f0 = _frac(p0, lower[0], ih[0])
    f1 = _frac(p1, lower[1], ih[1])
    f2 = _frac(p2, lower[2], ih[2])
    if not (0.0 <= f0 <= nx - 1.0 and 0.0 <= f1 <= ny - 1.0 and 0.0 <= f2 <= nz - 1.0):
        return 0.0, 0.0, 0.0
    i, wx = _cell(f0, nx)
    j, wy = _cell(f1, ny)
    k, wz = _cell(f2, nz)
    ux, uy, uz = 1.0 - wx, 1.0 - wy, 1.0 - wz
    v = values
    i1, j1, k1 = i + 1, j + 1, k + 1
    out0 = ((v[i, j, k, 0] * uz + v[i, j, k1, 0] * wz) * uy
            + (v[i, j1, k, 0] * uz + v[i, j1, k1, 0] * wz) * wy) * ux \
        + ((v[i1, j, k, 0] * uz + v[i1, j, k1, 0] * wz) * uy
           + (v[i1, j1, k, 0] * uz + v[i1, j1, k1, 0] * wz) * wy) * wx
    out1 = ((v[i, j, k, 1] * uz + v[i, j, k1, 1] * wz) * uy
            + (v[i, j1, k, 1] * uz + v[i, j1, k1, 1] * wz) * wy) * ux \
        + ((v[i1, j, k, 1] * uz + v[i1, j, k1, 1] * wz) * uy
           + (v[i1, j1, k, 1] * uz + v[i1, j1, k1, 1] * wz) * wy) * wx
    out2 = ((v[i, j, k, 2] * uz + v[i, j, k1, 2] * wz) * uy
            + (v[i, j1, k, 2] * uz + v[i, j1, k1, 2] * wz) * wy) * ux \
        + ((v[i1, j, k, 2] * uz + v[i1, j, k1, 2] * wz) * uy
           + (v[i1, j1, k, 2] * uz + v[i1, j1, k1, 2] * wz) * wy) * wx
    return out0, out1, out2


@nb.njit(cache=True)
def value_and_gradient(values, lower, h, pts):
    """3-vector field value plus central differences with half-voxel steps."""
    n = pts.shape[0]
    val = np.empty((n, 3))
    grad = np.empty((n, 3, 3))
    ih = 1.0 / h
    for p in range(n):
        x0, x1, x2 = pts[p, 0], pts[p, 1], pts[p, 2]
        a, b, c = _tri3(values, lower, ih, x0, x1, x2)
        val[p, 0], val[p, 1], val[p, 2] = a, b, c
        for j in range(3):
            s = 0.5 * h[j]
            if j == 0:
                a1, b1, c1 = _tri3(values, lower, ih, x0 + s, x1, x2)
                a2, b2, c2 = _tri3(values, lower, ih, x0 - s, x1, x2)
            elif j == 1:
                a1, b1, c1 = _tri3(values, lower, ih, x0, x1 + s, x2)
                a2, b2, c2 = _tri3(values, lower, ih, x0, x1 - s, x2)
            else:
                a1, b1, c1 = _tri3(values, lower, ih, x0, x1, x2 + s)
                a2, b2, c2 = _tri3(values, lower, ih, x0, x1, x2 - s)
            grad[p, 0, j] = (a1 - a2) / (2.0 * s)
            grad[p, 1, j] = (b1 - b2) / (2.0 * s)
            grad[p, 2, j] = (c1 - c2) / (2.0 * s)
    return val, grad


@nb.njit(cache=True)
def value_only(values, lower, h, pts):
    n = pts.shape[0]
    val = np.empty((n, 3))
    ih = 1.0 / h
    for p in range(n):
        a, b, c = _tri3(values, lower, ih, pts[p, 0], pts[p, 1], pts[p, 2])
        val[p, 0], val[p, 1], val[p, 2] = a, b, c
    return val
