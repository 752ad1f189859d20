"""Binary volume formats and JSON helpers.

Every file is a little-endian ``uint32`` header length, a UTF-8 JSON header
and a float64 little-endian payload. Voxels are stored x-fastest with the
per-voxel components innermost:

* DTIR: tensor image, 6 components (xx, xy, xz, yy, yz, zz).
* VELF: velocity field, ``nt`` time samples of 3 components.
* DEFF: deformation, 12 components (endpoint, then the Jacobian row-major).

Writes go through a temporary file in the target directory followed by an
atomic rename.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import spd3
from .errors import BadMagic, BoundaryViolation, NotSpd, TruncatedPayload
from .fields import GridSpec, TensorImage, VelocityField
from .flow import FlowResult

VERSION = 1
DTYPE = "f64le"
LAYOUT = "x-fastest"
_F64 = np.dtype("<f8")


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, default=_json_default) + "\n").encode())


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _pack(header: dict, payload: np.ndarray) -> bytes:
    hb = json.dumps(header, separators=(",", ":")).encode()
    return struct.pack("<I", len(hb)) + hb + np.ascontiguousarray(payload, dtype=_F64).tobytes()


def _unpack(path, magic: str) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise TruncatedPayload(f"{path}: file shorter than the header length field")
    (n,) = struct.unpack("<I", data[:4])
    if len(data) < 4 + n:
        raise TruncatedPayload(f"{path}: header truncated")
    try:
        header = json.loads(data[4:4 + n])
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise BadMagic(f"{path}: header is not valid JSON") from None
    if not isinstance(header, dict) or header.get("magic") != magic:
        raise BadMagic(f"{path}: expected magic {magic!r}")
    if header.get("version") != VERSION or header.get("dtype") != DTYPE:
        raise BadMagic(f"{path}: unsupported version or dtype")
    if header.get("layout", LAYOUT) != LAYOUT:
        raise BadMagic(f"{path}: unsupported layout {header.get('layout')!r}")
    return header, data[4 + n:]


def _payload(header: dict, raw: bytes, lead: tuple[int, ...], comps: int, path) -> np.ndarray:
    if header.get("components") != comps:
        raise BadMagic(f"{path}: expected {comps} components")
    nx, ny, nz = header["dims"]
    shape = lead + (nz, ny, nx, comps)
    need = int(np.prod(shape)) * 8
    if len(raw) != need:
        raise TruncatedPayload(f"{path}: payload has {len(raw)} bytes, expected {need}")
    arr = np.frombuffer(raw, dtype=_F64).reshape(shape).astype(float)
    # (.., z, y, x, c) on disk -> (.., x, y, z, c) in memory
    k = len(lead)
    return np.ascontiguousarray(arr.transpose(*range(k), k + 2, k + 1, k, k + 3))


def _to_disk(arr: np.ndarray, lead: int) -> np.ndarray:
    return arr.transpose(*range(lead), lead + 2, lead + 1, lead, lead + 3)


def _grid_header(grid: GridSpec) -> dict:
    return {"dims": list(grid.dims), "spacing": list(grid.spacing), "origin": list(grid.origin)}


def _grid_from(header: dict, **kw) -> GridSpec:
    return GridSpec(tuple(header["dims"]), tuple(header["spacing"]),
                    tuple(header.get("origin", (0.0, 0.0, 0.0))), **kw)


def write_tensor_image(img: TensorImage, path) -> None:
    header = {"magic": "DTIR", "version": VERSION, **_grid_header(img.grid),
              "components": 6, "dtype": DTYPE, "layout": LAYOUT}
    atomic_write_bytes(path, _pack(header, _to_disk(img.voxels, 0)))


def read_tensor_image(path) -> TensorImage:
    header, raw = _unpack(path, "DTIR")
    grid = _grid_from(header)
    vox = _payload(header, raw, (), 6, path)
    if not np.all(np.isfinite(vox)):
        raise NotSpd(np.argwhere(~np.isfinite(vox).all(axis=-1))[0], "non-finite tensor entries")
    # the six-component storage is symmetric by construction
    bad = ~spd3.is_spd(spd3.sym6_to_mat(vox))
    if bad.any():
        raise NotSpd(np.argwhere(bad)[0])
    return TensorImage(grid, vox)


def write_velocity(v: VelocityField, path) -> None:
    header = {"magic": "VELF", "version": VERSION, **_grid_header(v.grid),
              "tau": v.grid.tau, "nt": v.grid.nt, "components": 3, "dtype": DTYPE,
              "layout": LAYOUT}
    atomic_write_bytes(path, _pack(header, _to_disk(v.samples, 1)))


def read_velocity(path) -> VelocityField:
    header, raw = _unpack(path, "VELF")
    nt = header.get("nt")
    if not isinstance(nt, int) or nt < 2:
        raise BadMagic(f"{path}: nt must be an integer >= 2")
    grid = _grid_from(header, tau=header["tau"], nt=nt)
    s = _payload(header, raw, (nt,), 3, path)
    if np.any(s[:, grid.boundary_mask()] != 0.0):
        raise BoundaryViolation(f"{path}: velocity nonzero on boundary voxels")
    return VelocityField(grid, s)


def write_deformation(fr: FlowResult, path) -> None:
    if fr.jacobian is None:
        raise ValueError("deformation needs a Jacobian field")
    comps = np.concatenate([fr.endpoints, fr.jacobian.reshape(fr.grid.dims + (9,))], axis=-1)
    header = {"magic": "DEFF", "version": VERSION, **_grid_header(fr.grid),
              "tau": fr.grid.tau, "nt": 1, "t_from": fr.t_from, "t_to": fr.t_to,
              "components": 12, "dtype": DTYPE, "layout": LAYOUT}
    atomic_write_bytes(path, _pack(header, _to_disk(comps[None], 1)))


def read_deformation(path) -> FlowResult:
    header, raw = _unpack(path, "DEFF")
    if header.get("nt") != 1:
        raise BadMagic(f"{path}: deformation files hold a single time sample")
    grid = _grid_from(header, tau=header.get("tau", 1.0))
    comps = _payload(header, raw, (1,), 12, path)[0]
    jac = comps[..., 3:].reshape(grid.dims + (3, 3))
    return FlowResult(grid, header.get("t_from", grid.tau), header.get("t_to", 0.0),
                      comps[..., :3], jac, spd3.det3(jac), None)
