"""Command-line entry point: ``dtireg <subcommand> ...``.

Failures print one JSON object on stderr (``{"error": code, "message": ...}``)
and exit with status 1. ``register`` exits 2 when the iteration budget runs
out; the best iterate is still written.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import io, verify
from .errors import DtiRegError, GridMismatch
from .fields import GridSpec
from .flow import build_h_and_inverse, det_identity_report, flow_map
from .objective import ObjectiveConfig, minimize
from .phantom import KINDS, make_phantom
from .reorient import fs_transform

EXIT_OK, EXIT_ERROR, EXIT_BUDGET = 0, 1, 2


def _triple(kind):
    def parse(text: str):
        parts = text.split(",")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
        try:
            return tuple(kind(p) for p in parts)
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e)) from None
    return parse


def _cmd_phantom(a) -> int:
    grid = GridSpec(a.dims, a.spacing)
    img = make_phantom(grid, a.kind, direction=a.direction, axial=a.axial, radial=a.radial,
                       iso=a.iso, radius=a.radius, noise=a.noise, max_aniso=a.max_aniso,
                       seed=a.seed)
    io.write_tensor_image(img, a.out)
    return EXIT_OK


def _cmd_register(a) -> int:
    T = io.read_tensor_image(a.floating)
    D = io.read_tensor_image(a.target)
    cfg = ObjectiveConfig.from_dict(io.read_json(a.config)) if a.config else ObjectiveConfig()
    v, report = minimize(T, D, cfg)
    io.write_velocity(v, a.out_velocity)
    doc = {"config": cfg.to_dict(), **report.to_dict()}
    if a.out_report:
        io.write_json(a.out_report, doc)
    print(json.dumps({"status": report.status, "iterations": report.iterations,
                      "initial_total": report.trace[0]["total"], "total": report.total}))
    return EXIT_OK if report.status == "converged" else EXIT_BUDGET


def _cmd_apply(a) -> int:
    T = io.read_tensor_image(a.image)
    v = io.read_velocity(a.velocity)
    if not T.grid.same_space(v.grid):
        raise GridMismatch("image and velocity grids differ")
    h, h_inv = build_h_and_inverse(v, a.nsteps)
    io.write_tensor_image(fs_transform(T, h, h_inv, source=a.image).to_image(), a.out)
    if a.out_deformation:
        io.write_deformation(h, a.out_deformation)
    return EXIT_OK


def _cmd_flow(a) -> int:
    v = io.read_velocity(a.velocity)
    fr = flow_map(v, 0.0, v.grid.tau, a.nsteps)
    worst, mean = det_identity_report(fr)
    doc = {"nsteps": a.nsteps, "max_rel_error": worst, "mean_rel_error": mean,
           "min_det": float(fr.det_theta.min()), "max_det": float(fr.det_theta.max())}
    if a.report:
        io.write_json(a.report, doc)
    print(json.dumps(doc))
    return EXIT_OK


def _cmd_verify(a) -> int:
    checks = verify.run(a.suite)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtireg", description="Diffeomorphic diffusion-tensor registration.")
    p.add_argument("-v", "--verbose", action="store_true", help="log optimizer progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write a synthetic tensor image")
    s.add_argument("--kind", choices=KINDS, default="two-compartment")
    s.add_argument("--dims", type=_triple(int), required=True, metavar="NX,NY,NZ")
    s.add_argument("--spacing", type=_triple(float), default=(1.0, 1.0, 1.0), metavar="HX,HY,HZ")
    s.add_argument("--direction", type=_triple(float), default=(1.0, 0.0, 0.0), metavar="EX,EY,EZ")
    s.add_argument("--axial", type=float, default=1.7)
    s.add_argument("--radial", type=float, default=0.3)
    s.add_argument("--iso", type=float, default=0.8)
    s.add_argument("--radius", type=float, default=0.3)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--max-aniso", type=float, default=1e3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_phantom)

    s = sub.add_parser("register", help="fit a velocity field moving the floating image onto the target")
    s.add_argument("--floating", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--config")
    s.add_argument("--out-velocity", required=True)
    s.add_argument("--out-report")
    s.set_defaults(func=_cmd_register)

    s = sub.add_parser("apply", help="transport an image through the flow of a velocity field")
    s.add_argument("--image", required=True)
    s.add_argument("--velocity", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--out-deformation")
    s.add_argument("--nsteps", type=int, default=16)
    s.set_defaults(func=_cmd_apply)

    s = sub.add_parser("flow", help="report the determinant identity error of a velocity field")
    s.add_argument("--velocity", required=True)
    s.add_argument("--report")
    s.add_argument("--nsteps", type=int, default=64)
    s.set_defaults(func=_cmd_flow)

    s = sub.add_parser("verify", help="run the built-in property suites")
    s.add_argument("--suite", choices=("spd3", "flow", "all"), default="all")
    s.set_defaults(func=_cmd_verify)
    return p


def _fail(code: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DtiRegError as e:
        return _fail(e.code, str(e))
    except (OSError, ValueError, KeyError, TypeError) as e:
        return _fail(type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
