"""Command-line interface: mesh preprocessing and experiment runners."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import PolySplineError
from .experiments import (
    ExperimentConfig,
    run_constraint_ablation,
    run_conditioning,
    run_convergence,
    run_elasticity,
    run_interpolation_resilience,
)
from .mesh import read_polyoff, write_polyoff
from .preprocess import ensure_separation, make_star_shaped, polar_refine


def _add_config_args(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--basis", choices=["q1", "q2", "polyspline"])
    p.add_argument("--mesh-n", type=int, help="grid/hybrid base size")
    p.add_argument("--mesh-kind", choices=["grid", "hybrid", "file"])
    p.add_argument("--mesh-file", help="poly-off mesh path")
    p.add_argument("--levels", type=int)
    p.add_argument("--seed", type=int)


def _config_from(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.output = args.out
    if args.basis:
        cfg.basis = args.basis
    if args.mesh_kind:
        cfg.mesh["kind"] = args.mesh_kind
    if args.mesh_n:
        cfg.mesh["n"] = args.mesh_n
    if args.mesh_file:
        cfg.mesh = {"kind": "file", "path": args.mesh_file}
    if args.levels is not None:
        cfg.levels = args.levels
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _print_rates(rec):
    for row in rec.levels:
        print("  " + " ".join(f"{k}={v}" for k, v in row.items()))
    for norm, fits in rec.rates.items():
        print(f"  rate {norm}: lstsq={fits['lstsq']:.2f} "
              f"pairwise_median={fits['pairwise_median']:.2f}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="polyspline",
        description="Hybrid spline/Q2/polygon finite elements on 2D meshes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="star-shape, separate, and optionally ring-refine a mesh")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.add_argument("--rings", type=int, default=0,
                   help="polar-refine every polygon with this many rings")
    p.add_argument("--target-edge", type=float, default=None)

    p = sub.add_parser("run", help="run the experiment named in a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    for name, txt in (("convergence", "refinement convergence sweep"),
                      ("ablation", "polygon constraint ablation"),
                      ("conditioning", "stiffness conditioning experiment"),
                      ("resilience", "bad-quad interpolation resilience"),
                      ("elasticity", "elasticity convergence sweep")):
        _add_config_args(sub.add_parser(name, help=txt))

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except PolySplineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "preprocess":
        mesh = read_polyoff(args.infile)
        mesh = make_star_shaped(mesh)
        mesh = ensure_separation(mesh)
        if args.rings > 0:
            # refine each polygon present now; face ids shift after every
            # refinement, so relocate polygons by a kernel point they contain
            from .preprocess import point_in_polygon, polygon_kernel

            anchors = [polygon_kernel(mesh.face_points(f)).chosen_center
                       for f in range(mesh.n_faces) if len(mesh.faces[f]) != 4]
            for p in anchors:
                target = next(f for f in range(mesh.n_faces)
                              if len(mesh.faces[f]) != 4
                              and point_in_polygon(p, mesh.face_points(f)))
                mesh = polar_refine(mesh, target, rings=args.rings,
                                    target_edge_len=args.target_edge)
        write_polyoff(mesh, args.outfile, comment="preprocessed")
        print(f"wrote {args.outfile}: {mesh.n_vertices} vertices, "
              f"{mesh.n_faces} faces")
        return 0

    if args.command == "run":
        cfg = ExperimentConfig.from_json(args.config)
        if args.out:
            cfg.output = args.out
        with open(args.config) as fh:
            name = json.load(fh).get("experiment", "convergence")
        runner = {
            "convergence": run_convergence,
            "ablation": run_constraint_ablation,
            "conditioning": run_conditioning,
            "resilience": run_interpolation_resilience,
            "elasticity": run_elasticity,
        }.get(name)
        if runner is None:
            print(f"error: unknown experiment {name!r}", file=sys.stderr)
            return 1
        _report(name, runner(cfg))
        return 0

    cfg = _config_from(args)
    if args.command == "convergence":
        _report("convergence", run_convergence(cfg))
    elif args.command == "ablation":
        _report("ablation", run_constraint_ablation(cfg))
    elif args.command == "conditioning":
        _report("conditioning", run_conditioning(cfg))
    elif args.command == "resilience":
        _report("resilience", run_interpolation_resilience(cfg))
    elif args.command == "elasticity":
        _report("elasticity", run_elasticity(cfg))
    return 0


def _report(name, result):
    from .experiments import ConvergenceRecord

    print(f"== {name}")
    if isinstance(result, ConvergenceRecord):
        _print_rates(result)
    elif isinstance(result, dict):
        for key, rec in result.items():
            print(f"-- {key}")
            _print_rates(rec)
    else:
        for row in result:
            print("  " + " ".join(f"{k}={v}" for k, v in row.items()))


if __name__ == "__main__":
    raise SystemExit(main())
