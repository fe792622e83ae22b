"""Command-line entry point: validate, param, optimize, export.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
SURFMMC_THREADS caps the BLAS/OpenMP thread count (read at package import).
"""
from __future__ import annotations

import argparse
import logging
import sys


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="surfmmc",
        description="Component-based topology optimization of shell "
                    "structures on triangulated surfaces")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a configuration file")
    p_val.add_argument("config")

    p_par = sub.add_parser("param", help="build and export the charts only")
    p_par.add_argument("config")

    p_opt = sub.add_parser("optimize", help="run the full optimization")
    p_opt.add_argument("config")
    p_opt.add_argument("--check-gradients", action="store_true",
                       help="audit analytic gradients against finite "
                            "differences before optimizing")
    p_opt.add_argument("--resume", metavar="CHECKPOINT",
                       help="start from the design stored in a checkpoint")

    p_exp = sub.add_parser("export", help="export a checkpoint design")
    p_exp.add_argument("checkpoint")
    p_exp.add_argument("--format", default="vtk", choices=["vtk"])
    p_exp.add_argument("--output", default=None)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    from .errors import ChartError, ConfigError, MeshError, NumericalError
    try:
        return _dispatch(args)
    except (ConfigError, MeshError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except (ChartError, NumericalError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _dispatch(args) -> int:
    from . import pipeline

    if args.command == "validate":
        config = pipeline.ProblemConfig.from_json(args.config)
        mesh = pipeline.validate_config(config)
        print(f"ok: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
              f"{len(config.patches)} patch(es)")
        return 0

    if args.command == "param":
        import os
        config = pipeline.ProblemConfig.from_json(args.config)
        mesh = pipeline.validate_config(config)
        _, prepared = pipeline.preprocess(config, mesh)
        os.makedirs(config.output_dir, exist_ok=True)
        atlas = pipeline._atlas_with_cache(config, mesh, prepared)
        for cov, prep in zip(atlas.coverages, prepared):
            from .conformal import save_chart_obj
            save_chart_obj(cov.chart, prep.patch,
                           os.path.join(config.output_dir,
                                        f"chart_{prep.name}.obj"))
            print(f"chart {prep.name}: {cov.chart.width:.5g} x "
                  f"{cov.chart.height:.5g}, mean |mu| = "
                  f"{float(cov.chart.mu_abs(cov.surface_triangles).mean()):.4g}")
        return 0

    if args.command == "optimize":
        import json
        import numpy as np
        config = pipeline.ProblemConfig.from_json(args.config)
        initial = None
        if args.resume:
            with open(args.resume) as fh:
                initial = np.asarray(json.load(fh)["design_vector"])
        result = pipeline.run_pipeline(
            config, check_gradients_flag=args.check_gradients,
            initial_design=initial)
        last = result.history[-1]
        print(f"done after {last.iteration} iterations: compliance "
              f"{last.report.get('compliance', last.objective):.6g}, "
              f"volume fraction "
              f"{last.report.get('volume_fraction', 0.0):.4f}")
        for name, path in result.artifacts.items():
            print(f"  {name}: {path}")
        return 0

    if args.command == "export":
        out = args.output or (args.checkpoint.rsplit(".", 1)[0] + ".vtk")
        pipeline.export_checkpoint(args.checkpoint, out, fmt=args.format)
        print(f"wrote {out}")
        return 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
