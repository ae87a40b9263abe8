"""Command line entry point: ``feec-sl run`` and ``feec-sl converge``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from feec_sl.harness import (
    EXPERIMENTS,
    ConfigError,
    convergence_driver,
    parse_config,
    run_experiment,
    spec_from_mapping,
)
from feec_sl.mesh import MeshError
from feec_sl.solver import SolverError
from feec_sl.tracer import TraceError

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3

log = logging.getLogger("feec_sl")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feec-sl", description="Semi-Lagrangian FEEC flow experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "converge"):
        s = sub.add_parser(name)
        s.add_argument("--exp", choices=EXPERIMENTS, required=True)
        s.add_argument("--config", type=Path, help="flat key=value file; flags override it")
        s.add_argument("--mesh", dest="mesh_file", help="mesh file (vertex/triangle text format)")
        s.add_argument("--n", type=int, help="cells per side of the structured mesh")
        s.add_argument("--order", type=int, choices=(1, 2))
        s.add_argument("--conservative", action="store_const", const=True, default=None)
        s.add_argument("--eps", type=float)
        s.add_argument("--tau", type=float)
        s.add_argument("--tau-per-h", dest="tau_per_h", type=float)
        s.add_argument("--T", dest="T", type=float)
        s.add_argument("--out", dest="out_dir", default=None)
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "converge":
            s.add_argument("--levels", type=int)
    return p


def _spec(args):
    values: dict[str, object] = {}
    if args.config is not None:
        try:
            values.update(parse_config(args.config.read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    values["exp"] = args.exp
    for key in ("mesh_file", "n", "order", "conservative", "eps", "tau", "tau_per_h", "T", "out_dir", "levels"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if args.tau is not None and args.tau_per_h is None:
        values["tau_per_h"] = None
    return spec_from_mapping(values)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        spec = _spec(args)
        if spec.out_dir is None:
            spec.out_dir = "."
        if args.command == "run":
            res = run_experiment(spec)
            for r in res.report.rows:
                print(f"h={r.h:.6g} tau={r.tau:.6g} l2_error={r.l2_error:.6e}")
            rec = res.trace.records[-1]
            print(f"t={rec.t:.6g} energy={rec.energy:.12e} max_div_residual={res.max_div_residual:.3e}")
        else:
            rep = convergence_driver(spec)
            for r in rep.rows:
                print(f"h={r.h:.6g} tau={r.tau:.6g} l2_error={r.l2_error:.6e} eoc={r.eoc:.3f}")
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, TraceError, ArithmeticError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
