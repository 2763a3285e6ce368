"""Command-line interface: ``proxmsm {simulate,fit,mc,oracle}``.

Exit codes: 0 success, 1 input or configuration error, 2 numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import ConvergenceError, InputError, MsmmSpec, NotIdentifiedError
from .dgm import MISSPEC_KINDS, DgmParams, simulate
from .estimators import estimate
from .harness import TABLE_ORDER, HarnessAbort, table1_suite
from .io import atomic_write, read_dataset, write_dataset
from .oracle import DiscreteWorld, random_world, verify_identification
from .solvers import SolverConfig

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2
ESTIMATOR_FLAGS = {"por": "POR", "pipw": "PIPW", "pdr": "PDR", "dr-sra": "DR-SRA"}


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _output(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.parent.resolve().is_dir():
        raise InputError(f"directory for {what} does not exist: {p.parent}")
    return p


def _load_params(path: str | None) -> DgmParams:
    p = _existing(path, "parameter file")
    if p is None:
        return DgmParams()
    try:
        return DgmParams.from_json(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"parameter file {p} is not valid JSON: {exc}") from exc


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def cmd_simulate(args) -> int:
    params = _load_params(args.params)
    out = _output(args.out, "dataset")
    roles = _output(args.roles_out or str(out.with_suffix(".roles.json")), "role map")
    data = simulate(params, args.n, args.seed)
    write_dataset(data, out, roles)
    print(f"wrote {data.n} records to {out} (roles: {roles})")
    return EXIT_OK


def cmd_fit(args) -> int:
    data_path = _existing(args.data, "dataset")
    roles_path = _existing(args.roles, "role map")
    out = _output(args.out, "report")
    data = read_dataset(data_path, roles_path)
    spec = MsmmSpec.from_name(args.msmm, data.support)
    config = SolverConfig(restart_seed=args.seed)
    estimator = ESTIMATOR_FLAGS[args.estimator]
    try:
        report = estimate(data, estimator, spec, args.misspec, config=config, strict=False)
    except ConvergenceError as exc:
        payload = {"estimator": estimator, "error": str(exc), "converged": False}
        _emit(_dump(payload), out)
        print(f"{estimator}: did not converge ({exc})", file=sys.stderr)
        return EXIT_NUMERIC
    _emit(_dump(report.to_dict()), out)
    status = "" if report.converged else " [nuisance fit did not converge]"
    print(report.summary() + status, file=sys.stdout if out else sys.stderr)
    return EXIT_OK if report.converged else EXIT_NUMERIC


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        atomic_write(out, text)


def cmd_mc(args) -> int:
    params = _load_params(args.params)
    out = _output(args.out, "table")
    names = TABLE_ORDER if args.estimators is None else tuple(s.strip() for s in args.estimators.split(","))
    table = table1_suite(args.n, args.B, args.seed, params, args.workers, names, args.coef)
    text = table.render(args.format)
    _emit(text, out)
    if out is not None:
        print(f"wrote {args.format} table to {out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    world_path = _existing(args.world, "world file")
    out = _output(args.out, "report")
    if world_path is not None:
        try:
            world = DiscreteWorld.from_json(world_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"world file {world_path} is not valid JSON: {exc}") from exc
    else:
        world = random_world(args.seed, d_u=args.d_u, d_z=args.d_z, d_w=args.d_w, d_x=args.d_x,
                             z_effect=args.z_effect)
    if args.save_world:
        atomic_write(_output(args.save_world, "world file"), world.to_json() + "\n")
    report = verify_identification(world)
    sys.stdout.write(report.text())
    if out is not None:
        atomic_write(out, _dump(report.to_dict()))
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors: exit 1 rather than argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="proxmsm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a dataset from the simulation design")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON file overriding simulation coefficients")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--roles-out", help="role map output path (default: <out>.roles.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate MSMM parameters from a CSV dataset")
    p.add_argument("--data", required=True, help="CSV dataset")
    p.add_argument("--roles", required=True, help="JSON role map")
    p.add_argument("--estimator", choices=sorted(ESTIMATOR_FLAGS), default="pdr")
    p.add_argument("--msmm", choices=("cumulative", "saturated"), default="cumulative")
    p.add_argument("--misspec", choices=MISSPEC_KINDS, default="none")
    p.add_argument("--seed", type=int, default=0, help="seed for solver restarts")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("mc", help="Monte Carlo study of the nine estimator variants")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", help="JSON file overriding simulation coefficients")
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(TABLE_ORDER)}")
    p.add_argument("--format", choices=("text", "csv", "md"), default="text")
    p.add_argument("--coef", type=int, default=1, help="MSMM coefficient to tabulate")
    p.add_argument("--workers", type=int, default=None, help="parallel workers (default: CPU count)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("oracle", help="exact identification check in a finite-state world")
    p.add_argument("--world", help="world JSON file (default: random world from --seed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-u", type=int, default=2)
    p.add_argument("--d-z", type=int, default=2)
    p.add_argument("--d-w", type=int, default=2)
    p.add_argument("--d-x", type=int, default=1)
    p.add_argument("--z-effect", type=float, default=0.0,
                   help="direct effect of Z(1) on Y, violating proxy independence")
    p.add_argument("--save-world", help="write the world description to this JSON file")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, NotIdentifiedError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, HarnessAbort) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
