"""Command-line interface.

Exit codes: 0 success, 2 input error, 3 numerical failure, 4 partial sweep.
Errors are reported on stderr as one line
``ugdyn-error code=<n> type=<ExceptionName> message=<text>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (VICINITY_NORMS, UndefinedExponent, residency_from_series,
                       scaling_exponent_f, write_table)
from .cnf import encode, write_dimacs
from .dynamics import DynamicsConfig, SystemState, integrate
from .exceptions import InvalidInputError, NumericalError, ParseError, UgdynError
from .instance import generate_polygon_instance, read_instance, write_instance
from .io import load_state, read_trajectory_csv, save_state, write_trajectory_csv
from .sweep import (DEFAULT_DELTAS, FsleStudyConfig, SweepConfig, run_fsle_study, run_sweep,
                    write_fsle_study)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("ugdyn")


def _floats(text):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def load_config_file(path) -> dict:
    """JSON object, or ``key = value`` lines (``#`` comments). Keys use flag names."""
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON config: {exc.msg}", line=exc.lineno, path=str(path))
    else:
        data = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                key, _, val = line.partition(":")
            if not key.strip() or not val.strip():
                raise ParseError(f"expected key = value, got {raw!r}", line=n, path=str(path))
            data[key.strip()] = val.strip().strip('"').strip("'")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _dynamics_flags(p):
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--a-init", choices=("ones", "uniform"), default="ones")
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-6)
    p.add_argument("--method", choices=("auto", "rk45", "trbdf2"), default="auto")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ugdyn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ugdyn {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a polygon instance")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--nx", type=int, required=True)
    p.add_argument("--unsat", type=int, default=0)
    p.add_argument("--neq", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("encode", help="instance to DIMACS CNF")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("simulate", help="integrate one trajectory")
    p.add_argument("-i", "--input", required=True)
    _dynamics_flags(p)
    p.add_argument("--tmax", type=float, default=600.0)
    p.add_argument("--dt-obs", type=float, default=0.1)
    p.add_argument("--max-step", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--norm", choices=VICINITY_NORMS, default="total")
    p.add_argument("--decoded", action="store_true", help="add decoded assignment columns")
    p.add_argument("--state-in", default=None, help="start from a saved state (.npz)")
    p.add_argument("--state-out", default=None, help="save the final state (.npz)")
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("analyze", help="residency table from a trajectory CSV")
    p.add_argument("-i", "--input", required=True, nargs="+")
    p.add_argument("--deltas", type=_floats, default=DEFAULT_DELTAS)
    p.add_argument("--radius", type=float, default=None,
                   help="re-threshold stored distances (default: use the stored labels)")
    p.add_argument("--norm", choices=VICINITY_NORMS, default="total")
    p.add_argument("--burn-in", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("-o", "--output", default="-")

    p = sub.add_parser("sweep", help="ensemble sweep over k and epsilon")
    p.add_argument("--paper-scale", action="store_true",
                   help="n_x=11, n_eq=30, k up to 30, 300 runs per cell (multi-hour)")
    p.add_argument("--k-list", type=_ints, default=None)
    p.add_argument("--eps-list", type=_floats, default=None)
    p.add_argument("--deltas", type=_floats, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--nx", type=int, default=None)
    p.add_argument("--neq", type=int, default=None)
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--tmax", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--norm", choices=VICINITY_NORMS, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--a-init", choices=("ones", "uniform"), default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)
    p.add_argument("-o", "--output", default=None, help="output directory")

    p = sub.add_parser("fsle", help="average FSLE per alpha")
    p.add_argument("-i", "--input", nargs="*", default=[],
                   help="instance files; if omitted, instances are generated")
    p.add_argument("--n-instances", type=int, default=2)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--nx", type=int, default=5)
    p.add_argument("--unsat", type=int, default=1)
    p.add_argument("--alphas", type=_floats, default=(1.0, 1.5, 2.0))
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--delta0", type=float, default=1e-8)
    p.add_argument("--delta1", type=float, default=1e-4)
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--segment-cap", type=float, default=50.0)
    p.add_argument("--warmup", type=float, default=200.0)
    p.add_argument("--a-init", choices=("ones", "uniform"), default="ones")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output", default="-")

    for sp in sub.choices.values():
        sp.add_argument("--config", default=None, help="key = value (or JSON) file; flags win")
    return ap


def _write_text(target, text):
    if target == "-":
        sys.stdout.write(text)
    else:
        Path(target).write_text(text)


def cmd_gen(args):
    inst = generate_polygon_instance(args.nx, args.k, args.unsat, seed=args.seed, n_eq=args.neq)
    if args.output == "-":
        from .instance import format_instance

        sys.stdout.write(format_instance(inst))
    else:
        write_instance(inst, args.output)
    return EXIT_OK


def cmd_encode(args):
    inst = read_instance(args.input)
    formula = encode(inst)
    comments = [f"ugdyn {__version__}", f"instance {inst.content_hash()}",
                f"2-Lin-{inst.k} n_x={inst.n_x} n_eq={inst.n_eq}"]
    if args.output == "-":
        from .cnf import format_dimacs

        sys.stdout.write(format_dimacs(formula, comments))
    else:
        write_dimacs(formula, args.output, comments)
    return EXIT_OK


def cmd_simulate(args):
    inst = read_instance(args.input)
    formula = encode(inst)
    cfg = DynamicsConfig(alpha=args.alpha, a_init=args.a_init, rtol=args.rtol, atol=args.atol,
                         max_step=args.max_step, t_end=args.tmax, dt_obs=args.dt_obs,
                         method=args.method, seed=args.seed)
    state = None
    if args.state_in:
        state, _ = load_state(args.state_in)
        if state.s.shape != (formula.N,) or state.log_a.shape != (formula.M,):
            raise InvalidInputError("saved state does not match the instance encoding")
    rec = integrate(formula, cfg, state=state)
    header = {"instance_file": args.input, "solver_stats": json.dumps(rec.stats, sort_keys=True)}
    text = write_trajectory_csv(rec, formula, inst, None, radius=args.radius, norm=args.norm,
                                decoded=args.decoded, header=header)
    _write_text(args.output, text)
    if args.state_out:
        fs = rec.final_state
        save_state(args.state_out, SystemState(fs.s, fs.log_a, fs.t),
                   {"instance_hash": inst.content_hash(), **cfg.as_dict()})
    return EXIT_OK


def cmd_analyze(args):
    tables = [read_trajectory_csv(p) for p in args.input]
    n_eq = {t.n_eq for t in tables}
    hashes = {t.meta.get("instance_hash") for t in tables}
    if len(n_eq) != 1 or len(hashes) != 1:
        raise InvalidInputError("all trajectories must come from the same instance")
    radius = args.radius
    series = [t.series(radius, args.norm) for t in tables]
    used_radius = radius if radius is not None else float(tables[0].meta.get("vicinity_radius", 0.1))
    used_norm = args.norm if radius is not None else tables[0].meta.get("vicinity_norm", "total")
    table = residency_from_series(series, n_eq.pop(), args.deltas, used_radius,
                                  args.burn_in, used_norm)
    n_x = int(tables[0].meta["n_x"])
    rows = []
    for d, y, yt, ys in zip(table.delta_grid, table.y_values, table.y_values_total, table.y_std):
        f = float("nan")
        if not np.isnan(y) and n_x >= 2:
            val = scaling_exponent_f(y, n_x, args.beta)
            f = float(val) if not isinstance(val, UndefinedExponent) else float("nan")
        rows.append((d, y, yt, ys, f))
    meta = {"kind": "residency", "instance_hash": hashes.pop(), "vicinity_radius": used_radius,
            "vicinity_norm": used_norm, "y_denominator": "non_transient_time",
            "vicinity_space": "x_blocks", "beta": args.beta, "burn_in": args.burn_in,
            "n_trajectories": len(tables), "total_time": table.total_time,
            "vicinity_time": table.vicinity_time, "transient_time": table.transient_time,
            "empty": table.is_empty}
    text = write_table(None, ["delta", "Y", "Y_total_time", "Y_std", "f"], rows, meta)
    _write_text(args.output, text)
    return EXIT_OK


def _sweep_config(args) -> SweepConfig:
    mapping = {"k_list": "k_list", "eps_list": "epsilon_list", "deltas": "delta_grid",
               "alpha": "alpha", "nx": "n_x", "neq": "n_eq", "ensemble": "ensemble",
               "tmax": "t_end", "seed": "master_seed", "workers": "worker_count",
               "radius": "radius", "norm": "vicinity_norm", "beta": "beta",
               "a_init": "a_init", "rtol": "rtol", "atol": "atol", "output": "output_dir"}
    fields = {dst: getattr(args, src) for src, dst in mapping.items()
              if getattr(args, src) is not None}
    if args.paper_scale:
        return SweepConfig.paper_scale(**fields)
    return SweepConfig(**fields)


def cmd_sweep(args):
    cfg = _sweep_config(args)
    result = run_sweep(cfg)
    for key, path in result.files.items():
        log.info("wrote %s: %s", key, path)
    if result.partial:
        failed = [c for c in result.cells if c.failed]
        sys.stderr.write(f"ugdyn-error code={EXIT_PARTIAL} type=PartialSweep "
                         f"message={len(failed)} of {len(result.cells)} cells had failures\n")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_fsle(args):
    if args.input:
        instances = [read_instance(p) for p in args.input]
    else:
        from .sweep import derive_seed

        instances = [generate_polygon_instance(args.nx, args.k, args.unsat,
                                               seed=derive_seed(args.seed, 1000 + i))
                     for i in range(args.n_instances)]
    study = FsleStudyConfig(alpha_list=args.alphas, n_seeds=args.seeds, master_seed=args.seed,
                            delta0=args.delta0, delta1=args.delta1, n_segments=args.segments,
                            segment_cap=args.segment_cap, t_warmup=args.warmup,
                            a_init=args.a_init, worker_count=args.workers)
    rows, failures = run_fsle_study(instances, study)
    _write_text(args.output, write_fsle_study(None, rows, study, instances))
    if failures:
        sys.stderr.write(f"ugdyn-error code={EXIT_PARTIAL} type=PartialSweep "
                         f"message={len(failures)} FSLE runs failed\n")
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "encode": cmd_encode, "simulate": cmd_simulate,
            "analyze": cmd_analyze, "sweep": cmd_sweep, "fsle": cmd_fsle}


def _coerce(parser, command, key, value):
    """Convert a config-file string with the same type rule as the matching flag."""
    sp = parser._subparsers._group_actions[0].choices[command]
    for action in sp._actions:
        if action.dest == key:
            if isinstance(action, argparse._StoreTrueAction):
                return str(value).lower() in ("1", "true", "yes", "on")
            if action.type is not None and isinstance(value, str):
                return action.type(value)
            if action.type in (_floats, _ints) and isinstance(value, list):
                return tuple(value)
            return value
    raise InvalidInputError(f"unknown config key {key!r} for '{command}'")


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = load_config_file(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        sp.set_defaults(**{k: _coerce(parser, args.command, k, v) for k, v in values.items()})
        args = parser.parse_args(argv)
    return args


def _fail(code, exc):
    msg = str(exc).replace("\n", " ")
    sys.stderr.write(f"ugdyn-error code={code} type={type(exc).__name__} message={msg}\n")
    return code


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (UgdynError, OSError, argparse.ArgumentTypeError) as exc:
        return _fail(EXIT_INPUT, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (UgdynError, OSError, ValueError) as exc:
        return _fail(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
