"""Command-line entry point: ``rsma-cran run|sweep|oracle|plotdata``.

Exit codes: 0 success, 1 config/input error, 2 solver failure, 3 infeasible.
``RSMA_CRAN_SEED`` and ``RSMA_CRAN_OUT_DIR`` override the default seed and
the directory relative output paths are written to.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness, qt
from .baselines import SCHEMES, build_structure
from .netmodel import ConfigError, load_config, make_scenario

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("rsma_cran")


def _out_path(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    out_dir = os.environ.get("RSMA_CRAN_OUT_DIR")
    if out_dir and not p.is_absolute():
        p = Path(out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _default_seed() -> int:
    return int(os.environ.get("RSMA_CRAN_SEED", "0"))


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def cmd_run(args) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else _default_seed()
    try:
        scenario, structure, sol = harness.run_scheme(config, args.scheme, seed, args.variant)
    except qt.InitializationError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    report = harness.solution_report(scenario.config, args.scheme, seed, args.variant, sol)
    out = _out_path(args.out)
    _emit(json.dumps(report, indent=2) + "\n", out)
    if out is not None:
        out.with_suffix(".iterations.csv").write_text(sol.log_csv())
    if sol.degraded:
        return EXIT_SOLVER
    if not sol.feasibility.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    first = args.seed if args.seed is not None else _default_seed()
    spec = harness.SweepSpec(args.param, args.values, tuple(args.schemes.split(",")), args.variant,
                             tuple(range(first, first + args.seeds)))
    rows = harness.sweep(spec, config, n_jobs=args.jobs)
    _emit(harness.rows_to_csv(rows, timing=args.timing), _out_path(args.out))
    return EXIT_SOLVER if any(r.status.startswith("error") for r in rows) else EXIT_OK


def cmd_oracle(args) -> int:
    if args.config == "default":
        config = harness.oracle_config()
    else:
        config = load_config(args.config)
    seed = args.seed if args.seed is not None else _default_seed()
    scenario = make_scenario(config, seed)
    structure = build_structure("tin", scenario.channel, scenario.config)
    try:
        oracle = harness.oracle_grid_search(scenario.config, scenario.channel, structure, scenario.noise_power)
    except harness.OracleRefusal as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    sol = qt.run(scenario.config, scenario.channel, structure, scenario.noise_power)
    report = {
        "seed": seed,
        "oracle_psi": oracle.psi,
        "oracle_powers": oracle.powers.tolist(),
        "oracle_rates": oracle.rates.tolist(),
        "grid_points": oracle.grid_points,
        "algorithm_psi": sol.psi,
        "algorithm_powers": (abs(sol.precoders.private) ** 2).sum(axis=1).tolist(),
        "ratio": sol.psi / oracle.psi if oracle.psi > 0 else None,
        "within_5_percent": sol.psi <= 1.05 * oracle.psi,
    }
    _emit(json.dumps(report, indent=2) + "\n", _out_path(args.out))
    return EXIT_SOLVER if sol.degraded else EXIT_OK


def cmd_plotdata(args) -> int:
    path = Path(args.csv)
    if not path.is_file():
        log.error("no such file: %s", path)
        return EXIT_CONFIG
    try:
        series = harness.plotdata(path.read_text())
    except (harness.EmptyInputError, KeyError, ValueError) as exc:
        log.error("cannot aggregate %s: %s", path, exc)
        return EXIT_CONFIG
    _emit(harness.plotdata_csv(series), _out_path(args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsma-cran", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("--config", default="default", help="YAML file or preset name (default, desk, full)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output path (stdout when omitted)")
        if scheme:
            p.add_argument("--variant", default="Mixed", choices=harness.VARIANTS)

    p = sub.add_parser("run", help="optimise one scenario and print a JSON report")
    common(p)
    p.add_argument("--scheme", default="rsma", choices=SCHEMES)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweep over seeds and schemes, written as CSV")
    common(p)
    p.add_argument("--param", required=True, choices=harness.PARAMETERS)
    p.add_argument("--values", required=True, type=_floats, help="comma-separated grid")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="add a wall_time column")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="compare the optimizer with the grid oracle on a tiny instance")
    common(p, scheme=False)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("plotdata", help="aggregate a sweep CSV into mean/std series")
    p.add_argument("csv")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
