"""Command-line entry point: ``pdlms run | analyze | validate``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import InvalidConfigError
from .experiment import (analyze_config, compare_theory_simulation, emit_outputs,
                         load_config, run_experiment, validate_config, with_overrides)
from .selection import Coupling, Scheme


def _override_grid(config, scheme, entries, coupling):
    if scheme is None and entries is None and coupling is None:
        return config
    grid, seen = [], set()
    for g in config.grid:
        g = type(g)(mode=g.mode,
                    scheme=scheme or g.scheme,
                    entries=g.entries if entries is None else entries,
                    links=g.links,
                    coupling=coupling if coupling is not None
                    else (None if scheme else g.coupling))
        if g.entry_id not in seen:
            seen.add(g.entry_id)
            grid.append(g)
    return with_overrides(config, grid=grid)


def _load(args):
    config, manifest = load_config(args.config)
    config = _override_grid(config, args.scheme, args.entries, args.coupling)
    return config, manifest


def cmd_run(args):
    config, manifest = _load(args)
    config = with_overrides(config, trials=args.trials, horizon=args.iters, seed=args.seed,
                            output_dir=args.out, workers=args.workers)
    if args.plots:
        config = with_overrides(config, plots=True)
    result = run_experiment(config)
    if manifest is not None and manifest.get("environment") != result.environment.to_dict():
        print("error: regenerated environment differs from the manifest", file=sys.stderr)
        return 1
    written, failures = emit_outputs(result)
    for row in compare_theory_simulation(result.curves, config.window):
        theory = row.theory_db if isinstance(row.theory_db, str) else f"{row.theory_db:8.3f}"
        gap = row.gap_db if isinstance(row.gap_db, str) else f"{row.gap_db:+7.3f}"
        flag = "" if row.converged else "  (not converged)"
        print(f"{row.entry_id:40s} sim {row.sim_db:8.3f} +/- {row.stderr_db:.3f} dB"
              f"  theory {theory}  gap {gap}{flag}")
    for label, path in written.items():
        print(f"wrote {label}: {path}")
    for label, msg in failures.items():
        print(f"error writing {label}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_analyze(args):
    config, _ = _load(args)
    print(json.dumps(analyze_config(config), indent=2))
    return 0


def cmd_validate(args):
    config, _ = _load(args)
    problems, setup = validate_config(config)
    if setup is not None:
        _, env, algorithms = setup
        for g, algo in zip(config.grid, algorithms):
            ok = all(0 < mu < mx for mu, mx in
                     zip(algo.step_sizes, 2.0 / env.regressor_vars.max(axis=1)))
            if not ok:
                problems.append(f"{g.entry_id}: step sizes outside the mean-stability bound")
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return 0 if not problems else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="pdlms", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML config or JSON manifest")
        p.add_argument("--scheme", choices=[s.value for s in Scheme])
        p.add_argument("--entries", type=int, metavar="L", help="entries transmitted per iteration")
        p.add_argument("--coupling", choices=[c.value for c in Coupling])

    run = sub.add_parser("run", help="simulate the grid and compare with theory")
    common(run)
    run.add_argument("--trials", type=int)
    run.add_argument("--iters", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--plots", action="store_true")
    run.set_defaults(func=cmd_run)

    analyze = sub.add_parser("analyze", help="theoretical steady state only")
    common(analyze)
    analyze.set_defaults(func=cmd_analyze)

    validate = sub.add_parser("validate", help="check preconditions and stability bounds")
    common(validate)
    validate.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
