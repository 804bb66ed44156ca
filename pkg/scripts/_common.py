"""Shared plumbing for the figure scripts."""
import argparse
from pathlib import Path

from pdlms.experiment import (compare_theory_simulation, emit_outputs, load_config,
                              run_experiment, with_overrides)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run_figure(name, description):
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--config", default=str(CONFIGS / f"{name}.yaml"))
    parser.add_argument("--trials", type=int)
    parser.add_argument("--iters", type=int)
    parser.add_argument("--out")
    args = parser.parse_args()
    config, _ = load_config(args.config)
    config = with_overrides(config, trials=args.trials, horizon=args.iters, output_dir=args.out)
    result = run_experiment(config)
    written, failures = emit_outputs(result)
    rows = {r.entry_id: r for r in compare_theory_simulation(result.curves, config.window)}
    for r in rows.values():
        theory = r.theory_db if isinstance(r.theory_db, str) else f"{r.theory_db:8.2f}"
        print(f"{r.entry_id:32s} sim {r.sim_db:8.2f} +/- {r.stderr_db:.2f}  theory {theory}")
    for label, path in written.items():
        print(f"wrote {label}: {path}")
    for label, msg in failures.items():
        print(f"failed {label}: {msg}")
    return rows
