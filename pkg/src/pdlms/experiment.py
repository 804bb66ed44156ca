"""
Monte Carlo experiments: configuration, learning curves, theory comparison, outputs.

A run is fully determined by its :class:`ExperimentConfig`. Trial ``t`` of every
grid entry uses the streams keyed by ``(config.seed, purpose, t)``, so entries
share common random numbers and the order in which entries or trials are
executed never changes the numbers.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import DB_FLOOR, build_workspace, to_db, workspace_report
from .data import (DEFAULT_NOISE_RANGE, DEFAULT_TRACE_RANGE, Environment, generate_environment)
from .engine import Links, Mode, make_algorithm, run_trials
from .errors import InvalidConfigError, SingularSystemError, UnstableError
from .network import (NetworkTopology, build_uniform_combination, generate_topology,
                      validate_combination)
from .selection import Coupling, Scheme, SelectionSchedule, default_coupling

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
CONVERGENCE_DRIFT_DB = 1.0


# ---------------------------------------------------------------------------
# configuration

@dataclass
class TopologySpec:
    num_nodes: int = 10
    avg_neighbors: float = 2.0
    seed: int = 42
    neighbors: list = None   # explicit neighborhoods; overrides generation


@dataclass
class EnvironmentSpec:
    param_dim: int = 8
    link_noise_gap_db: float = 35.0
    seed: int = 7
    trace_range: list = field(default_factory=lambda: list(DEFAULT_TRACE_RANGE))
    noise_range: list = field(default_factory=lambda: list(DEFAULT_NOISE_RANGE))
    # explicit overrides of the random draws
    true_param: list = None
    regressor_vars: list = None
    meas_noise_vars: list = None


@dataclass
class GridEntry:
    mode: str = "atc"
    scheme: str = "sequential"
    entries: int = 8
    links: str = "noisy"
    coupling: str = None

    def __post_init__(self):
        self.mode = Mode(self.mode).value
        self.scheme = Scheme(self.scheme).value
        self.links = Links(self.links).value
        self.coupling = (default_coupling(self.scheme) if self.coupling is None
                         else Coupling(self.coupling)).value
        self.entries = int(self.entries)

    @property
    def entry_id(self):
        tag = "" if self.coupling == default_coupling(self.scheme).value else f"-{self.coupling}"
        return f"{self.mode}-{self.scheme}{tag}-L{self.entries}-{self.links}"


@dataclass
class ExperimentConfig:
    topology: TopologySpec = field(default_factory=TopologySpec)
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    grid: list = field(default_factory=list)
    step_size: object = 0.01       # scalar or one value per node
    trials: int = 200
    horizon: int = 2000
    window: float = 0.1            # trailing fraction used for steady state
    seed: int = 0                  # trial streams
    output_dir: str = "results"
    plots: bool = False
    workers: int = 1
    kron_method: str = "closed-form"

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        _reject_unknown(cls, data, "config")
        topo = dict(data.pop("topology", {}) or {})
        env = dict(data.pop("environment", {}) or {})
        _reject_unknown(TopologySpec, topo, "topology")
        _reject_unknown(EnvironmentSpec, env, "environment")
        grid = []
        for i, g in enumerate(data.pop("grid", []) or []):
            _reject_unknown(GridEntry, g, f"grid[{i}]")
            try:
                grid.append(GridEntry(**g))
            except ValueError as exc:
                raise InvalidConfigError(f"grid[{i}]: {exc}") from None
        return cls(topology=TopologySpec(**topo), environment=EnvironmentSpec(**env),
                   grid=grid, **data)

    def step_sizes(self, num_nodes):
        mu = np.asarray(self.step_size, dtype=float)
        if mu.ndim == 0:
            return np.full(num_nodes, float(mu))
        if mu.shape != (num_nodes,):
            raise InvalidConfigError(f"step_size needs 1 or {num_nodes} values")
        return mu


def _reject_unknown(cls, data, where):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InvalidConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def load_config(path):
    """
    Read a YAML config, or the JSON manifest of a previous run.

    Returns
    -------
    config : ExperimentConfig
    manifest : dict or None
        The manifest when ``path`` is one, so callers can cross-check it.
    """
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: expected a mapping at top level")
    if "manifest_version" in data:
        return ExperimentConfig.from_dict(data["config"]), data
    return ExperimentConfig.from_dict(data), None


def build_topology(spec):
    if spec.neighbors is not None:
        return NetworkTopology(len(spec.neighbors), tuple(spec.neighbors))
    return generate_topology(spec.num_nodes, spec.avg_neighbors, spec.seed)


def build_environment(spec, topology):
    env = generate_environment(topology, spec.param_dim, spec.link_noise_gap_db, spec.seed,
                               tuple(spec.trace_range), tuple(spec.noise_range))
    if spec.true_param is None and spec.regressor_vars is None and spec.meas_noise_vars is None:
        return env
    d = env.to_dict()
    for key in ("true_param", "regressor_vars", "meas_noise_vars"):
        if getattr(spec, key) is not None:
            d[key] = getattr(spec, key)
    noise = np.asarray(d["meas_noise_vars"], dtype=float)
    if not math.isinf(spec.link_noise_gap_db) and len(env.links):
        # keep the requested gap relative to the overridden measurement noise
        target = noise.mean() * 10.0 ** (-spec.link_noise_gap_db / 10.0)
        for key in ("link_vars_w", "link_vars_psi"):
            v = np.asarray(d[key])
            d[key] = (v * (target / v.mean())).tolist() if v.mean() > 0 else d[key]
    return Environment.from_dict(d)


def build_algorithm(entry, topology, env, config):
    schedule = SelectionSchedule(entry.scheme, env.param_dim, entry.entries, entry.coupling)
    combination = build_uniform_combination(topology)
    return make_algorithm(entry.mode, combination, schedule,
                          config.step_sizes(topology.num_nodes), entry.links)


def validate_config(config):
    """
    Check every precondition without running trials.

    Returns
    -------
    problems : list of str
    setup : tuple or None
        ``(topology, environment, algorithms)`` when construction succeeded.
    """
    problems = []
    if config.trials < 1:
        problems.append("trials must be >= 1")
    if config.horizon < 1:
        problems.append("horizon must be >= 1")
    if not 0 < config.window <= 1:
        problems.append("window must be in (0, 1]")
    if config.workers < 1:
        problems.append("workers must be >= 1")
    ids = [g.entry_id for g in config.grid]
    if len(set(ids)) != len(ids):
        problems.append("grid contains duplicate entries")
    try:
        topology = build_topology(config.topology)
        env = build_environment(config.environment, topology)
    except (InvalidConfigError, ValueError) as exc:
        return problems + [f"setup: {exc}"], None
    algorithms = []
    for g in config.grid:
        try:
            algo = build_algorithm(g, topology, env, config)
        except (InvalidConfigError, ValueError) as exc:
            problems.append(f"{g.entry_id}: {exc}")
            continue
        for a in (algo.A1, algo.A2):
            for v in validate_combination(a, topology):
                problems.append(f"{g.entry_id} {a.role}: {v}")
        algorithms.append(algo)
    return problems, (topology, env, algorithms)


# ---------------------------------------------------------------------------
# running

@dataclass
class LearningCurve:
    """
    Simulated network MSD of one grid entry.

    ``trial_msd[t, i]`` is ``(1/N) sum_k ||w° - w_{k,i}||^2`` in trial ``t``;
    ``msd`` is its average over trials.
    """

    entry: GridEntry
    trial_msd: np.ndarray = field(repr=False)
    theory_db: float = None
    theory: dict = None
    diverged_trials: int = 0
    first_divergence: int = None
    seed: int = 0

    @property
    def entry_id(self):
        return self.entry.entry_id

    @property
    def trials(self):
        return self.trial_msd.shape[0]

    @property
    def msd(self):
        return self.trial_msd.mean(axis=0)

    @property
    def msd_db(self):
        return to_db(self.msd)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    topology: NetworkTopology
    environment: Environment
    curves: list


def _run_entry(args):
    entry, topology, env, config = args
    algo = build_algorithm(entry, topology, env, config)
    try:
        ws = build_workspace(env, algo, config.kron_method)
        report = workspace_report(ws)
    except (UnstableError, SingularSystemError) as exc:
        report = {"theory_status": "error", "detail": str(exc)}
    batch = run_trials(env, algo, config.horizon, config.seed, range(config.trials))
    trial_msd = batch.sq_dev.mean(axis=2)
    bad = batch.diverged_at >= 0
    if bad.any():
        log.warning("%s: %d trial(s) diverged", entry.entry_id, int(bad.sum()))
    theory_db = report.get("msd_db") if report.get("theory_status") == "ok" else None
    return LearningCurve(entry, trial_msd, theory_db, report, int(bad.sum()),
                         int(batch.diverged_at[bad].min()) if bad.any() else None, config.seed)


def run_experiment(config):
    """
    Simulate every grid entry and attach its theoretical steady-state MSD.

    Raises
    ------
    InvalidConfigError
        If any precondition fails; nothing is run in that case.
    """
    problems, setup = validate_config(config)
    if problems:
        raise InvalidConfigError("; ".join(problems))
    topology, env, _ = setup
    jobs = [(g, topology, env, config) for g in config.grid]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            curves = list(pool.map(_run_entry, jobs))
    else:
        curves = [_run_entry(j) for j in jobs]
    return ExperimentResult(config, topology, env, curves)


def analyze_config(config):
    """Theory only: workspace report per grid entry."""
    problems, setup = validate_config(config)
    if problems:
        raise InvalidConfigError("; ".join(problems))
    topology, env, algorithms = setup
    out = {}
    for g, algo in zip(config.grid, algorithms):
        try:
            out[g.entry_id] = workspace_report(build_workspace(env, algo, config.kron_method))
        except (UnstableError, SingularSystemError) as exc:
            out[g.entry_id] = {"theory_status": "error", "detail": str(exc)}
    return out


# ---------------------------------------------------------------------------
# steady state and comparison

@dataclass
class SteadyState:
    db: float
    stderr_db: float
    linear: float
    stderr_linear: float
    converged: bool
    drift_db: float


def estimate_steady_state(curve, window=0.1):
    """
    Trailing-window steady state of a learning curve.

    The last ``window`` fraction of iterations is averaged per trial in the
    linear domain; the mean over trials is converted to dB. The standard error
    is taken across trials and mapped to dB to first order. A curve whose
    least-squares drift over the window exceeds ``CONVERGENCE_DRIFT_DB``, or
    that contains diverged trials, is flagged as not converged.
    """
    horizon = curve.trial_msd.shape[1]
    width = max(1, int(round(window * horizon)))
    tail = curve.trial_msd[:, -width:]
    with np.errstate(invalid="ignore", over="ignore"):
        per_trial = tail.mean(axis=1)
        mean = float(per_trial.mean())
        n = len(per_trial)
        se = float(per_trial.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        db = to_db(mean)
        se_db = 10.0 / math.log(10.0) * se / mean if mean > 0 else float("nan")
        curve_db = to_db(tail.mean(axis=0))
    drift = float("nan")
    if width > 1 and np.all(np.isfinite(curve_db)):
        slope = np.polyfit(np.arange(width), curve_db, 1)[0]
        drift = float(slope * (width - 1))
    converged = bool(np.isfinite(mean) and curve.diverged_trials == 0
                     and (width == 1 or abs(drift) < CONVERGENCE_DRIFT_DB))
    return SteadyState(db, se_db, mean, se, converged, drift)


@dataclass
class ComparisonRow:
    entry_id: str
    mode: str
    scheme: str
    L: int
    links: str
    sim_db: float
    theory_db: object   # float, or a status marker such as "unstable"
    gap_db: object
    stderr_db: float
    converged: bool


def compare_theory_simulation(curves, window=0.1):
    """One row per curve; ``gap_db = sim_db - theory_db``."""
    rows = []
    for c in curves:
        ss = estimate_steady_state(c, window)
        if c.theory_db is None:
            status = (c.theory or {}).get("theory_status", "missing")
            theory, gap = ("unstable" if status in ("unstable", "error") else status), "NA"
        else:
            theory = max(float(c.theory_db), DB_FLOOR)
            gap = ss.db - theory
        e = c.entry
        rows.append(ComparisonRow(e.entry_id, e.mode, e.scheme, e.entries, e.links,
                                  ss.db, theory, gap, ss.stderr_db, ss.converged))
    return rows


# ---------------------------------------------------------------------------
# outputs

CURVE_COLUMNS = ["entry_id", "iteration", "msd_db_sim", "msd_db_theory_line"]
COMPARISON_COLUMNS = ["entry_id", "mode", "scheme", "L", "links", "sim_db", "theory_db",
                      "gap_db", "stderr_db"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def build_manifest(result):
    config = result.config
    summary = {}
    for c in result.curves:
        ss = estimate_steady_state(c, config.window)
        summary[c.entry_id] = {
            "steady_state_db": ss.db, "stderr_db": ss.stderr_db, "converged": ss.converged,
            "drift_db": ss.drift_db, "diverged_trials": c.diverged_trials,
            "first_divergence": c.first_divergence,
        }
    return {
        "manifest_version": MANIFEST_VERSION,
        "tool": "pdlms",
        "tool_version": __version__,
        "config": config.to_dict(),
        "seeds": {
            "topology": config.topology.seed,
            "environment": config.environment.seed,
            "trials": config.seed,
            "trial_indices": [0, config.trials],
        },
        "topology": result.topology.to_list(),
        "environment": result.environment.to_dict(),
        "workspace_reports": {c.entry_id: c.theory for c in result.curves},
        "steady_state": summary,
    }


def emit_outputs(result, out_dir=None, plots=None):
    """
    Write ``curves.csv``, ``comparison.csv``, ``manifest.json`` and optional SVG plots.

    Returns
    -------
    written : dict
        File label to path for every file written.
    failures : dict
        File label to error message for every file that could not be written.
    """
    config = result.config
    out = Path(out_dir if out_dir is not None else config.output_dir)
    plots = config.plots if plots is None else plots
    written, failures = {}, {}

    def attempt(label, path, fn):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fn(path)
            written[label] = path
        except OSError as exc:
            failures[label] = f"{path}: {exc}"

    if result.curves:
        attempt("curves", out / "curves.csv", lambda p: _write_curves(result.curves, p))
        attempt("comparison", out / "comparison.csv",
                lambda p: _write_comparison(compare_theory_simulation(result.curves, config.window), p))
        if plots:
            attempt("plots", out / "plots", lambda p: _write_plots(result.curves, p))
    attempt("manifest", out / "manifest.json",
            lambda p: p.write_text(json.dumps(build_manifest(result), indent=2) + "\n"))
    return written, failures


def _write_curves(curves, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for c in curves:
            theory = "" if c.theory_db is None else _fmt(max(float(c.theory_db), DB_FLOOR))
            for i, v in enumerate(c.msd_db):
                w.writerow([c.entry_id, i, _fmt(float(v)), theory])


def _write_comparison(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for r in rows:
            w.writerow([r.entry_id, r.mode, r.scheme, r.L, r.links, _fmt(r.sim_db),
                        _fmt(r.theory_db), _fmt(r.gap_db), _fmt(r.stderr_db)])


def _write_plots(curves, directory):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    directory.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "pdlms"
    families = {}
    for c in curves:
        families.setdefault((c.entry.mode, c.entry.scheme), []).append(c)
    for (mode, scheme), group in sorted(families.items()):
        fig, ax = plt.subplots(figsize=(6, 4))
        for c in group:
            line, = ax.plot(c.msd_db, lw=1, label=f"L={c.entry.entries}, {c.entry.links}")
            if c.theory_db is not None:
                ax.axhline(c.theory_db, ls="--", lw=0.8, color=line.get_color())
        ax.set_xlabel("iteration")
        ax.set_ylabel("network MSD (dB)")
        ax.set_title(f"{mode.upper()} {scheme}")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(directory / f"{mode}_{scheme}.svg", metadata={"Date": None})
        plt.close(fig)



def with_overrides(config, **kw):
    """Copy of ``config`` with top-level fields replaced; ``None`` values are ignored."""
    return dataclasses.replace(config, **{k: v for k, v in kw.items() if v is not None})
