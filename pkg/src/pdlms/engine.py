"""
Partial-diffusion LMS with noisy partial exchange.

One iteration runs three steps at every node ``k``:

1. first combination of the neighbors' previous weights ``w_{l,i-1}``,
2. LMS adaptation on local data,
3. second combination of the neighbors' intermediate estimates ``psi_{l,i}``.

When a neighbor ``l`` transmits, node ``k`` only receives the entries that ``l``
selected, plus link noise on those entries. It uses its own value for every
entry it did not receive. ATC skips step 1 and CTA skips step 3: with an
identity combination nothing is exchanged and no link noise is injected.

Every array function accepts arbitrary leading batch dimensions, so the same
code runs one trial or a stack of trials.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .data import Stream, make_rng
from .errors import DimensionError, DivergenceError, InvalidConfigError
from .network import CombinationMatrix, identity_combination

CHUNK = 128


class Mode(str, enum.Enum):
    ATC = "atc"
    CTA = "cta"
    GENERAL = "general"


class Links(str, enum.Enum):
    IDEAL = "ideal"
    NOISY = "noisy"


@dataclass(frozen=True)
class AlgorithmConfig:
    mode: Mode
    step_sizes: np.ndarray = field(repr=False)
    links: Links
    schedule: object
    A1: CombinationMatrix = field(repr=False)
    A2: CombinationMatrix = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "links", Links(self.links))
        mu = np.array(self.step_sizes, dtype=float)
        mu.setflags(write=False)
        object.__setattr__(self, "step_sizes", mu)
        n = self.A1.num_nodes
        if self.A2.num_nodes != n or mu.shape != (n,):
            raise DimensionError("A1, A2 and step_sizes must agree on the node count")
        if np.any(mu < 0):
            raise InvalidConfigError("step sizes must be non-negative")
        if self.mode is Mode.ATC and not self.A1.is_identity():
            raise InvalidConfigError("ATC requires A1 = I")
        if self.mode is Mode.CTA and not self.A2.is_identity():
            raise InvalidConfigError("CTA requires A2 = I")

    @property
    def num_nodes(self):
        return self.A1.num_nodes

    @property
    def exchanges_first(self):
        return self.mode is not Mode.ATC

    @property
    def exchanges_second(self):
        return self.mode is not Mode.CTA


def make_algorithm(mode, combination, schedule, step_sizes, links=Links.NOISY):
    """
    Assemble ``(A1, A2)`` for ``mode`` from a single combination matrix.

    ``step_sizes`` may be a scalar (uniform step size) or one value per node.
    """
    mode = Mode(mode)
    n = combination.num_nodes
    mu = np.broadcast_to(np.asarray(step_sizes, dtype=float), (n,)).copy()
    a1 = identity_combination(n, "A1") if mode is Mode.ATC else combination.with_role("A1")
    a2 = identity_combination(n, "A2") if mode is Mode.CTA else combination.with_role("A2")
    return AlgorithmConfig(mode, mu, links, schedule, a1, a2)


@dataclass
class IterationDraws:
    """
    Randomness consumed by iteration ``i``, with optional leading batch axes.

    ``sel_first`` / ``sel_second`` are the diagonals of ``Lambda_{l,i-1}`` and
    ``Lambda_{l,i}``. Link noise is indexed by the environment's link list and
    is already zero where nothing is transmitted (ideal links, or the skipped
    phase of ATC/CTA).
    """

    regressors: np.ndarray     # (..., N, M)
    measurements: np.ndarray   # (..., N)
    meas_noise: np.ndarray     # (..., N)
    sel_first: np.ndarray      # (..., N, M) bool
    sel_second: np.ndarray     # (..., N, M) bool
    link_w: np.ndarray         # (..., E, M)
    link_psi: np.ndarray       # (..., E, M)

    def __getitem__(self, idx):
        return IterationDraws(**{k: v[idx] for k, v in vars(self).items()})


@dataclass
class NetworkState:
    weight: np.ndarray   # w_{k,i}
    phi: np.ndarray      # phi_{k,i-1}
    psi: np.ndarray      # psi_{k,i}


class _LinkMap:
    """Edge arrays for vectorized combination."""

    def __init__(self, links, num_nodes):
        self.src = np.array([l for l, _ in links], dtype=np.intp)
        self.dst = np.array([k for _, k in links], dtype=np.intp)
        self.num_nodes = num_nodes

    def scatter(self, weights):
        # (N, E) matrix; summing contributions into each sink
        s = np.zeros((self.num_nodes, len(self.src)))
        s[self.dst, np.arange(len(self.src))] = weights
        return s


def _combine(est, sel, noise, A, lm):
    a = A.weights
    if est.shape[-2] != a.shape[0] or sel.shape != est.shape:
        raise DimensionError("estimate/selection shapes do not match the combination matrix")
    if noise.shape[-2] != len(lm.src) or noise.shape[-1] != est.shape[-1]:
        raise DimensionError("link noise must have one row per link")
    out = np.diagonal(a)[:, None] * est
    if len(lm.src) == 0:
        return out
    # entries the neighbor sent arrive perturbed; the rest are filled from the sink
    received = np.where(sel[..., lm.src, :], est[..., lm.src, :] + noise, est[..., lm.dst, :])
    return out + lm.scatter(a[lm.src, lm.dst]) @ received


def combine_first(weights, selections, link_noise, A1, links):
    """
    First combination for every node: ``phi_{k,i-1}`` from ``w_{l,i-1}``.

    Parameters
    ----------
    weights : ndarray, shape (..., N, M)
    selections : ndarray of bool, shape (..., N, M)
        Diagonals of ``Lambda_{l,i-1}``.
    link_noise : ndarray, shape (..., E, M)
        First-phase noise, one row per entry of ``links``.
    A1 : CombinationMatrix
    links : sequence of (int, int)
    """
    return _combine(weights, selections, link_noise, A1, _LinkMap(links, A1.num_nodes))


def combine_second(psis, selections, link_noise, A2, links):
    """Second combination: ``w_{k,i}`` from ``psi_{l,i}``; mirrors :func:`combine_first`."""
    return _combine(psis, selections, link_noise, A2, _LinkMap(links, A2.num_nodes))


def adapt(phi, regressors, measurements, step_sizes):
    """LMS update ``psi = phi + mu u^T (d - u phi)`` at every node."""
    err = measurements - np.sum(regressors * phi, axis=-1)
    return phi + np.asarray(step_sizes)[:, None] * regressors * err[..., None]


def run_iteration(weights, draws, config, links):
    """
    One full PDLMS iteration.

    Parameters
    ----------
    weights : ndarray, shape (..., N, M)
        ``w_{k,i-1}``.
    draws : IterationDraws
    config : AlgorithmConfig
    links : sequence of (int, int)
        Link order used by ``draws.link_w`` / ``draws.link_psi``.

    Returns
    -------
    NetworkState
    """
    lm = _LinkMap(links, config.num_nodes)
    return _step(weights, draws, config, lm)


def _step(w, draws, config, lm):
    if config.exchanges_first:
        phi = _combine(w, draws.sel_first, draws.link_w, config.A1, lm)
    else:
        phi = w
    psi = adapt(phi, draws.regressors, draws.measurements, config.step_sizes)
    if config.exchanges_second:
        w_new = _combine(psi, draws.sel_second, draws.link_psi, config.A2, lm)
    else:
        w_new = psi
    return NetworkState(w_new, phi, psi)


class DrawSource:
    """
    Per-trial random draws, generated in time chunks.

    Each purpose (regressors, measurement noise, two link-noise kinds, two
    selection phases) has its own stream keyed by ``(seed, purpose, trial)``.
    Streams do not depend on the algorithm mode, so different grid entries see
    common random numbers.
    """

    def __init__(self, env, config, seed, trial):
        self.env, self.config = env, config
        self.rng = {s: make_rng(seed, s, trial) for s in (
            Stream.REGRESSOR, Stream.MEASUREMENT, Stream.LINK_W, Stream.LINK_PSI,
            Stream.SELECT_FIRST, Stream.SELECT_SECOND)}

    def block(self, start, count):
        env, cfg = self.env, self.config
        n, m, e = env.num_nodes, env.param_dim, len(env.links)
        u = self.rng[Stream.REGRESSOR].standard_normal((count, n, m)) * np.sqrt(env.regressor_vars)
        v = self.rng[Stream.MEASUREMENT].standard_normal((count, n)) * np.sqrt(env.meas_noise_vars)
        d = np.sum(u * env.true_param, axis=-1) + v

        noisy = cfg.links is Links.NOISY
        vw = self.rng[Stream.LINK_W].standard_normal((count, e, m))
        vp = self.rng[Stream.LINK_PSI].standard_normal((count, e, m))
        vw = vw * np.sqrt(env.link_vars_w)[:, None] if noisy and cfg.exchanges_first else np.zeros_like(vw)
        vp = vp * np.sqrt(env.link_vars_psi)[:, None] if noisy and cfg.exchanges_second else np.zeros_like(vp)

        sched = cfg.schedule
        its = np.arange(start, start + count)
        # Lambda_{.,-1} at i = 0 is taken from phase 0
        first = sched.block_indices(np.maximum(its - 1, 0), n, self.rng[Stream.SELECT_FIRST])
        second = sched.block_indices(its, n, self.rng[Stream.SELECT_SECOND])
        return IterationDraws(u, d, v, sched.masks[first], sched.masks[second], vw, vp)


def _stack(blocks):
    """Stack per-trial blocks along axis 1: (T, trials, ...)."""
    return IterationDraws(**{k: np.stack([getattr(b, k) for b in blocks], axis=1)
                             for k in vars(blocks[0])})


@dataclass
class TrialBatch:
    """
    Squared deviations ``||w° - w_{k,i}||^2`` for a set of trials.

    ``sq_dev`` has shape ``(trials, T, N)``; rows of diverged trials are NaN
    from ``diverged_at[t]`` onwards (``-1`` when the trial stayed finite).
    """

    sq_dev: np.ndarray
    diverged_at: np.ndarray
    draws: list = None


def run_trials(env, config, horizon, seed, trials, batch_size=50, keep_draws=False):
    """
    Run ``trials`` (an iterable of trial indices) for ``horizon`` iterations.

    Initial weights are zero. Trials are independent; they are processed in
    batches of ``batch_size`` purely for vectorization.
    """
    if horizon < 1:
        raise InvalidConfigError("horizon must be >= 1")
    if env.num_nodes != config.num_nodes:
        raise DimensionError("environment and algorithm disagree on the node count")
    trials = list(trials)
    n, m = env.num_nodes, env.param_dim
    lm = _LinkMap(env.links, n)
    sq_dev = np.full((len(trials), horizon, n), np.nan)
    diverged = np.full(len(trials), -1, dtype=np.intp)
    logs = [[] for _ in trials] if keep_draws else None

    for b0 in range(0, len(trials), batch_size):
        idx = trials[b0:b0 + batch_size]
        sources = [DrawSource(env, config, seed, t) for t in idx]
        w = np.zeros((len(idx), n, m))
        alive = np.ones(len(idx), dtype=bool)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, horizon, CHUNK):
                count = min(CHUNK, horizon - start)
                block = _stack([s.block(start, count) for s in sources])
                for t in range(count):
                    draws = block[t]
                    w = _step(w, draws, config, lm).weight
                    dev = np.sum((env.true_param - w) ** 2, axis=-1)
                    sq_dev[b0:b0 + len(idx), start + t] = dev
                    if keep_draws:
                        for j in range(len(idx)):
                            logs[b0 + j].append(draws[j])
                    bad = alive & ~np.all(np.isfinite(dev), axis=-1)
                    if bad.any():
                        diverged[b0 + np.nonzero(bad)[0]] = start + t
                        alive &= ~bad
                        sq_dev[b0 + np.nonzero(bad)[0], start + t] = np.nan
                        w[bad] = np.nan
                if not alive.any():
                    break
    return TrialBatch(sq_dev, diverged, logs)


@dataclass
class TrialRecord:
    sq_dev: np.ndarray      # (T, N)
    draws: list = None      # IterationDraws per iteration, when kept


def run_trial(env, config, horizon, seed, trial=0, keep_draws=False):
    """
    Single trial; raises :class:`DivergenceError` with the partial record on blow-up.
    """
    batch = run_trials(env, config, horizon, seed, [trial], keep_draws=keep_draws)
    at = int(batch.diverged_at[0])
    if at >= 0:
        raise DivergenceError(at, batch.sq_dev[0, :at])
    return TrialRecord(batch.sq_dev[0], batch.draws[0] if keep_draws else None)
