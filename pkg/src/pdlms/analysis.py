"""
Mean and mean-square analysis of partial-diffusion LMS.

Stacked network vectors order node-major: entry ``m`` of node ``p`` sits at
``p * M + m``. ``vec`` stacks columns. The combination operator of one phase is

    A[p, q] = I - sum_{l != p} a_{lp} Lambda_l    (q == p)
              a_{qp} Lambda_q                     (q neighbor of p)

and the weight-error vector obeys

    e_i = A2 H_i A1 e_{i-1} - A2 H_i v^w - A2 Mu s_i - v^psi,
    H_i = I - Mu R_{u,i}.

The network steady-state MSD solves ``(I - F) x = vec(I) / N`` with
``F = D1 (H^T kron H^T) D2``, ``D_r = E[A_r^T kron A_r^T]``, and evaluates
``b . x`` with ``b = D2^T vec(G + H Rw H^T) + vec(Rpsi)``. Every block of every
operator is diagonal, so ``F`` splits into independent small systems; the
solver finds them from the sparsity pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import DimensionError, InvalidConfigError, SingularSystemError, UnstableError
from .engine import Links
from .selection import Scheme, Coupling, expected_selection, joint_support, joint_support_size

DB_FLOOR = -200.0
ENUMERATION_CAP = 10**6
DENSE_CAP = 10**4
UNIT_RADIUS_TOL = 1e-10   # radii this close to one count as unstable


def to_db(x):
    """``10 log10(x)`` floored at ``DB_FLOOR``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 10.0 * np.log10(x)
    out = np.where(np.isnan(out) & ~np.isnan(x), DB_FLOOR, out)
    out = np.maximum(out, DB_FLOOR)
    return out if out.ndim else float(out)


def vec(X):
    return np.asarray(X).reshape(-1, order="F")


# ---------------------------------------------------------------------------
# block combination operators

def _offdiag_weights(A):
    a = np.array(A.weights, dtype=float)
    np.fill_diagonal(a, 0.0)
    return a.T   # [p, q] = a_{qp}: weight node p puts on neighbor q


def build_block_combination(A, selections):
    """
    Dense ``NM x NM`` combination operator for given selection diagonals.

    Parameters
    ----------
    A : CombinationMatrix
    selections : array_like, shape (N, M)
        Diagonals of ``Lambda_l`` (boolean, or expectations in ``[0, 1]``).
    """
    lam = np.asarray(selections, dtype=float)
    n = A.num_nodes
    if lam.ndim != 2 or lam.shape[0] != n:
        raise DimensionError(f"selections must be (N={n}, M), got {lam.shape}")
    m = lam.shape[1]
    w = _offdiag_weights(A)
    blocks = np.zeros((n, m, n, m))
    idx = np.arange(m)
    blocks[:, idx, :, idx] = w[None, :, :] * lam.T[:, None, :]
    p = np.arange(n)
    blocks[p[:, None], idx[None, :], p[:, None], idx[None, :]] = 1.0 - w @ lam
    return blocks.reshape(n * m, n * m)


def _node_term(A, node, mask):
    """Sparse ``K_l(Lambda)``: the part of the operator driven by node ``l``'s selection."""
    n, m = A.num_nodes, len(mask)
    w = _offdiag_weights(A)[:, node]
    rows, cols, vals = [], [], []
    for p in np.nonzero(w)[0]:
        for j in np.nonzero(mask)[0]:
            v = w[p] * mask[j]
            rows += [p * m + j, p * m + j]
            cols += [node * m + j, p * m + j]
            vals += [v, -v]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n * m, n * m))


def expected_block_combination(A, schedule):
    """``E[A_r]``: the operator with every ``Lambda_l`` replaced by ``E[Lambda]``."""
    lam = np.broadcast_to(expected_selection(schedule), (A.num_nodes, schedule.param_dim))
    return build_block_combination(A, lam)


@dataclass
class KronMoment:
    """Second-order moment ``E[A^T kron A^T]`` (sparse) with optional Monte Carlo error."""

    matrix: sp.csr_matrix
    stderr: np.ndarray = None
    method: str = "closed-form"


def expected_kron(A, schedule, method="closed-form", samples=100_000, seed=0,
                  cap=ENUMERATION_CAP):
    """
    ``E[A_r^T kron A_r^T]`` over the joint selection of all nodes.

    Parameters
    ----------
    method : {"closed-form", "exact", "monte-carlo"}
        ``exact`` enumerates the joint support (rejected above ``cap``
        configurations). ``closed-form`` is the same enumeration for shared
        or sequential selection, and an exact product formula for
        independent stochastic selection, valid for any ``N``.
        ``monte-carlo`` averages ``samples`` random draws and fills ``stderr``.
    """
    n, m = A.num_nodes, schedule.param_dim
    if method == "monte-carlo":
        return _kron_monte_carlo(A, schedule, samples, seed)
    independent = (schedule.scheme is Scheme.STOCHASTIC
                   and schedule.coupling is Coupling.INDEPENDENT)
    if method == "closed-form" and independent:
        return KronMoment(_kron_independent(A, schedule), None, method)
    if method not in ("closed-form", "exact"):
        raise InvalidConfigError(f"unknown method {method!r}")
    size = joint_support_size(schedule, n)
    if size > cap:
        raise InvalidConfigError(
            f"joint selection support has {size} configurations, above the cap of {cap}")
    total = sp.csr_matrix((n * n * m * m, n * n * m * m))
    for prob, idx in joint_support(schedule, n):
        at = sp.csr_matrix(build_block_combination(A, schedule.masks[idx]).T)
        total = total + prob * sp.kron(at, at, format="csr")
    return KronMoment(total, None, method)


def _kron_independent(A, schedule):
    # A = I + sum_l K_l(Lambda_l) with independent Lambda_l, so
    # E[A^T kron A^T] = Q^T kron Q^T + sum_l (E[X_l kron X_l] - E[X_l] kron E[X_l]),
    # X_l = K_l^T; cross terms l != m factor by independence.
    q = sp.csr_matrix(expected_block_combination(A, schedule).T)
    total = sp.kron(q, q, format="csr")
    b = schedule.num_subsets
    for node in range(A.num_nodes):
        terms = [_node_term(A, node, mask.astype(float)).T.tocsr() for mask in schedule.masks]
        if all(t.nnz == 0 for t in terms):
            continue
        mean = sum(terms) / b
        second = sum(sp.kron(t, t, format="csr") for t in terms) / b
        total = total + second - sp.kron(mean, mean, format="csr")
    return total.tocsr()


def _kron_monte_carlo(A, schedule, samples, seed, chunk=2000):
    n, m = A.num_nodes, schedule.param_dim
    dim = n * m
    if dim ** 4 > 10**7:
        raise InvalidConfigError("monte-carlo expected_kron is limited to small networks")
    rng = np.random.default_rng(seed)
    acc = np.zeros((dim * dim, dim * dim))
    acc2 = np.zeros_like(acc)
    done = 0
    while done < samples:
        s = min(chunk, samples - done)
        if schedule.scheme is Scheme.SEQUENTIAL:
            # stationary phase of the cycle
            phases = rng.integers(schedule.num_subsets, size=s)
            idx = schedule.block_indices(phases, n)
        else:
            idx = schedule.block_indices(np.zeros(s, dtype=np.intp), n, rng)
        for row in idx:
            at = build_block_combination(A, schedule.masks[row]).T
            k = np.kron(at, at)
            acc += k
            acc2 += k * k
        done += s
    mean = acc / samples
    var = np.maximum(acc2 / samples - mean ** 2, 0.0)
    return KronMoment(sp.csr_matrix(mean), np.sqrt(var / samples), "monte-carlo")


# ---------------------------------------------------------------------------
# stability and noise statistics

@dataclass
class StabilityBounds:
    mu_max: np.ndarray
    stable: bool = None


def mean_stability_bounds(env, step_sizes=None):
    """Per-node bound ``2 / lambda_max(R_u,k)``; verdict when ``step_sizes`` is given."""
    mu_max = 2.0 / env.regressor_vars.max(axis=1)
    if step_sizes is None:
        return StabilityBounds(mu_max)
    mu = np.broadcast_to(np.asarray(step_sizes, dtype=float), mu_max.shape)
    return StabilityBounds(mu_max, bool(np.all((mu > 0) & (mu < mu_max))))


def aggregate_noise_covariances(env, config):
    """
    Expected block-diagonal covariances of the aggregate link noises.

    Node ``k`` receives ``sum_l a_{lk} Lambda_l v_{lk}``, whose expected
    covariance is ``sum_l a_{lk}^2 E[Lambda] sigma^2_{lk}`` (``Lambda`` is 0/1).
    """
    n, m = env.num_nodes, env.param_dim
    ebar = expected_selection(config.schedule)
    rw = np.zeros((n * m, n * m))
    rpsi = np.zeros((n * m, n * m))
    if config.links is Links.IDEAL:
        return rw, rpsi
    a1, a2 = config.A1.weights, config.A2.weights
    for (l, k), sw, sps in zip(env.links, env.link_vars_w, env.link_vars_psi):
        blk = slice(k * m, (k + 1) * m)
        if config.exchanges_first:
            rw[blk, blk] += np.diag(a1[l, k] ** 2 * sw * ebar)
        if config.exchanges_second:
            rpsi[blk, blk] += np.diag(a2[l, k] ** 2 * sps * ebar)
    return rw, rpsi


# ---------------------------------------------------------------------------
# workspace and steady state

@dataclass
class AnalysisWorkspace:
    num_nodes: int
    param_dim: int
    step_block: np.ndarray = field(repr=False)
    reg_block_mean: np.ndarray = field(repr=False)
    Q1: np.ndarray = field(repr=False)
    Q2: np.ndarray = field(repr=False)
    D1: sp.csr_matrix = field(repr=False)
    D2: sp.csr_matrix = field(repr=False)
    G: np.ndarray = field(repr=False)
    H: np.ndarray = field(repr=False)
    Rw: np.ndarray = field(repr=False)
    Rpsi: np.ndarray = field(repr=False)
    F: sp.csr_matrix = field(repr=False)
    mu_max: np.ndarray = field(repr=False)
    mean_stable: bool = None

    def mean_operator(self):
        return self.Q2 @ self.H @ self.Q1

    def mean_spectral_radius(self):
        return float(np.max(np.abs(la.eigvals(self.mean_operator()))))

    def driving_vector(self):
        """``b`` such that the steady state satisfies ``E||e||^2_{(I-F)s} = b . s``."""
        g = vec(self.G) + vec(self.H @ self.Rw @ self.H.T)
        return self.D2.T @ g + vec(self.Rpsi)


def build_workspace(env, config, kron_method="closed-form"):
    n, m = env.num_nodes, env.param_dim
    if config.num_nodes != n or config.schedule.param_dim != m:
        raise DimensionError("environment and algorithm dimensions disagree")
    mu = np.repeat(config.step_sizes, m)
    r = env.regressor_vars.reshape(-1)
    step_block = np.diag(mu)
    reg_mean = np.diag(r)
    h = np.eye(n * m) - step_block @ reg_mean
    g = np.diag(mu ** 2 * np.repeat(env.meas_noise_vars, m) * r)

    if config.exchanges_first:
        q1 = expected_block_combination(config.A1, config.schedule)
        d1 = expected_kron(config.A1, config.schedule, kron_method).matrix
    else:
        q1 = np.eye(n * m)
        d1 = sp.identity(n * n * m * m, format="csr")
    if config.exchanges_second:
        q2 = expected_block_combination(config.A2, config.schedule)
        d2 = expected_kron(config.A2, config.schedule, kron_method).matrix
    else:
        q2 = np.eye(n * m)
        d2 = sp.identity(n * n * m * m, format="csr")

    ht = sp.csr_matrix(h.T)
    f = (d1 @ sp.kron(ht, ht, format="csr") @ d2).tocsr()
    rw, rpsi = aggregate_noise_covariances(env, config)
    bounds = mean_stability_bounds(env, config.step_sizes)
    return AnalysisWorkspace(n, m, step_block, reg_mean, q1, q2, d1, d2, g, h, rw, rpsi,
                             f, bounds.mu_max, bounds.stable)


@dataclass
class MSDResult:
    linear: float
    db: float
    spectral_radius: float


def _components(f):
    pattern = (abs(f) + abs(f.T)).tocsr()
    return connected_components(pattern, directed=False)


def theoretical_msd(ws, dense_cap=DENSE_CAP):
    """
    Network steady-state MSD ``b . (I - F)^{-1} vec(I_NM) / N``.

    Raises
    ------
    UnstableError
        If the spectral radius of ``F`` is not below one.
    SingularSystemError
        If ``I - F`` cannot be solved.
    """
    f = ws.F
    dim = f.shape[0]
    nm = ws.num_nodes * ws.param_dim
    if dim != nm * nm:
        raise DimensionError(f"F is {f.shape}, expected {nm * nm}")
    rhs = vec(np.eye(nm)) / ws.num_nodes
    b = ws.driving_vector()
    x = np.zeros(dim)
    rho = 0.0
    ncomp, labels = _components(f)
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(ncomp + 1))
    for c in range(ncomp):
        idx = order[bounds[c]:bounds[c + 1]]
        if not rhs[idx].any() and not b[idx].any():
            continue
        fc = f[idx][:, idx]
        if len(idx) <= dense_cap:
            fd = fc.toarray()
            rho_c = float(np.max(np.abs(la.eigvals(fd))))
            rho = max(rho, rho_c)
            if rho_c >= 1.0 - UNIT_RADIUS_TOL:
                raise UnstableError(f"mean-square unstable: spectral radius of F is {rho_c:.6g}")
            try:
                x[idx] = la.solve(np.eye(len(idx)) - fd, rhs[idx])
            except la.LinAlgError as exc:
                raise SingularSystemError(str(exc)) from exc
        else:
            x[idx], rho_c = _solve_iterative(fc, rhs[idx])
            rho = max(rho, rho_c)
    msd = float(b @ x)
    return MSDResult(msd, to_db(msd), rho)


def _solve_iterative(fc, rhs):
    vals = spla.eigs(fc, k=1, which="LM", return_eigenvectors=False, tol=1e-10)
    rho = float(np.abs(vals[0]))
    if rho >= 1.0 - UNIT_RADIUS_TOL:
        raise UnstableError(f"mean-square unstable: spectral radius of F is {rho:.6g}")
    op = sp.identity(fc.shape[0], format="csr") - fc
    x, info = spla.gmres(op, rhs, rtol=1e-12, atol=0.0, maxiter=10_000)
    if info != 0:
        raise SingularSystemError(f"gmres did not converge (info={info})")
    return x, rho


def workspace_report(ws, msd=None):
    """Plain-dict summary for manifests and the ``analyze`` command."""
    out = {
        "mean_spectral_radius": ws.mean_spectral_radius(),
        "mu_max": ws.mu_max.tolist(),
        "mean_stable": ws.mean_stable,
    }
    if msd is None:
        try:
            msd = theoretical_msd(ws)
        except UnstableError as exc:
            out.update(theory_status="unstable", detail=str(exc))
            return out
        except SingularSystemError as exc:
            out.update(theory_status="singular", detail=str(exc))
            return out
    out.update(theory_status="ok", msd_spectral_radius=msd.spectral_radius,
               msd_linear=msd.linear, msd_db=msd.db)
    return out


# ---------------------------------------------------------------------------
# stacked error recursion (replay oracle for the engine)

def aggregate_link_noise(A, selections, link_noise, links):
    """``v_k = sum_l a_{lk} Lambda_l v_{lk}`` for every node; returns ``(N, M)``."""
    n, m = selections.shape
    out = np.zeros((n, m))
    for (l, k), v in zip(links, link_noise):
        out[k] += A.weights[l, k] * selections[l] * v
    return out


def error_recursion_step(prev_error, draws, env, config):
    """
    Advance the stacked weight-error vector one iteration from recorded draws.

    Parameters
    ----------
    prev_error : array_like, shape (N*M,) or (N, M)
    draws : IterationDraws
        A single iteration (no batch axes).

    Returns
    -------
    ndarray, shape (N, M)
    """
    n, m = env.num_nodes, env.param_dim
    e = np.asarray(prev_error, dtype=float).reshape(-1)
    if e.shape != (n * m,):
        raise DimensionError(f"error vector must have {n * m} entries")
    if draws.regressors.shape != (n, m):
        raise DimensionError("draws must describe one iteration of this network")
    eye = np.eye(n * m)
    a1 = build_block_combination(config.A1, draws.sel_first) if config.exchanges_first else eye
    a2 = build_block_combination(config.A2, draws.sel_second) if config.exchanges_second else eye
    r = la.block_diag(*[np.outer(u, u) for u in draws.regressors])
    mu = np.diag(np.repeat(config.step_sizes, m))
    s = (draws.regressors * draws.meas_noise[:, None]).reshape(-1)
    vw = aggregate_link_noise(config.A1, draws.sel_first, draws.link_w, env.links).reshape(-1)
    vpsi = aggregate_link_noise(config.A2, draws.sel_second, draws.link_psi, env.links).reshape(-1)
    h = eye - mu @ r
    out = a2 @ h @ a1 @ e - a2 @ h @ vw - a2 @ mu @ s - vpsi
    return out.reshape(n, m)

