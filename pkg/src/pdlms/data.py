"""
Data model: unknown parameter, regressors, measurements and link noise.

All randomness flows through :func:`make_rng`, which derives an independent
PCG64 stream from ``(seed, stream, *key)`` with :class:`numpy.random.SeedSequence`.
Identical keys reproduce identical sequences; distinct keys are independent.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InvalidConfigError

DEFAULT_TRACE_RANGE = (0.5, 2.0)   # trace(R_u,k) / M
DEFAULT_NOISE_RANGE = (0.01, 0.1)  # measurement-noise variance


class Stream(enum.IntEnum):
    REGRESSOR = 0
    MEASUREMENT = 1
    LINK_W = 2
    LINK_PSI = 3
    SELECT_FIRST = 4
    SELECT_SECOND = 5
    ENVIRONMENT = 6


class LinkKind(str, enum.Enum):
    W = "w"      # first-phase exchange of w_{l,i-1}
    PSI = "psi"  # second-phase exchange of psi_{l,i}


def make_rng(seed, stream, *key):
    """Independent generator for ``(seed, stream, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), *map(int, key)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Environment:
    """
    Statistical description of the estimation problem.

    Parameters
    ----------
    true_param : ndarray, shape (M,)
        The unknown vector ``w°``.
    regressor_vars : ndarray, shape (N, M)
        Diagonals of the regressor covariances ``R_u,k``.
    meas_noise_vars : ndarray, shape (N,)
        Measurement-noise variances.
    links : tuple of (int, int)
        Directed pairs ``(l, k)`` (source, sink) that carry link noise.
    link_vars_w, link_vars_psi : ndarray, shape (len(links),)
        Per-link variances of the isotropic first/second-phase link noise.
    """

    true_param: np.ndarray = field(repr=False)
    regressor_vars: np.ndarray = field(repr=False)
    meas_noise_vars: np.ndarray = field(repr=False)
    links: tuple = ()
    link_vars_w: np.ndarray = field(default=None, repr=False)
    link_vars_psi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        wo = _frozen(self.true_param, 1)
        ru = _frozen(self.regressor_vars, 2)
        sv = _frozen(self.meas_noise_vars, 1)
        links = tuple((int(l), int(k)) for l, k in self.links)
        nl = len(links)
        vw = _frozen(np.zeros(nl) if self.link_vars_w is None else self.link_vars_w, 1)
        vp = _frozen(np.zeros(nl) if self.link_vars_psi is None else self.link_vars_psi, 1)
        n, m = ru.shape
        if wo.shape != (m,):
            raise DimensionError(f"true_param has shape {wo.shape}, expected ({m},)")
        if sv.shape != (n,):
            raise DimensionError(f"meas_noise_vars has shape {sv.shape}, expected ({n},)")
        if vw.shape != (nl,) or vp.shape != (nl,):
            raise DimensionError("link variance arrays must match the link list")
        if np.any(ru <= 0):
            raise InvalidConfigError("regressor variances must be strictly positive")
        if np.any(sv < 0) or np.any(vw < 0) or np.any(vp < 0):
            raise InvalidConfigError("noise variances must be non-negative")
        for l, k in links:
            if l == k or not (0 <= l < n and 0 <= k < n):
                raise InvalidConfigError(f"invalid link ({l}, {k})")
        for name, value in (("true_param", wo), ("regressor_vars", ru),
                            ("meas_noise_vars", sv), ("links", links),
                            ("link_vars_w", vw), ("link_vars_psi", vp)):
            object.__setattr__(self, name, value)

    @property
    def num_nodes(self):
        return self.regressor_vars.shape[0]

    @property
    def param_dim(self):
        return self.regressor_vars.shape[1]

    def regressor_cov(self, node):
        return np.diag(self.regressor_vars[node])

    def link_index(self, source, sink):
        try:
            return self.links.index((source, sink))
        except ValueError:
            raise InvalidConfigError(
                f"no link {source}->{sink}; link noise is structurally zero there") from None

    def link_var_matrix(self, kind):
        """``N x N`` array with ``[l, k]`` the variance on link ``l -> k``."""
        out = np.zeros((self.num_nodes, self.num_nodes))
        var = self.link_vars_w if LinkKind(kind) is LinkKind.W else self.link_vars_psi
        for (l, k), v in zip(self.links, var):
            out[l, k] = v
        return out

    def link_noise_gap_db(self, kind):
        """Mean measurement-noise power over mean link-noise power, in dB."""
        var = self.link_vars_w if LinkKind(kind) is LinkKind.W else self.link_vars_psi
        if len(var) == 0 or var.mean() == 0:
            return math.inf
        return 10 * math.log10(self.meas_noise_vars.mean() / var.mean())

    def to_dict(self):
        return {
            "true_param": self.true_param.tolist(),
            "regressor_vars": self.regressor_vars.tolist(),
            "meas_noise_vars": self.meas_noise_vars.tolist(),
            "links": [list(p) for p in self.links],
            "link_vars_w": self.link_vars_w.tolist(),
            "link_vars_psi": self.link_vars_psi.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            true_param=np.asarray(d["true_param"], dtype=float),
            regressor_vars=np.asarray(d["regressor_vars"], dtype=float),
            meas_noise_vars=np.asarray(d["meas_noise_vars"], dtype=float),
            links=tuple(tuple(p) for p in d["links"]),
            link_vars_w=np.asarray(d["link_vars_w"], dtype=float),
            link_vars_psi=np.asarray(d["link_vars_psi"], dtype=float),
        )

    def same_as(self, other):
        return self.to_dict() == other.to_dict()


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


def generate_environment(topology, param_dim, link_noise_gap_db, seed,
                         trace_range=DEFAULT_TRACE_RANGE, noise_range=DEFAULT_NOISE_RANGE):
    """
    Draw a random environment on ``topology``.

    ``trace(R_u,k)`` is uniform in ``param_dim * trace_range`` with a random
    split over the diagonal; measurement-noise variances are uniform in
    ``noise_range``. Link-noise variances are drawn uniformly then rescaled per
    kind so that their network mean sits exactly ``link_noise_gap_db`` below
    the network-mean measurement-noise variance. ``math.inf`` gives ideal links.
    """
    n = topology.num_nodes
    if n < 1 or param_dim < 1:
        raise InvalidConfigError("num_nodes and param_dim must be positive")
    if not link_noise_gap_db >= 0:
        raise InvalidConfigError("link_noise_gap_db must be >= 0")
    lo, hi = trace_range
    if not 0 < lo <= hi:
        raise InvalidConfigError(f"bad trace_range {trace_range}")
    nlo, nhi = noise_range
    if not 0 < nlo <= nhi:
        raise InvalidConfigError(f"bad noise_range {noise_range}")

    rng = make_rng(seed, Stream.ENVIRONMENT)
    true_param = rng.standard_normal(param_dim)
    traces = rng.uniform(lo * param_dim, hi * param_dim, size=n)
    shares = rng.uniform(0.2, 1.0, size=(n, param_dim))
    regressor_vars = shares / shares.sum(axis=1, keepdims=True) * traces[:, None]
    noise_vars = rng.uniform(nlo, nhi, size=n)

    links = topology.links
    raw_w = rng.uniform(0.0, 1.0, size=len(links))
    raw_psi = rng.uniform(0.0, 1.0, size=len(links))
    if math.isinf(link_noise_gap_db) or not links:
        var_w = np.zeros(len(links))
        var_psi = np.zeros(len(links))
    else:
        target = noise_vars.mean() * 10.0 ** (-link_noise_gap_db / 10.0)
        var_w = raw_w * (target / raw_w.mean())
        var_psi = raw_psi * (target / raw_psi.mean())
    return Environment(true_param, regressor_vars, noise_vars, links, var_w, var_psi)


def sample_regressor(env, node, rng):
    """Zero-mean Gaussian row vector with covariance ``R_u,node``."""
    return rng.standard_normal(env.param_dim) * np.sqrt(env.regressor_vars[node])


def sample_measurement(env, node, regressor, rng):
    """``d = u w° + v`` with ``v ~ N(0, sigma_v,node^2)``."""
    regressor = np.asarray(regressor, dtype=float)
    if regressor.shape != (env.param_dim,):
        raise DimensionError(f"regressor has shape {regressor.shape}")
    noise = rng.standard_normal() * math.sqrt(env.meas_noise_vars[node])
    return float(regressor @ env.true_param + noise)


def sample_link_noise(env, source, sink, kind, rng):
    """Isotropic Gaussian noise vector on link ``source -> sink``."""
    idx = env.link_index(source, sink)
    var = env.link_vars_w[idx] if LinkKind(kind) is LinkKind.W else env.link_vars_psi[idx]
    return rng.standard_normal(env.param_dim) * math.sqrt(var)
