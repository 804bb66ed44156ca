import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdlms.data import (Environment, LinkKind, Stream, generate_environment, make_rng,
                        sample_link_noise, sample_measurement, sample_regressor)
from pdlms.errors import DimensionError, InvalidConfigError
from pdlms.network import generate_topology


@pytest.fixture(scope="module")
def topo():
    return generate_topology(10, 2, seed=42)


def one_node(rvars, noise=0.01, wo=None):
    rvars = np.asarray(rvars, dtype=float)
    wo = np.ones(len(rvars)) if wo is None else wo
    return Environment(wo, rvars[None, :], np.array([noise]))


@pytest.mark.parametrize("kind", ["w", "psi"])
def test_gap_35_db(topo, kind):
    env = generate_environment(topo, 8, 35.0, seed=7)
    ratio = env.link_var_matrix(kind)[~np.eye(10, dtype=bool) & topo.adjacency()].mean()
    ratio /= env.meas_noise_vars.mean()
    assert ratio == pytest.approx(10 ** -3.5, rel=1e-9)
    assert env.link_noise_gap_db(kind) == pytest.approx(35.0, rel=1e-9)


def test_infinite_gap_gives_ideal_links(topo):
    env = generate_environment(topo, 8, math.inf, seed=7)
    assert np.all(env.link_vars_w == 0) and np.all(env.link_vars_psi == 0)


def test_same_seed_same_environment(topo):
    a = generate_environment(topo, 8, 35.0, seed=11)
    b = generate_environment(topo, 8, 35.0, seed=11)
    assert a.same_as(b)
    assert not a.same_as(generate_environment(topo, 8, 35.0, seed=12))


def test_roundtrip_dict(topo):
    env = generate_environment(topo, 4, 20.0, seed=1)
    assert Environment.from_dict(env.to_dict()).same_as(env)


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 10), seed=st.integers(0, 2**31), gap=st.floats(0, 80))
def test_environment_ranges(topo, m, seed, gap):
    env = generate_environment(topo, m, gap, seed)
    traces = env.regressor_vars.sum(axis=1) / m
    assert np.all((traces >= 0.5 - 1e-12) & (traces <= 2.0 + 1e-12))
    assert np.all((env.meas_noise_vars >= 0.01) & (env.meas_noise_vars <= 0.1))
    assert np.all(env.link_vars_w >= 0)


@pytest.mark.parametrize("bad", [
    dict(link_noise_gap_db=-1.0),
    dict(trace_range=(0.0, 1.0)),
    dict(noise_range=(0.2, 0.1)),
])
def test_generate_rejects(topo, bad):
    kw = dict(param_dim=4, link_noise_gap_db=10.0, seed=0) | bad
    with pytest.raises(InvalidConfigError):
        generate_environment(topo, **kw)


def test_environment_validation():
    with pytest.raises(InvalidConfigError):
        one_node([1.0, 0.0])
    with pytest.raises(DimensionError):
        Environment(np.ones(3), np.ones((1, 2)), np.ones(1))
    with pytest.raises(InvalidConfigError):
        Environment(np.ones(2), np.ones((2, 2)), np.ones(2), ((0, 0),), [0.0], [0.0])


def test_tiny_regressor_variance():
    env = one_node([1e-20, 1e-20])
    rng = make_rng(0, Stream.REGRESSOR)
    for _ in range(100):
        assert np.all(np.abs(sample_regressor(env, 0, rng)) < 1e-9)


def test_regressor_moments_and_whiteness():
    env = one_node([4.0, 1.0])
    rng = make_rng(1, Stream.REGRESSOR)
    u = np.array([sample_regressor(env, 0, rng) for _ in range(100_000)])
    np.testing.assert_allclose(u.var(axis=0), [4.0, 1.0], rtol=0.05)
    for j in range(2):
        rho = np.corrcoef(u[:-1, j], u[1:, j])[0, 1]
        assert abs(rho) < 0.02


def test_noiseless_measurement_is_inner_product():
    env = one_node([1.0, 1.0, 1.0], noise=0.0, wo=np.array([1.0, 0.0, 0.0]))
    rng = make_rng(0, Stream.MEASUREMENT)
    assert sample_measurement(env, 0, [3.0, 0.0, 0.0], rng) == 3.0
    u = np.array([0.5, -2.0, 1.0])
    assert sample_measurement(env, 0, u, rng) == pytest.approx(0.5)


def test_zero_regressor_gives_noise_variance():
    env = one_node([1.0, 1.0], noise=0.04)
    rng = make_rng(2, Stream.MEASUREMENT)
    d = np.array([sample_measurement(env, 0, np.zeros(2), rng) for _ in range(100_000)])
    assert d.var() == pytest.approx(0.04, rel=0.05)


def test_measurement_shape_check():
    with pytest.raises(DimensionError):
        sample_measurement(one_node([1.0, 1.0]), 0, np.ones(3), make_rng(0, 0))


def link_env(var):
    return Environment(np.zeros(8), np.ones((2, 8)), np.ones(2), ((0, 1), (1, 0)),
                       [var, var], [0.0, 0.0])


def test_link_noise_zero_variance():
    rng = make_rng(0, Stream.LINK_W)
    assert not np.any(sample_link_noise(link_env(0.0), 0, 1, LinkKind.W, rng))


def test_link_noise_moments():
    rng = make_rng(3, Stream.LINK_W)
    v = np.array([sample_link_noise(link_env(0.01), 0, 1, "w", rng) for _ in range(100_000)])
    np.testing.assert_allclose(v.var(axis=0), 0.01, rtol=0.05)


def test_link_noise_deterministic():
    a = sample_link_noise(link_env(0.01), 1, 0, "w", make_rng(9, Stream.LINK_W, 4))
    b = sample_link_noise(link_env(0.01), 1, 0, "w", make_rng(9, Stream.LINK_W, 4))
    assert np.array_equal(a, b)


def test_link_noise_rejects_non_link():
    with pytest.raises(InvalidConfigError):
        sample_link_noise(link_env(0.01), 0, 0, "w", make_rng(0, 0))
