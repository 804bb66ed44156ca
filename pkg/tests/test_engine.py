import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import algorithm
from reference import diffusion_lms

from pdlms.analysis import error_recursion_step
from pdlms.data import Environment, generate_environment
from pdlms.engine import (AlgorithmConfig, DrawSource, IterationDraws, adapt, combine_first,
                          combine_second, make_algorithm, run_iteration, run_trial, run_trials)
from pdlms.errors import DimensionError, DivergenceError, InvalidConfigError
from pdlms.network import (CombinationMatrix, NetworkTopology, build_uniform_combination,
                           generate_topology, identity_combination)
from pdlms.selection import SelectionSchedule

HALF = CombinationMatrix(np.full((2, 2), 0.5))
PAIR_LINKS = ((0, 1), (1, 0))


def pair_instance():
    est = np.array([[1.0, 1.0], [3.0, 5.0]])
    sel = np.array([[True, True], [True, False]])
    noise = np.array([[9.0, 9.0], [0.2, 0.7]])   # (0,1) unused below; (1,0) carries 0.2
    return est, sel, noise


@pytest.mark.parametrize("combine", [combine_first, combine_second])
def test_combine_hand_example(combine):
    est, sel, noise = pair_instance()
    out = combine(est, sel, noise, HALF, PAIR_LINKS)
    np.testing.assert_allclose(out[0], [2.1, 1.0], atol=1e-15)


def test_identity_combination_ignores_neighbors():
    est, sel, noise = pair_instance()
    out = combine_first(est, sel, noise, identity_combination(2), PAIR_LINKS)
    assert np.array_equal(out, est)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 6), m=st.integers(1, 5))
def test_full_selection_noiseless_is_weighted_sum(seed, n, m):
    topo = generate_topology(n, 1, seed)
    a = build_uniform_combination(topo)
    w = np.random.default_rng(seed).standard_normal((n, m))
    out = combine_second(w, np.ones((n, m), bool), np.zeros((len(topo.links), m)), a, topo.links)
    np.testing.assert_allclose(out, a.weights.T @ w, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 6), m=st.integers(1, 5))
def test_combination_preserves_consensus(seed, n, m):
    # a common vector is a fixed point for any selection pattern when noise is zero
    rng = np.random.default_rng(seed)
    topo = generate_topology(n, 1, seed)
    x = np.tile(rng.standard_normal(m), (n, 1))
    sel = rng.random((n, m)) < 0.5
    out = combine_first(x, sel, np.zeros((len(topo.links), m)),
                        build_uniform_combination(topo), topo.links)
    np.testing.assert_allclose(out, x, atol=1e-12)


def test_combine_shape_errors():
    est, sel, noise = pair_instance()
    with pytest.raises(DimensionError):
        combine_first(est, sel[:, :1], noise, HALF, PAIR_LINKS)
    with pytest.raises(DimensionError):
        combine_first(est, sel, noise[:1], HALF, PAIR_LINKS)


def test_adapt_zero_step_and_fixed_point():
    rng = np.random.default_rng(0)
    phi, u = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    d = rng.standard_normal(3)
    assert np.array_equal(adapt(phi, u, d, np.zeros(3)), phi)
    wo = rng.standard_normal(4)
    truth = np.tile(wo, (3, 1))
    np.testing.assert_allclose(adapt(truth, u, u @ wo, np.full(3, 0.3)), truth, atol=1e-14)


def test_mode_constraints(pair):
    s = SelectionSchedule("sequential", 2, 1)
    with pytest.raises(InvalidConfigError):
        AlgorithmConfig("atc", [0.1, 0.1], "ideal", s, HALF, HALF)
    with pytest.raises(InvalidConfigError):
        AlgorithmConfig("cta", [0.1, 0.1], "ideal", s, HALF, HALF)
    with pytest.raises(DimensionError):
        AlgorithmConfig("general", [0.1], "ideal", s, HALF, HALF)


def zero_draws(n, m, e):
    z = np.zeros((n, m))
    return IterationDraws(z, np.zeros(n), np.zeros(n), np.ones((n, m), bool),
                          np.ones((n, m), bool), np.zeros((e, m)), np.zeros((e, m)))


def test_global_fixed_point(small_net):
    topo, env = small_net
    cfg = algorithm(topo, "general", "stochastic", 2)
    w = np.tile(env.true_param, (5, 1))
    draws = zero_draws(5, 4, len(topo.links))
    draws.regressors = np.random.default_rng(0).standard_normal((5, 4))
    draws.measurements = draws.regressors @ env.true_param
    state = run_iteration(w, draws, cfg, topo.links)
    np.testing.assert_allclose(state.weight, w, atol=1e-14)


def test_run_iteration_is_composition(pair):
    env = generate_environment(pair, 2, 10.0, seed=2)
    cfg = make_algorithm("general", build_uniform_combination(pair),
                         SelectionSchedule("stochastic", 2, 1), 0.05)
    draws = DrawSource(env, cfg, seed=3, trial=0).block(0, 2)[1]
    w = np.random.default_rng(4).standard_normal((2, 2))
    state = run_iteration(w, draws, cfg, pair.links)
    phi = combine_first(w, draws.sel_first, draws.link_w, cfg.A1, pair.links)
    psi = adapt(phi, draws.regressors, draws.measurements, cfg.step_sizes)
    np.testing.assert_array_equal(state.phi, phi)
    np.testing.assert_array_equal(state.psi, psi)
    np.testing.assert_array_equal(
        state.weight, combine_second(psi, draws.sel_second, draws.link_psi, cfg.A2, pair.links))


def test_isolated_nodes_run_plain_lms(small_net):
    topo, env = small_net
    cfg = make_algorithm("general", identity_combination(5), SelectionSchedule("stochastic", 4, 1),
                         0.05)
    rec = run_trial(env, cfg, 200, seed=1, keep_draws=True)
    w = np.zeros((5, 4))
    for i, dr in enumerate(rec.draws):
        for k in range(5):
            u = dr.regressors[k]
            w[k] = w[k] + 0.05 * u * (dr.measurements[k] - u @ w[k])
        np.testing.assert_allclose(rec.sq_dev[i], ((env.true_param - w) ** 2).sum(axis=1),
                                   rtol=1e-12)


@pytest.mark.parametrize("mode", ["atc", "cta"])
def test_full_ideal_matches_reference(small_net, mode):
    topo, env = small_net
    cfg = algorithm(topo, mode, "sequential", 4, links="ideal")
    rec = run_trial(env, cfg, 300, seed=5, keep_draws=True)
    u = np.array([d.regressors for d in rec.draws])
    d = np.array([d.measurements for d in rec.draws])
    ref = diffusion_lms(build_uniform_combination(topo).weights, cfg.step_sizes, u, d, mode)
    np.testing.assert_allclose(rec.sq_dev, ((env.true_param - ref) ** 2).sum(axis=2),
                               atol=1e-12)


@pytest.mark.parametrize("mode", ["atc", "cta", "general"])
@pytest.mark.parametrize("scheme", ["sequential", "stochastic"])
def test_replay_matches_error_recursion(mode, scheme):
    topo = generate_topology(3, 2, seed=0)
    env = generate_environment(topo, 4, 10.0, seed=1)
    cfg = algorithm(topo, mode, scheme, 2, mu=0.05)
    rec = run_trial(env, cfg, 60, seed=2, keep_draws=True)
    err = np.tile(env.true_param, (3, 1))
    for i, dr in enumerate(rec.draws):
        err = error_recursion_step(err, dr, env, cfg)
        np.testing.assert_allclose((err ** 2).sum(axis=1), rec.sq_dev[i], rtol=1e-9, atol=1e-12)


def test_zero_step_keeps_initial_deviation(small_net):
    topo, env = small_net
    cfg = algorithm(topo, "atc", "stochastic", 1, links="ideal", mu=0.0)
    rec = run_trial(env, cfg, 50, seed=0)
    np.testing.assert_allclose(rec.sq_dev, np.sum(env.true_param ** 2), rtol=1e-14)


def test_same_seed_bit_identical(small_net):
    topo, env = small_net
    cfg = algorithm(topo, "cta", "stochastic", 1)
    a = run_trial(env, cfg, 300, seed=4).sq_dev
    b = run_trial(env, cfg, 300, seed=4).sq_dev
    assert np.array_equal(a, b)


def test_batching_does_not_change_results(small_net):
    topo, env = small_net
    cfg = algorithm(topo, "general", "stochastic", 2)
    a = run_trials(env, cfg, 150, seed=1, trials=range(7), batch_size=3).sq_dev
    b = run_trials(env, cfg, 150, seed=1, trials=range(7), batch_size=50).sq_dev
    c = run_trial(env, cfg, 150, seed=1, trial=5).sq_dev
    np.testing.assert_allclose(a, b, rtol=1e-13)
    np.testing.assert_allclose(a[5], c, rtol=1e-13)


def test_stable_step_converges(small_net):
    topo, env = small_net
    cfg = algorithm(topo, "atc", "sequential", 2)
    sq = run_trial(env, cfg, 2000, seed=0).sq_dev.mean(axis=1)
    assert sq[-200:].mean() < 0.01 * sq[0]


def test_divergence_is_reported():
    topo = NetworkTopology.from_edges(2, [(0, 1)])
    env = Environment(np.ones(2), np.ones((2, 2)), np.full(2, 0.01))
    cfg = make_algorithm("atc", build_uniform_combination(topo),
                         SelectionSchedule("sequential", 2, 2), 6.0)
    with pytest.raises(DivergenceError) as info:
        run_trial(env, cfg, 5000, seed=0)
    assert info.value.iteration > 0
    assert info.value.partial.shape == (info.value.iteration, 2)
