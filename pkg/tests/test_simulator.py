from __future__ import annotations

import functools
import math

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import expm

from ctmdp import simulator
from ctmdp.errors import PolicyError
from ctmdp.model import build_model, policy_generator, random_finite_model
from ctmdp.simulator import (
    TRAJECTORY_HEADER,
    PolicyKind,
    PolicySpec,
    auto_horizon,
    choose_horizon,
    dynkin_residual,
    estimate_discounted_cost,
    explosion_probe,
    kolmogorov_residual,
    simulate_episode,
    tail_bound,
    trajectory_rows,
    weight_moment_check,
)
from ctmdp.queueing import queue_policy_on_grid
from ctmdp.solver import DeterministicPolicy, policy_value, solve


def _fork():
    """State 0 jumps to the absorbing state 1 at rate 1 (action 0) or 3 (action 1)."""
    return build_model(
        points=[0.0, 1.0],
        actions=[[0.0, 1.0], [0.0]],
        entries=[(0, 0, 1, 1.0), (0, 0, 0, -1.0), (0, 1, 1, 3.0), (0, 1, 0, -3.0)],
        cost=[[1.0, 1.0], [0.0]],
        alpha=1.0,
        gamma=[1.0, 0.0],
    )


def _birth_chain(n_states: int, rate: float):
    entries = []
    for i in range(n_states - 1):
        entries += [(i, 0, i + 1, rate), (i, 0, i, -rate)]
    return build_model(
        points=np.arange(n_states, dtype=float),
        actions=[[0.0]] * n_states,
        entries=entries,
        cost=[[0.0]] * n_states,
        alpha=1.0,
        gamma=[1.0] + [0.0] * (n_states - 1),
        levels=list(range(n_states)),
    )


def _first_sojourns(model, policy, n, seed=11, horizon=20.0):
    samples = []
    for episode in range(n):
        trajectory = simulate_episode(model, policy, horizon, seed, episode)
        assert trajectory.n_jumps == 1
        samples.append(trajectory.times[1])
    return np.asarray(samples)


def _time_varying(t: float, state: int) -> np.ndarray:
    if state == 1:
        return np.array([1.0])
    return np.array([math.exp(-t), 1.0 - math.exp(-t)])


# --- Sampling ---

def test_zero_kernel_episode_never_jumps(zero_kernel) -> None:
    policy = PolicySpec.deterministic(zero_kernel, DeterministicPolicy(np.zeros(3, dtype=int)))

    trajectory = simulate_episode(zero_kernel, policy, horizon=4.0, seed=1)

    assert trajectory.n_jumps == 0
    assert trajectory.absorbed
    assert not trajectory.exploded
    assert trajectory.discounted_cost == pytest.approx(2.0 * (1.0 - math.exp(-2.0)) / 0.5)


def test_zero_kernel_estimate_has_no_spread(zero_kernel) -> None:
    policy = PolicySpec.deterministic(zero_kernel, DeterministicPolicy(np.zeros(3, dtype=int)))

    estimate = estimate_discounted_cost(zero_kernel, policy, horizon=10.0, n=50, seed=0)

    assert estimate.mean == pytest.approx(4.0 * (1.0 - math.exp(-5.0)))
    assert estimate.half_width == pytest.approx(0.0, abs=1e-12)
    assert estimate.row()[2:] == (50, estimate.tail_bound, 10.0)


def test_constant_policy_sojourn_is_exponential() -> None:
    model = _fork()
    policy = PolicySpec.deterministic(model, DeterministicPolicy(np.array([1, 0])))

    samples = _first_sojourns(model, policy, 2000)

    assert stats.kstest(samples, "expon", args=(0.0, 1.0 / 3.0)).pvalue > 1e-3


def test_thinning_matches_time_varying_survival() -> None:
    model = _fork()
    policy = PolicySpec.randomized_markov(_time_varying, rate_majorant=[3.0, 0.0])

    samples = _first_sojourns(model, policy, 2000)

    # Lambda(u) = 3 - 2 e^{-u}
    def cdf(u):
        return 1.0 - np.exp(-3.0 * u + 2.0 * (1.0 - np.exp(-u)))

    assert stats.kstest(samples, cdf).pvalue > 1e-3


def test_breakpoints_give_piecewise_exponential_sojourn() -> None:
    model = _fork()

    def switch(t: float, state: int) -> np.ndarray:
        if state == 1:
            return np.array([1.0])
        return np.array([1.0, 0.0]) if t < 0.5 else np.array([0.0, 1.0])

    policy = PolicySpec.randomized_markov(switch, breakpoints=[0.5])

    samples = _first_sojourns(model, policy, 2000)

    def cdf(u):
        u = np.asarray(u)
        return np.where(u < 0.5, 1.0 - np.exp(-u), 1.0 - np.exp(-0.5 - 3.0 * (u - 0.5)))

    assert stats.kstest(samples, cdf).pvalue > 1e-3


def test_breakpoints_and_thinning_agree() -> None:
    model = _fork()

    def switch(t: float, state: int) -> np.ndarray:
        if state == 1:
            return np.array([1.0])
        return np.array([1.0, 0.0]) if t < 0.5 else np.array([0.0, 1.0])

    exact = _first_sojourns(model, PolicySpec.randomized_markov(switch, breakpoints=[0.5]), 2000, seed=11)
    thinned = _first_sojourns(model, PolicySpec.randomized_markov(switch, rate_majorant=[3.0, 0.0]), 2000, seed=12)

    assert stats.ks_2samp(exact, thinned).pvalue > 1e-3


def test_episodes_are_reproducible(two_state) -> None:
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([1, 0])))

    first = simulate_episode(two_state, policy, 5.0, seed=42, episode=3)
    again = simulate_episode(two_state, policy, 5.0, seed=42, episode=3)
    other = simulate_episode(two_state, policy, 5.0, seed=42, episode=4)

    assert np.array_equal(first.times, again.times)
    assert np.array_equal(first.states, again.states)
    assert first.discounted_cost == again.discounted_cost
    assert not np.array_equal(first.times, other.times)


def test_state_at_is_right_continuous(two_state) -> None:
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([1, 0])))
    trajectory = simulate_episode(two_state, policy, 5.0, seed=7, start=0)

    assert trajectory.n_jumps >= 1
    assert trajectory.state_at(trajectory.times[1]) == trajectory.states[1]
    assert trajectory.state_at(0.0) == 0
    with pytest.raises(ValueError):
        trajectory.state_at(6.0)


def test_randomized_stationary_policy_logs_actions(two_state) -> None:
    policy = PolicySpec.randomized_stationary([np.array([0.5, 0.5]), np.array([0.2, 0.8])])

    trajectory = simulate_episode(two_state, policy, 3.0, seed=5)

    assert policy.kind is PolicyKind.RANDOMIZED_STATIONARY
    assert trajectory.actions.size == trajectory.states.size
    assert set(trajectory.actions.tolist()) <= {0, 1}


def test_trajectory_rows(zero_kernel) -> None:
    policy = PolicySpec.deterministic(zero_kernel, DeterministicPolicy(np.array([1, 1, 1])))
    trajectory = simulate_episode(zero_kernel, policy, 1.0, seed=0, start=2)

    rows = list(trajectory_rows(zero_kernel, 9, trajectory))

    assert TRAJECTORY_HEADER == ("episode", "m", "T_m", "x_m", "action")
    assert rows == [(9, 0, 0.0, 2, 1.0)]


# --- Policy Errors ---

def test_invalid_probabilities_are_rejected(two_state) -> None:
    policy = PolicySpec.randomized_stationary([np.array([0.5, 0.6]), np.array([1.0, 0.0])])

    with pytest.raises(PolicyError, match="not a probability vector"):
        simulate_episode(two_state, policy, 1.0, seed=0, start=0)


def test_time_varying_policy_needs_majorant() -> None:
    policy = PolicySpec.randomized_markov(_time_varying)

    with pytest.raises(PolicyError, match="majorant"):
        simulate_episode(_fork(), policy, 5.0, seed=0)


def test_violated_majorant_is_reported() -> None:
    policy = PolicySpec.randomized_markov(_time_varying, rate_majorant=[0.5, 0.0])

    with pytest.raises(PolicyError, match="exceeds the majorant"):
        simulate_episode(_fork(), policy, 100.0, seed=0)


def test_exact_diagnostics_need_deterministic_policy(two_state) -> None:
    policy = PolicySpec.randomized_stationary([np.array([0.5, 0.5]), np.array([0.5, 0.5])])

    with pytest.raises(PolicyError, match="deterministic stationary"):
        kolmogorov_residual(two_state, policy, 0, 1.0, [1])


# --- Estimation ---

def test_choose_horizon_inverts_tail_bound(two_state) -> None:
    horizon = choose_horizon(two_state, 1e-3)

    assert tail_bound(two_state, horizon) == pytest.approx(1e-3, rel=1e-6)
    assert choose_horizon(two_state, 10.0) == 0.0


def test_estimate_matches_policy_value(two_state) -> None:
    policy = solve(two_state, tol=1e-12).policy
    exact = float(two_state.gamma @ policy_value(two_state, policy).values)
    horizon = choose_horizon(two_state, 1e-4)

    estimate = estimate_discounted_cost(two_state, PolicySpec.deterministic(two_state, policy), horizon, n=4000, seed=3)

    assert abs(estimate.mean - exact) <= 2.0 * estimate.half_width + estimate.tail_bound
    assert estimate.exploded_episodes == 0


def test_estimate_is_reproducible(two_state) -> None:
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([0, 0])))

    first = estimate_discounted_cost(two_state, policy, 2.0, n=30, seed=9)
    again = estimate_discounted_cost(two_state, policy, 2.0, n=30, seed=9)

    assert first.row() == again.row()


def test_estimate_needs_two_episodes(two_state) -> None:
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([0, 0])))

    with pytest.raises(ValueError):
        estimate_discounted_cost(two_state, policy, 1.0, n=1)


# --- Diagnostics ---

def test_weight_moment_matches_matrix_exponential() -> None:
    model = random_finite_model(3, n_states=4, max_actions=2)
    policy = DeterministicPolicy(np.zeros(4, dtype=int))
    generator, _ = policy_generator(model, policy.choice)
    exact = float(expm(generator.toarray())[0] @ model.weights.w)

    report = weight_moment_check(model, PolicySpec.deterministic(model, policy), t=1.0, n=2000, seed=2, start=0)

    assert report.status == "pass"
    assert abs(report.mean - exact) <= 4.0 * report.stderr + 1e-9
    assert exact <= report.bound + 1e-9


@pytest.mark.parametrize("t", [1.0, 2.0])
def test_weight_moment_on_queue(small_queue, queue_params, z_star, t) -> None:
    policy = PolicySpec.deterministic(small_queue, queue_policy_on_grid(small_queue, queue_params, z_star))

    report = weight_moment_check(small_queue, policy, t=t, n=500, seed=2)

    assert report.exploded_episodes == 0
    assert report.status == "pass"


def test_weight_moment_fails_on_exploded_episodes(two_state, monkeypatch) -> None:
    monkeypatch.setattr(simulator, "simulate_episode", functools.partial(simulator.simulate_episode, max_jumps=1))
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([1, 0])))

    report = weight_moment_check(two_state, policy, t=5.0, n=20, seed=0, start=0)

    assert report.exploded_episodes > 0
    assert report.status == "fail"


def test_weight_moment_of_constant_weight(zero_kernel) -> None:
    policy = PolicySpec.deterministic(zero_kernel, DeterministicPolicy(np.zeros(3, dtype=int)))

    report = weight_moment_check(zero_kernel, policy, t=1.0, n=10, seed=0)

    assert report.mean == 1.0
    assert report.stderr == 0.0
    assert report.status == "pass"


def test_kolmogorov_residual_vanishes(two_state) -> None:
    policy = DeterministicPolicy(np.array([1, 0]))

    assert kolmogorov_residual(two_state, policy, 0, 0.0, [1]) == pytest.approx(0.0, abs=1e-12)
    for t in (0.5, 2.0):
        for x in (0, 1):
            assert kolmogorov_residual(two_state, policy, x, t, [1]) <= 1e-7
            assert kolmogorov_residual(two_state, policy, x, t, [0, 1]) <= 1e-7


@pytest.mark.parametrize("n_states", [2, 4, 6])
def test_residuals_vanish_on_random_models(n_states) -> None:
    model = random_finite_model(n_states, n_states=n_states, max_actions=3)
    policy = DeterministicPolicy(np.zeros(n_states, dtype=int))
    u = np.linspace(-1.0, 2.0, n_states)
    top = np.flatnonzero(model.states.levels <= 1)

    for t in (0.5, 2.0):
        for x in range(n_states):
            assert kolmogorov_residual(model, policy, x, t, top, level=1) <= 1e-6
            assert dynkin_residual(model, policy, u, x, t) <= 1e-6
            assert dynkin_residual(model, policy, u, x, t, discounted=True) <= 1e-6


def test_residuals_vanish_on_queue_solution(small_queue, small_queue_solution) -> None:
    report = small_queue_solution
    x = int(np.argmax(small_queue.gamma))
    low_levels = np.flatnonzero(small_queue.states.levels <= 2)
    scale = max(1.0, abs(float(report.value.values[x])))

    assert kolmogorov_residual(small_queue, report.policy, x, 0.5, low_levels, level=2) <= 1e-6
    assert dynkin_residual(small_queue, report.policy, report.value, x, 0.5) <= 1e-6 * scale
    assert dynkin_residual(small_queue, report.policy, report.value, x, 0.5, discounted=True) <= 1e-6 * scale


def test_kolmogorov_target_must_lie_in_level() -> None:
    model = _birth_chain(4, 1.0)

    with pytest.raises(ValueError, match="not contained"):
        kolmogorov_residual(model, DeterministicPolicy(np.zeros(4, dtype=int)), 0, 1.0, [3], level=1)


def test_dynkin_residual_vanishes(two_state) -> None:
    policy = DeterministicPolicy(np.array([1, 0]))
    u = np.array([1.5, -0.25])

    for t in (0.0, 0.5, 2.0):
        assert dynkin_residual(two_state, policy, u, 0, t) <= 1e-7
        assert dynkin_residual(two_state, policy, u, 1, t, discounted=True) <= 1e-7


def test_dynkin_constant_function(two_state) -> None:
    policy = DeterministicPolicy(np.array([0, 1]))

    assert dynkin_residual(two_state, policy, np.full(2, 3.0), 0, 1.0) == pytest.approx(0.0, abs=1e-10)


def test_explosion_probe_reaches_zero_at_top_level() -> None:
    model = _birth_chain(7, 1.0)
    policy = PolicySpec.deterministic(model, DeterministicPolicy(np.zeros(7, dtype=int)))

    report = explosion_probe(model, policy, t=1.0, levels=[1, 2, 6], n=400, seed=4)

    assert report.frequencies[-1] == 0.0
    assert report.decreasing
    assert report.status == "pass"


def test_explosion_probe_fast_chain_leaves_low_levels() -> None:
    model = _birth_chain(4, 50.0)
    policy = PolicySpec.deterministic(model, DeterministicPolicy(np.zeros(4, dtype=int)))

    report = explosion_probe(model, policy, t=1.0, levels=[1, 2], n=200, seed=4)

    assert min(report.frequencies) >= 0.95
    assert report.status == "fail"


def test_explosion_probe_on_queue(small_queue, queue_params, z_star) -> None:
    policy = PolicySpec.deterministic(small_queue, queue_policy_on_grid(small_queue, queue_params, z_star))

    report = explosion_probe(small_queue, policy, t=1.0, levels=range(1, 21), n=200, seed=4)

    assert report.levels == list(range(1, 21))
    assert report.frequencies[-1] < 0.01
    assert report.exploded_episodes == 0
    assert report.status == "pass"


def test_explosion_probe_fails_on_guard(monkeypatch) -> None:
    model = _birth_chain(7, 50.0)
    policy = PolicySpec.deterministic(model, DeterministicPolicy(np.zeros(7, dtype=int)))
    monkeypatch.setattr(simulator, "simulate_episode", functools.partial(simulator.simulate_episode, max_jumps=2))

    report = explosion_probe(model, policy, t=1.0, levels=[6], n=20, seed=4)

    assert report.frequencies == [0.0]
    assert report.exploded_episodes > 0
    assert report.status == "fail"


def test_explosion_probe_needs_increasing_levels() -> None:
    model = _birth_chain(4, 1.0)
    policy = PolicySpec.deterministic(model, DeterministicPolicy(np.zeros(4, dtype=int)))

    with pytest.raises(ValueError, match="strictly increasing"):
        explosion_probe(model, policy, t=1.0, levels=[2, 1], n=10, seed=0)


def test_history_dependent_policy_sees_jump_count(two_state) -> None:
    def alternate(history, elapsed):
        return np.array([1.0, 0.0]) if history.m % 2 == 0 else np.array([0.0, 1.0])

    policy = PolicySpec.history_dependent(alternate, breakpoints=lambda history: ())

    trajectory = simulate_episode(two_state, policy, 10.0, seed=3, start=0)

    assert policy.kind is PolicyKind.HISTORY_DEPENDENT
    assert trajectory.n_jumps >= 2
    assert trajectory.actions.tolist() == [m % 2 for m in range(trajectory.actions.size)]


def test_auto_horizon_keeps_tail_small(two_state) -> None:
    policy = PolicySpec.deterministic(two_state, DeterministicPolicy(np.array([1, 0])))

    horizon = auto_horizon(two_state, policy, n=400, seed=1)
    estimate = estimate_discounted_cost(two_state, policy, horizon, n=400, seed=1)

    assert horizon > 0
    assert estimate.tail_bound <= 0.2 * estimate.half_width


@pytest.mark.slow
def test_confidence_interval_coverage(two_state) -> None:
    policy = DeterministicPolicy(np.array([1, 0]))
    spec = PolicySpec.deterministic(two_state, policy)
    exact = float(two_state.gamma @ policy_value(two_state, policy).values)
    horizon = choose_horizon(two_state, 1e-4)

    covered = 0
    for run in range(200):
        estimate = estimate_discounted_cost(two_state, spec, horizon, n=100, seed=run)
        covered += abs(estimate.mean - exact) <= estimate.half_width + estimate.tail_bound

    assert covered / 200 >= 0.9
