from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from ctmdp.errors import ConfigError, ConvergenceError
from ctmdp.model import ConditionId, check_condition, validate_kernel
from ctmdp.queueing import (
    QueueParams,
    build_discrete_model,
    closed_form_table,
    fixed_point_rows,
    fixed_point_z,
    inf_cost_closed_form,
    optimal_policy,
    queue_policy_on_grid,
    refinement_study,
    state_points,
    u_closed_form,
    u_star_at_zero,
    weighted_grid_error,
)
from ctmdp.simulator import PolicySpec, choose_horizon, estimate_discounted_cost, weight_moment_check
from ctmdp.solver import DeterministicPolicy, ValueFunction, extract_policy, policy_value, solve


def _riemann_fixed_point(lam, alpha, c1, c2, panels=100_000):
    """Midpoint-rule fixed point, written out independently of the library formula."""
    h = 1.0 / panels
    y = (np.arange(panels) + 0.5) * h
    share = 5.0 * lam / (alpha + lam)
    z = 0.0
    for _ in range(200):
        radical = np.sqrt(alpha**2 * c2**2 * y**4 + c1 * c2 * y**3 + alpha * c2 * y**2 * z)
        u = -2.0 * alpha * c2 * y**2 - z + 2.0 * radical
        new = 1.0 - share * h * float(np.sum(u * y**4))
        if abs(new - z) < 1e-14:
            return new
        z = new
    raise AssertionError("oracle did not converge")


# --- Parameters ---

def test_params_accept_lambda_alias() -> None:
    params = QueueParams.model_validate({"lambda": 0.2, "alpha": 1.0})

    assert params.lam == 0.2
    assert params.arrival_share == pytest.approx(1.0 / 1.2)


def test_params_reject_small_alpha() -> None:
    with pytest.raises(ValidationError, match="must exceed 4"):
        QueueParams(lam=0.5, alpha=1.0)


def test_params_reject_empty_gamma_interval() -> None:
    with pytest.raises(ValidationError, match="gamma_low"):
        QueueParams(gamma_low=0.8, gamma_high=0.6)


# --- Closed Forms ---

def test_u_closed_form_matches_arithmetic(queue_params) -> None:
    expected = -2.0 * 0.25 - 0.3 + 2.0 * math.sqrt(0.0625 + 0.125 + 0.075)

    assert u_closed_form(queue_params, 0.5, 0.3) == pytest.approx(expected, rel=1e-14)


def test_u_closed_form_vanishes_without_holding_cost() -> None:
    params = QueueParams(C1=0.0)

    values = u_closed_form(params, np.linspace(0.01, 1.0, 50), 0.0)

    assert np.allclose(values, 0.0, atol=1e-14)


def test_u_at_zero_z_below_holding_bound(queue_params) -> None:
    xs = np.linspace(0.001, 1.0, 500)

    assert np.all(u_closed_form(queue_params, xs, 0.0) <= queue_params.C1 * xs / queue_params.alpha + 1e-15)


def test_u_closed_form_decreases_in_z(queue_params) -> None:
    zs = np.linspace(0.0, 2.0, 41)
    for x in (0.05, 0.3, 1.0):
        values = [u_closed_form(queue_params, x, z) for z in zs]
        assert np.all(np.diff(values) < 0.0)


@pytest.mark.parametrize("x", [0.0, -0.1, 1.5])
def test_u_closed_form_rejects_points_outside_unit_interval(queue_params, x) -> None:
    with pytest.raises(ValueError):
        u_closed_form(queue_params, x, 0.1)


def test_u_closed_form_rejects_negative_z(queue_params) -> None:
    with pytest.raises(ValueError):
        u_closed_form(queue_params, 0.5, -0.1)


# --- Fixed Point ---

def test_fixed_point_matches_riemann_oracle(queue_params) -> None:
    report = fixed_point_z(queue_params)
    oracle = _riemann_fixed_point(queue_params.lam, queue_params.alpha, queue_params.C1, queue_params.C2)

    assert report.converged
    assert report.iterations <= 200
    assert report.z_star == pytest.approx(oracle, abs=1e-8)


def test_fixed_point_checks(queue_params) -> None:
    report = fixed_point_z(queue_params)

    assert report.status == "pass"
    assert report.monotone
    assert report.z_history[1] > 0.5
    assert 0.5 < report.z_star < report.bound
    assert report.bound == pytest.approx(10.0 / 7.0 * 0.1 + 1.1)
    assert report.alpha_bound_check


def test_fixed_point_contracts(queue_params) -> None:
    history = fixed_point_z(queue_params).z_history
    steps = np.diff(history)
    factor = queue_params.lam / (queue_params.alpha + queue_params.lam)

    assert np.all(steps[:-1] > 0.0)
    for before, after in zip(steps, steps[1:]):
        if before > 1e-7:
            assert abs(after) <= (factor + 1e-6) * before


def test_fixed_point_first_step_without_holding_cost() -> None:
    report = fixed_point_z(QueueParams(C1=0.0))

    assert report.z_history[0] == 0.0
    assert report.z_history[1] == pytest.approx(1.0, abs=1e-12)


def test_fixed_point_refuses_large_holding_cost() -> None:
    with pytest.raises(ConfigError, match="exceeds 1"):
        fixed_point_z(QueueParams(C1=3.0))


def test_fixed_point_reports_non_convergence(queue_params) -> None:
    with pytest.raises(ConvergenceError):
        fixed_point_z(queue_params, tol=1e-14, max_iter=2)


def test_fixed_point_rows(queue_params) -> None:
    report = fixed_point_z(queue_params)

    rows = list(fixed_point_rows(report))

    assert rows[0] == (0, 0.0)
    assert [n for n, _ in rows] == list(range(report.iterations + 1))


# --- u*(0) and phi* ---

def test_u_star_at_zero_trivial_values() -> None:
    assert u_star_at_zero(1.0) == 0.0
    assert u_star_at_zero(0.0) == 1.0


def test_u_star_at_zero_matches_quadrature_identity(queue_params, z_star) -> None:
    assert u_star_at_zero(z_star, queue_params, tol=1e-8) == pytest.approx(1.0 - z_star)


def test_u_star_at_zero_flags_wrong_fixed_point(queue_params, z_star) -> None:
    with pytest.raises(ConvergenceError, match="not a fixed point"):
        u_star_at_zero(z_star + 0.01, queue_params)


def test_u_star_at_zero_rejects_negative() -> None:
    with pytest.raises(ValueError):
        u_star_at_zero(-0.5)


def test_optimal_policy_is_admissible(queue_params, z_star) -> None:
    policy = optimal_policy(queue_params, z_star)

    assert policy.admissible
    assert policy.nonnegative
    assert policy.required_abar <= queue_params.Abar
    assert policy(0.0) == 0.0
    xs = np.linspace(0.01, 1.0, 200)
    assert np.all(policy(xs) >= 0.0)
    assert np.all(xs * policy(xs) <= queue_params.Abar)


def test_optimal_policy_reports_required_bound(queue_params, z_star) -> None:
    tight = queue_params.model_copy(update={"Abar": 0.1})

    policy = optimal_policy(tight, z_star)

    assert not policy.admissible
    assert policy.required_abar == pytest.approx(optimal_policy(queue_params, z_star).required_abar)
    assert policy.required_abar > 0.1


def test_closed_form_table(queue_params, z_star) -> None:
    rows = closed_form_table(queue_params, z_star, [0.0, 0.5, 1.0])

    assert rows[0] == (0.0, 1.0 - z_star, 0.0)
    x, u, phi = rows[2]
    assert u == pytest.approx(u_closed_form(queue_params, 1.0, z_star))
    assert phi == pytest.approx((u + z_star) / (2.0 * queue_params.C2))


# --- Infimum of the Cost Rate ---

def test_inf_cost_first_branch(queue_params) -> None:
    assert inf_cost_closed_form(queue_params, 1.0) == pytest.approx(1.0 - 0.25)


def test_inf_cost_first_branch_without_holding_cost() -> None:
    assert inf_cost_closed_form(QueueParams(C1=0.0), 1.0) == pytest.approx(-0.25)


def test_inf_cost_rejects_zero_quadratic_cost() -> None:
    with pytest.raises(ValueError, match="C2 > 0"):
        inf_cost_closed_form(QueueParams(C2=0.0), 0.5)


@pytest.mark.parametrize("overrides", [{}, {"C2": 10.0, "Abar": 0.01}])
def test_inf_cost_matches_grid_scan(overrides) -> None:
    params = QueueParams(**overrides)
    for x in (0.05, 0.4, 1.0):
        a = np.linspace(0.0, params.Abar / x, 200_001)
        scan = float(np.min(params.C1 * x + params.C2 * a**2 - a / x))

        assert inf_cost_closed_form(params, x) == pytest.approx(scan, rel=1e-6, abs=1e-9)


# --- Discretization ---

def test_state_points() -> None:
    params = QueueParams()

    assert state_points(params, 2).tolist() == [0.0, 1.0]
    points = state_points(params, 5)
    assert points[0] == 0.0
    assert points[1] == pytest.approx(params.x_min)
    assert points[-1] == 1.0
    assert np.all(np.diff(points) > 0)
    with pytest.raises(ValueError):
        state_points(params, 1)


def test_two_state_queue_validates(queue_params, z_star) -> None:
    model = build_discrete_model(queue_params, 2, z_hint=z_star)

    assert model.n_states == 2
    assert validate_kernel(model).status == "pass"


def test_discrete_model_layout(small_queue, queue_params) -> None:
    points = small_queue.states.points

    assert validate_kernel(small_queue).status == "pass"
    assert small_queue.gamma.sum() == pytest.approx(1.0)
    assert np.all(small_queue.gamma[points < queue_params.gamma_low - 0.02] == 0.0)
    assert small_queue.states.levels[0] == 0
    assert small_queue.states.levels[-1] == 1
    assert small_queue.weights.w[1] == pytest.approx(queue_params.x_min**-4)
    assert small_queue.weights.rho == pytest.approx(4.0 * queue_params.lam)


def test_discrete_model_passes_drift_conditions(small_queue) -> None:
    for cid in ConditionId:
        report = check_condition(small_queue, cid)
        assert report.status == "pass", (cid, report.detail)


def test_extract_policy_on_closed_form_tracks_phi_star(small_queue, queue_params, z_star) -> None:
    points = small_queue.states.points
    values = np.concatenate([[1.0 - z_star], u_closed_form(queue_params, points[1:], z_star)])

    policy = extract_policy(small_queue, ValueFunction(values))

    chosen = policy.action_values(small_queue)[1:]
    phi = optimal_policy(queue_params, z_star)(points[1:])
    assert chosen == pytest.approx(phi, rel=1e-2)


def test_weighted_grid_error_is_zero_on_closed_form(small_queue, queue_params, z_star) -> None:
    points = small_queue.states.points
    values = np.concatenate([[1.0 - z_star], u_closed_form(queue_params, points[1:], z_star)])

    assert weighted_grid_error(small_queue, queue_params, values, z_star) == 0.0


def test_solver_on_coarse_grid_is_close(queue_params, z_star) -> None:
    model = build_discrete_model(queue_params, 250, z_hint=z_star)

    report = solve(model)

    assert report.converged
    assert weighted_grid_error(model, queue_params, report.value.values, z_star) <= 2e-2


@pytest.mark.slow
def test_refinement_study_error_decreases(queue_params, z_star) -> None:
    rows = refinement_study(queue_params, z_star=z_star)

    errors = [row.error for row in rows]
    assert all(row.converged for row in rows)
    assert all(later < earlier for earlier, later in zip(errors, errors[1:]))
    assert errors[-1] <= 5e-3


def test_queue_policy_on_grid_tracks_phi_star(small_queue, queue_params, z_star) -> None:
    policy = queue_policy_on_grid(small_queue, queue_params, z_star)

    chosen = policy.action_values(small_queue)
    phi = optimal_policy(queue_params, z_star)(small_queue.states.points)
    assert chosen[0] == 0.0
    assert chosen[1:] == pytest.approx(phi[1:], rel=1e-2)


def _nearest_policy(model, targets) -> DeterministicPolicy:
    return DeterministicPolicy(
        np.asarray([int(np.argmin(np.abs(model.actions[i] - target))) for i, target in enumerate(targets)])
    )


@pytest.mark.slow
def test_phi_star_is_optimal_by_simulation(small_queue, queue_params, z_star) -> None:
    grid_policy = queue_policy_on_grid(small_queue, queue_params, z_star)
    horizon = choose_horizon(small_queue, 1e-3)
    base = estimate_discounted_cost(small_queue, PolicySpec.deterministic(small_queue, grid_policy), horizon, n=2000, seed=11)
    exact = float(small_queue.gamma @ policy_value(small_queue, grid_policy).values)

    assert abs(base.mean - exact) <= 2.0 * base.half_width + base.tail_bound

    phi = optimal_policy(queue_params, z_star)(small_queue.states.points)
    tops = np.array([grid.max() for grid in small_queue.actions.per_state])
    for targets in (0.5 * phi, 0.8 * phi, 1.2 * phi, 1.5 * phi, tops):
        perturbed = _nearest_policy(small_queue, targets)
        spec = PolicySpec.deterministic(small_queue, perturbed)
        estimate = estimate_discounted_cost(small_queue, spec, horizon, n=2000, seed=11)
        assert estimate.mean >= base.mean - base.half_width - estimate.half_width

    moment = weight_moment_check(small_queue, PolicySpec.deterministic(small_queue, grid_policy), 0.5, n=500, seed=2)
    assert moment.status == "pass"
