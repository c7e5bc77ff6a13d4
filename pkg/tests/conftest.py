from __future__ import annotations

import pytest

from ctmdp.model import CtmdpModel, build_model, with_fitted_constants, zero_kernel_model
from ctmdp.queueing import QueueParams, build_discrete_model, fixed_point_z
from ctmdp.solver import SolveReport, solve

# (state, action index, target, rate)
TWO_STATE_ENTRIES = [
    (0, 0, 1, 1.0),
    (0, 0, 0, -1.0),
    (0, 1, 1, 3.0),
    (0, 1, 0, -3.0),
    (1, 0, 0, 0.5),
    (1, 0, 1, -0.5),
    (1, 1, 0, 2.0),
    (1, 1, 1, -2.0),
]
TWO_STATE_COST = [[2.0, 3.0], [0.0, 1.0]]


def make_two_state(cost=TWO_STATE_COST, alpha: float = 1.0) -> CtmdpModel:
    draft = build_model(
        points=[0.0, 1.0],
        actions=[[1.0, 3.0], [0.5, 2.0]],
        entries=TWO_STATE_ENTRIES,
        cost=cost,
        alpha=alpha,
        gamma=[0.5, 0.5],
    )
    return with_fitted_constants(draft)


@pytest.fixture
def two_state() -> CtmdpModel:
    return make_two_state()


@pytest.fixture
def zero_kernel() -> CtmdpModel:
    return zero_kernel_model(n_states=3, cost=2.0, alpha=0.5, n_actions=2, rho=0.0, b=0.0, M=2.0, c=0.0)


@pytest.fixture(scope="session")
def queue_params() -> QueueParams:
    return QueueParams()


@pytest.fixture(scope="session")
def z_star(queue_params: QueueParams) -> float:
    return fixed_point_z(queue_params).z_star


@pytest.fixture(scope="session")
def small_queue(queue_params: QueueParams, z_star: float) -> CtmdpModel:
    return build_discrete_model(queue_params, 120, z_hint=z_star)


@pytest.fixture(scope="session")
def small_queue_solution(small_queue: CtmdpModel) -> SolveReport:
    return solve(small_queue, tol=1e-9)
