"""
One-channel loss queue with controlled service intensity.

The state x in [0, 1] is the remaining work of the customer in service
(0 = idle). Arrivals come at rate lambda with work drawn from the density
5y^4 on (0, 1] and are lost when the channel is busy. In state x the
controller picks a in [0, Abar/x] and the customer leaves at rate a/x, at a
running cost C1 x + C2 a^2 - a/x.

This module builds the discretized model and the closed-form oracle the
solver is checked against.
"""
from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate

from .errors import ConfigError, ConvergenceError
from .model import ActionGrid, CostRate, CtmdpModel, SignedKernel, StateGrid, WeightSystem, fit_cost_bound
from .solver import DeterministicPolicy, solve

BAND_POINTS = 21
BAND_WIDTH = 0.1


class QueueParams(BaseModel):
    """Parameters of the queueing example; defaults are the desk-scale set."""

    model_config = ConfigDict(populate_by_name=True, frozen=True)

    lam: float = Field(0.1, alias="lambda", gt=0)
    C1: float = Field(1.0, ge=0)
    C2: float = Field(1.0, ge=0)
    Abar: float = Field(3.0, ge=0)
    alpha: float = Field(1.0, gt=0)
    gamma_low: float = Field(0.5, gt=0, le=1)
    gamma_high: float = Field(1.0, gt=0, le=1)
    gamma_atom: float = Field(0.0, ge=0, le=1)
    x_min: float = Field(0.01, gt=0, lt=1)
    n_actions: int = Field(41, ge=2)

    @model_validator(mode="after")
    def check_ranges(self) -> "QueueParams":
        if not self.alpha > 4.0 * self.lam:
            raise ValueError(f"alpha={self.alpha!r} must exceed 4*lambda={4.0 * self.lam!r}")
        if not self.gamma_low < self.gamma_high:
            raise ValueError("gamma_low must be below gamma_high")
        return self

    @property
    def arrival_share(self) -> float:
        """5 lambda / (alpha + lambda)."""
        return 5.0 * self.lam / (self.alpha + self.lam)


class FixedPointReport(BaseModel):
    z_history: list[float]
    z_star: float
    iterations: int
    converged: bool
    monotone: bool
    first_step_check: bool
    bound_check: bool
    alpha_bound_check: bool
    bound: float
    alpha_bound: float

    @property
    def status(self) -> str:
        return "pass" if self.converged and self.monotone and self.first_step_check and self.bound_check else "fail"


# --- Closed Forms ---

def _u(params: QueueParams, x, z):
    a, c1, c2 = params.alpha, params.C1, params.C2
    x = np.asarray(x, dtype=float)
    x2 = x * x
    return -2.0 * a * c2 * x2 - z + 2.0 * np.sqrt(a * a * c2 * c2 * x2 * x2 + c1 * c2 * x2 * x + a * c2 * x2 * z)


def _check_unit_interval(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x > 1.0):
        raise ValueError("x must lie in (0, 1]")
    return x


def u_closed_form(params: QueueParams, x, z: float):
    """
    u(x, z) = -2 alpha C2 x^2 - z + 2 sqrt(alpha^2 C2^2 x^4 + C1 C2 x^3 + alpha C2 x^2 z).

    Args:
        params (QueueParams): Example parameters.
        x (float | np.ndarray): Point(s) in (0, 1].
        z (float): z >= 0.

    Returns:
        float | np.ndarray: The value(s), shaped like ``x``.
    """
    x = _check_unit_interval(x)
    if z < 0:
        raise ValueError("z must be non-negative")
    value = _u(params, x, z)
    return float(value) if value.ndim == 0 else value


def _f(params: QueueParams, z: float, epsabs: float) -> float:
    integral, _ = integrate.quad(lambda y: _u(params, y, z) * y**4, 0.0, 1.0, epsabs=epsabs, epsrel=0.0, limit=200)
    return 1.0 - params.arrival_share * float(integral)


def fixed_point_z(params: QueueParams, tol: float = 1e-10, max_iter: int = 200) -> FixedPointReport:
    """
    Iterates z_{n+1} = 1 - (5 lambda / (alpha + lambda)) int_0^1 u(y, z_n) y^4 dy from z_0 = 0.

    Args:
        params (QueueParams): Example parameters; needs C1 / (2 alpha) <= 1.
        tol (float): Stop when |z_{n+1} - z_n| <= tol; quadrature runs at tol/10.
        max_iter (int): Iteration cap.

    Returns:
        FixedPointReport: The trace, the limit and the checks z_1 > 1 - C1/(2 alpha),
        z* < (10/7) C2 lambda + (alpha + lambda)/alpha and (reported separately)
        the same bound with alpha in place of lambda.

    Raises:
        ConvergenceError: No convergence within ``max_iter``.
    """
    if params.C1 / (2.0 * params.alpha) > 1.0:
        raise ConfigError(f"C1/(2 alpha) = {params.C1 / (2.0 * params.alpha)!r} exceeds 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    history = [0.0]
    converged = False
    for _ in range(max_iter):
        history.append(_f(params, history[-1], tol / 10.0))
        if abs(history[-1] - history[-2]) <= tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"fixed point did not converge within {max_iter} iterations (last step {history[-1] - history[-2]!r})")

    z_star = history[-1]
    steps = np.diff(history)
    monotone = bool(np.all(steps[:-1] > 0.0) and steps[-1] > -tol)
    first_step = history[1] > 1.0 - params.C1 / (2.0 * params.alpha)
    base = (params.alpha + params.lam) / params.alpha
    bound = 10.0 / 7.0 * params.C2 * params.lam + base
    alpha_bound = 10.0 / 7.0 * params.C2 * params.alpha + base
    report = FixedPointReport(
        z_history=history,
        z_star=z_star,
        iterations=len(history) - 1,
        converged=converged,
        monotone=monotone,
        first_step_check=bool(first_step),
        bound_check=bool(z_star < bound),
        alpha_bound_check=bool(z_star < alpha_bound),
        bound=bound,
        alpha_bound=alpha_bound,
    )
    if report.status == "fail":
        logging.warning(f"Fixed point checks failed: {report.model_dump(exclude={'z_history'})}")
    logging.info(f"Fixed point z* = {z_star!r} after {report.iterations} iterations")
    return report


@dataclass(frozen=True)
class OptimalPolicy:
    """phi*(x) = (u(x, z*) + z*) / (2 x C2) on (0, 1], phi*(0) = 0, with its a-posteriori checks."""

    params: QueueParams
    z_star: float
    admissible: bool
    nonnegative: bool
    required_abar: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        positive = x > 0
        safe = np.where(positive, x, 1.0)
        value = np.where(positive, (_u(self.params, safe, self.z_star) + self.z_star) / (2.0 * safe * self.params.C2), 0.0)
        return float(value) if value.ndim == 0 else value


def optimal_policy(params: QueueParams, z_star: float, xs: Sequence[float] | None = None) -> OptimalPolicy:
    """
    The closed-form minimizer phi* and its admissibility on ``xs``.

    Admissibility needs x phi*(x) = (u(x, z*) + z*) / (2 C2) <= Abar; when it
    fails the report carries the smallest Abar that would pass.
    """
    if params.C2 <= 0:
        raise ValueError("the closed-form policy needs C2 > 0")
    xs = np.geomspace(1e-6, 1.0, 4001) if xs is None else _check_unit_interval(xs)
    scaled = (_u(params, xs, z_star) + z_star) / (2.0 * params.C2)
    required = float(scaled.max())
    policy = OptimalPolicy(
        params=params,
        z_star=float(z_star),
        admissible=required <= params.Abar,
        nonnegative=bool(np.all(scaled >= -1e-12)),
        required_abar=required,
    )
    if not policy.admissible:
        logging.warning(f"phi* is not admissible for Abar={params.Abar!r}; Abar >= {required!r} is required")
    return policy


def u_star_at_zero(z_star: float, params: QueueParams | None = None, tol: float = 1e-8) -> float:
    """
    u*(0) = 1 - z*.

    With ``params`` the value is checked against (5 lambda / (alpha + lambda)) int_0^1 u(y, z*) y^4 dy.

    Raises:
        ConvergenceError: The identity fails by more than ``tol``.
    """
    if z_star < 0:
        raise ValueError("z_star must be non-negative")
    value = 1.0 - z_star
    if params is not None:
        identity = 1.0 - _f(params, z_star, tol / 10.0)
        if abs(identity - value) > tol:
            raise ConvergenceError(f"u*(0) = {value!r} but the quadrature identity gives {identity!r}; z* is not a fixed point")
    return value


def inf_cost_closed_form(params: QueueParams, x):
    """
    min over a in [0, Abar/x] of C1 x + C2 a^2 - a/x.

    C1 x - 1/(4 C2 x^2) when 1/(2 C2) < Abar, else C1 x + C2 Abar^2/x^2 - Abar/x^2.

    Raises:
        ValueError: C2 = 0, where the branch test 1/(2 C2) < Abar is undefined.
    """
    x = _check_unit_interval(x)
    c1, c2, abar = params.C1, params.C2, params.Abar
    if c2 <= 0:
        raise ValueError("inf_cost_closed_form needs C2 > 0")
    if 1.0 / (2.0 * c2) < abar:
        value = c1 * x - 1.0 / (4.0 * c2 * x * x)
    else:
        value = c1 * x + (c2 * abar * abar - abar) / (x * x)
    return float(value) if value.ndim == 0 else value


def closed_form_table(params: QueueParams, z_star: float, xs: Iterable[float]) -> list[tuple[float, float, float]]:
    """Rows (x, u*(x), phi*(x)); x = 0 gives (0, 1 - z*, 0)."""
    policy = OptimalPolicy(params, z_star, True, True, float("nan"))
    rows = []
    for x in xs:
        x = float(x)
        if x == 0.0:
            rows.append((0.0, u_star_at_zero(z_star), 0.0))
        else:
            rows.append((x, u_closed_form(params, x, z_star), policy(x)))
    return rows


# --- Discretization ---

def state_points(params: QueueParams, n_states: int) -> np.ndarray:
    """{0} followed by n_states - 1 points spaced geometrically on [x_min, 1]."""
    if n_states < 2:
        raise ValueError("the queueing grid needs at least two states")
    positive = np.array([1.0]) if n_states == 2 else np.geomspace(params.x_min, 1.0, n_states - 1)
    positive[-1] = 1.0
    return np.concatenate([[0.0], positive])


def _action_grid(params: QueueParams, x: float, z: float | None) -> np.ndarray:
    top = params.Abar / x
    grid = np.linspace(0.0, top, params.n_actions)
    if z is not None and params.C2 > 0:
        center = (float(_u(params, x, z)) + z) / (2.0 * x * params.C2)
        band = np.linspace((1.0 - BAND_WIDTH) * center, (1.0 + BAND_WIDTH) * center, BAND_POINTS)
        grid = np.concatenate([grid, np.clip(band, 0.0, top)])
    return np.unique(grid)


def _initial_masses(params: QueueParams, points: np.ndarray) -> np.ndarray:
    """Atom at 0 plus the uniform density on [gamma_low, gamma_high] lumped onto the cells (x_{j-1}, x_j]."""
    lower, upper = points[:-1], points[1:]
    overlap = np.clip(np.minimum(upper, params.gamma_high) - np.maximum(lower, params.gamma_low), 0.0, None)
    gamma = np.concatenate([[params.gamma_atom], (1.0 - params.gamma_atom) * overlap / (params.gamma_high - params.gamma_low)])
    return gamma / gamma.sum()


def build_discrete_model(params: QueueParams, n_states: int, z_hint: float | None = None) -> CtmdpModel:
    """
    Discretizes the queue on {0} and a geometric grid of (0, 1].

    The arrival row at 0 puts lambda (x_j^5 - x_{j-1}^5) on x_j (exact mass of
    the cell (x_{j-1}, x_j] under 5 lambda y^4) and -lambda on the diagonal.
    Action grids are uniform on [0, Abar/x] plus a band around the closed-form
    minimizer for ``z_hint`` (z* from ``fixed_point_z`` when None).

    Returns:
        CtmdpModel: With w = x^-4, w' = x^-2 (1 at 0), levels floor(1/x),
        rho = 4 lambda, rho' = 2 lambda / 3, b = b' = 0, L and L' from the
        rate bounds and M, M' fitted on the grid.
    """
    points = state_points(params, n_states)
    positive = points[1:]
    if z_hint is None and params.C2 > 0:
        z_hint = fixed_point_z(params).z_star
    per_state = [np.array([0.0])] + [_action_grid(params, x, z_hint) for x in positive]
    actions = ActionGrid(tuple(per_state))

    # arrival row (pair 0)
    masses = params.lam * np.diff(np.concatenate([[0.0], positive]) ** 5)
    rows = [np.zeros(n_states, dtype=np.int64)]
    cols = [np.arange(n_states)]
    data = [np.concatenate([[-params.lam], masses])]

    # service rows
    flat = actions.flat[1:]
    pair_state = actions.pair_state[1:]
    x_of_pair = points[pair_state]
    rate = flat / x_of_pair
    active = rate > 0
    pairs = np.arange(1, actions.n_pairs)[active]
    rows += [pairs, pairs]
    cols += [np.zeros(pairs.size, dtype=np.int64), pair_state[active]]
    data += [rate[active], -rate[active]]
    rates = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(actions.n_pairs, n_states)
    )
    kernel = SignedKernel(rates, actions.pair_state)

    cost = np.concatenate([[0.0], params.C1 * x_of_pair + params.C2 * flat**2 - flat / x_of_pair])
    w = np.concatenate([[1.0], positive**-4])
    w_prime = np.concatenate([[1.0], positive**-2])
    levels = np.concatenate([[0], np.floor(1.0 / positive + 1e-12).astype(np.int64)])
    draft = CtmdpModel(
        states=StateGrid(points, levels),
        actions=actions,
        kernel=kernel,
        cost=CostRate(cost),
        weights=WeightSystem(w, w_prime),
        alpha=params.alpha,
        gamma=_initial_masses(params, points),
    )
    weights = WeightSystem(
        w,
        w_prime,
        rho=4.0 * params.lam,
        b=0.0,
        rho_prime=2.0 * params.lam / 3.0,
        b_prime=0.0,
        L=max(params.Abar, params.lam) + 1.0,
        L_prime=max(params.Abar, params.lam) + 1.0,
        M=fit_cost_bound(draft, w),
        c=0.0,
        M_prime=fit_cost_bound(draft, w_prime),
        c_prime=0.0,
    )
    logging.info(f"Built queueing model with {n_states} states and {actions.n_pairs} (state, action) pairs")
    return draft.with_changes(weights=weights)


def queue_policy_on_grid(model: CtmdpModel, params: QueueParams, z_star: float) -> DeterministicPolicy:
    """Per grid state, the action index closest to phi*(x)."""
    phi = OptimalPolicy(params, z_star, True, True, float("nan"))
    choice = [int(np.argmin(np.abs(model.actions[i] - phi(x)))) for i, x in enumerate(model.states.points)]
    return DeterministicPolicy(np.asarray(choice))


def weighted_grid_error(model: CtmdpModel, params: QueueParams, values: np.ndarray, z_star: float) -> float:
    """max over grid x in (0, 1] of |values(x) - u(x, z*)| / w'(x)."""
    positive = model.states.points > 0
    exact = _u(params, model.states.points[positive], z_star)
    return float(np.max(np.abs(values[positive] - exact) / model.weights.w_prime[positive]))


class RefinementRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int
    error: float
    iterations: int
    converged: bool


def refinement_study(
    params: QueueParams,
    sizes: Sequence[int] = (250, 500, 1000, 2000),
    tol: float = 1e-9,
    z_star: float | None = None,
) -> list[RefinementRow]:
    """Solves the discretized queue at each grid size and reports the w'-weighted sup error against u(x, z*)."""
    if z_star is None:
        z_star = fixed_point_z(params).z_star
    rows = []
    for n in sizes:
        model = build_discrete_model(params, n, z_hint=z_star)
        report = solve(model, tol=tol)
        error = weighted_grid_error(model, params, report.value.values, z_star)
        logging.info(f"Refinement n={n}: weighted sup error {error:.3e}")
        rows.append(RefinementRow(n=n, error=error, iterations=report.iterations, converged=report.converged))
    return rows


FIXED_POINT_HEADER = ("n", "z")
CLOSED_FORM_HEADER = ("x", "u_star", "phi_star")


def fixed_point_rows(report: FixedPointReport) -> Iterable[tuple]:
    return enumerate(report.z_history)
