"""
Value iteration for the discounted Bellman equation and optimality certificates.

The iteration uses the per-state uniformization

    u_{n+1}(x) = min_a { c0(x,a) + sum_y q(y|x,a) u_n(y) + (1 + qbar_x) u_n(x) } / (alpha + 1 + qbar_x),

which starts from an upper bound u_0 built from the drift and cost constants
and decreases pointwise to the Bellman function.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pydantic import BaseModel, ConfigDict

from .errors import ConditionError, InvariantError, KernelError
from .model import TAU_CONS, CtmdpModel, min_over_actions, policy_generator
from .tools.streams import episode_stream

TAU_MONO = 1e-12
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000

WeightName = Literal["w", "w_prime"]


# --- Domain Types ---

@dataclass(frozen=True, eq=False)
class ValueFunction:
    """Values over the state grid; ``norm_tag`` names the weight its boundedness is measured in."""

    values: np.ndarray
    norm_tag: WeightName = "w_prime"

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("value functions must be finite 1-d arrays")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def norm(self, model: CtmdpModel, weight: WeightName | None = None) -> float:
        """Weighted sup-norm max_x |u(x)| / weight(x)."""
        scale = model.weights.weight(weight or self.norm_tag)
        return float(np.max(np.abs(self.values) / scale))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """Action index into A(x) per state."""

    choice: np.ndarray

    def __post_init__(self) -> None:
        choice = np.array(self.choice, dtype=np.int64, copy=True)
        choice.setflags(write=False)
        object.__setattr__(self, "choice", choice)

    def validate(self, model: CtmdpModel) -> None:
        if self.choice.shape != (model.n_states,):
            raise IndexError("policy must choose an action for every state")
        if np.any(self.choice < 0) or np.any(self.choice >= model.actions.counts):
            raise IndexError("policy chooses an action index outside A(x)")

    def pairs(self, model: CtmdpModel) -> np.ndarray:
        return model.actions.offsets[:-1] + self.choice

    def action_values(self, model: CtmdpModel) -> np.ndarray:
        return model.actions.flat[self.pairs(model)]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    sup_change: float
    residual: float


class SolveReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iterations: int
    converged: bool
    tol: float
    final_residual: float
    history: list[IterationRecord]
    value: ValueFunction
    policy: DeterministicPolicy
    start_weight: str
    invariant_violations: int = 0

    @property
    def monotone_bounded(self) -> bool:
        return self.invariant_violations == 0

    @property
    def status(self) -> str:
        return "converged" if self.converged else "non-converged"


class DlpReport(BaseModel):
    feasibility_slack: float
    objective: float
    feasible: bool
    worst_state: int
    worst_action: int


# --- Bellman Operator ---

def _require_probability_rows(model: CtmdpModel) -> None:
    """Raises unless q(.|x,a)/(1+qbar_x) + delta_x(.) is a probability row for every pair."""
    scale = 1.0 + model.qbar[model.pair_state]
    kernel = model.kernel
    if np.any(kernel.min_off_diagonal < 0.0):
        raise KernelError("uniformized kernel has a negative off-diagonal entry")
    if np.any(1.0 + kernel.diagonal / scale < -TAU_CONS):
        raise KernelError("uniformized kernel has a negative diagonal entry (qbar is not an upper bound)")
    if np.any(np.abs(kernel.row_sums) / scale > TAU_CONS):
        raise KernelError("uniformized kernel row does not sum to one")


def _bellman_step(model: CtmdpModel, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pair_values = model.cost.values + model.kernel.apply(u)
    best, argmin = min_over_actions(model, pair_values)
    scale = 1.0 + model.qbar
    return (best + scale * u) / (model.alpha + scale), best, argmin


def _weight_constants(model: CtmdpModel, weight: WeightName) -> tuple[np.ndarray, float, float, float, float]:
    weights = model.weights
    if weight == "w":
        weights.require("M", "c", "rho", "b")
        return weights.w, weights.M, weights.c, weights.rho, weights.b
    weights.require("M_prime", "c_prime", "rho_prime", "b_prime")
    return weights.w_prime, weights.M_prime, weights.c_prime, weights.rho_prime, weights.b_prime


def initial_value(model: CtmdpModel, weight: WeightName = "w") -> ValueFunction:
    """
    Upper starting point u_0(x) = M (alpha w(x) + b) / (alpha (alpha - rho)) + c / alpha.

    Args:
        model (CtmdpModel): The model; the drift and cost constants of the
            chosen weight must be present.
        weight (str): "w" (default) or "w_prime" to start from the primed
            constants.

    Returns:
        ValueFunction: u_0, tagged with the weight it was built from.

    Raises:
        ConditionError: Missing constants or alpha <= rho.
    """
    w, M, c, rho, b = _weight_constants(model, weight)
    alpha = model.alpha
    if alpha <= rho:
        raise ConditionError(f"alpha={alpha!r} must exceed rho={rho!r}")
    return ValueFunction(M * (alpha * w + b) / (alpha * (alpha - rho)) + c / alpha, norm_tag=weight)


def bellman_iterate(model: CtmdpModel, u: ValueFunction) -> ValueFunction:
    """Applies one step of the uniformized Bellman operator."""
    _require_probability_rows(model)
    v, _, _ = _bellman_step(model, u.values)
    return ValueFunction(v, u.norm_tag)


def bellman_residual(model: CtmdpModel, u: ValueFunction) -> float:
    """max_x |alpha u(x) - min_a {c0(x,a) + sum_y q(y|x,a) u(y)}| / w'(x)."""
    best, _ = min_over_actions(model, model.cost.values + model.kernel.apply(u.values))
    return float(np.max(np.abs(model.alpha * u.values - best) / model.weights.w_prime))


def extract_policy(model: CtmdpModel, u: ValueFunction) -> DeterministicPolicy:
    """Greedy policy: smallest action index attaining min_a {c0(x,a) + sum_y q(y|x,a) u(y)}."""
    _, argmin = min_over_actions(model, model.cost.values + model.kernel.apply(u.values))
    return DeterministicPolicy(argmin)


def greedy_action_sets(model: CtmdpModel, u: ValueFunction, tol: float = 1e-9) -> list[np.ndarray]:
    """Per state, every action index whose Bellman value is within ``tol`` of the minimum."""
    pair_values = model.cost.values + model.kernel.apply(u.values)
    best, _ = min_over_actions(model, pair_values)
    offsets = model.actions.offsets
    return [
        np.flatnonzero(pair_values[offsets[i]:offsets[i + 1]] <= best[i] + tol)
        for i in range(model.n_states)
    ]


# --- Solver ---

def solve(
    model: CtmdpModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    start_weight: WeightName = "w",
    strict: bool = True,
) -> SolveReport:
    """
    Runs value iteration from ``initial_value`` until the w'-weighted sup-norm change is at most ``tol``.

    Every iterate is checked to be pointwise non-increasing and bounded by
    +-u_0 (tolerance 1e-12 times the starting weight).

    Args:
        model (CtmdpModel): The model.
        tol (float): Stopping tolerance on max_x |u_{n+1}(x) - u_n(x)| / w'(x).
        max_iter (int): Iteration cap; reaching it flags the report as
            non-converged instead of raising.
        start_weight (str): Weight whose constants build u_0.
        strict (bool): Raise InvariantError on a monotonicity or bound
            violation instead of logging it.

    Returns:
        SolveReport: The last iterate, its greedy policy and the iteration history.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    _require_probability_rows(model)
    start = initial_value(model, start_weight)
    bound = start.values
    slack = TAU_MONO * model.weights.weight(start_weight)
    w_prime = model.weights.w_prime

    u = start.values
    history: list[IterationRecord] = []
    violations = 0
    converged = False
    for n in range(1, max_iter + 1):
        v, best, _ = _bellman_step(model, u)
        change = float(np.max(np.abs(v - u) / w_prime))
        residual = float(np.max(np.abs(model.alpha * u - best) / w_prime))
        history.append(IterationRecord(n, change, residual))

        rising = np.flatnonzero(v > u + slack)
        escaping = np.flatnonzero(np.abs(v) > bound + slack)
        if rising.size or escaping.size:
            violations += 1
            message = (
                f"value iteration invariant violated at iteration {n}: "
                f"{rising.size} states increased, {escaping.size} states left the u_0 bound"
            )
            if strict:
                raise InvariantError(message)
            logging.warning(message)

        # residual at u is (alpha + 1 + qbar) |v - u| / w', at most K * tol once change <= tol
        if change <= tol:
            converged = True
            break
        u = v

    value = ValueFunction(u, "w_prime")
    if converged:
        logging.info(f"Value iteration converged after {len(history)} iterations (change {history[-1].sup_change:.3e})")
    else:
        logging.warning(f"Value iteration stopped at max_iter={max_iter} without reaching tol={tol!r}")
    return SolveReport(
        iterations=len(history),
        converged=converged,
        tol=tol,
        final_residual=bellman_residual(model, value),
        history=history,
        value=value,
        policy=extract_policy(model, value),
        start_weight=start_weight,
        invariant_violations=violations,
    )


# --- Certificates & Oracles ---

def dlp_check(model: CtmdpModel, v: ValueFunction, tol: float = DEFAULT_TOL) -> DlpReport:
    """
    Feasibility and objective of ``v`` in the dual linear program.

    The constraint (1/alpha) c0(x,a) - v(x) + (1/alpha) sum_y q(y|x,a) v(y) >= 0
    is evaluated at every pair and divided by w'(x), the scale of
    ``bellman_residual``; the objective is sum_x gamma(x) v(x).

    Returns:
        DlpReport: The minimum w'-weighted constraint slack, the objective,
        and whether that slack is at least ``-tol``.
    """
    alpha = model.alpha
    slack = model.cost.values / alpha - v.values[model.pair_state] + model.kernel.apply(v.values) / alpha
    slack = slack / model.weights.w_prime[model.pair_state]
    worst = int(np.argmin(slack))
    state = int(model.pair_state[worst])
    return DlpReport(
        feasibility_slack=float(slack[worst]),
        objective=float(model.gamma @ v.values),
        feasible=bool(slack[worst] >= -tol),
        worst_state=state,
        worst_action=int(worst - model.actions.offsets[state]),
    )


def policy_value(model: CtmdpModel, policy: DeterministicPolicy) -> ValueFunction:
    """Exact discounted cost of a deterministic stationary policy: the solution of alpha u = c^phi + Q^phi u."""
    policy.validate(model)
    generator, cost = policy_generator(model, policy.choice)
    system = (model.alpha * sp.identity(model.n_states, format="csc") - generator).tocsc()
    values = spla.spsolve(system, cost) if model.n_states > 1 else cost / system.toarray()[0]
    return ValueFunction(np.atleast_1d(values), "w_prime")


def enumerate_policies(model: CtmdpModel, limit: int = 100_000) -> tuple[ValueFunction, DeterministicPolicy]:
    """
    Brute-force optimum over every deterministic stationary policy.

    Returns:
        tuple[ValueFunction, DeterministicPolicy]: The pointwise minimum of the
        policy values and a policy attaining it at every state.

    Raises:
        ValueError: When the number of policies exceeds ``limit``.
    """
    total = int(np.prod(model.actions.counts.astype(float)))
    if total > limit:
        raise ValueError(f"{total} deterministic policies exceed the enumeration limit {limit}")
    best_values = None
    best_policy = None
    for choice in itertools.product(*(range(int(n)) for n in model.actions.counts)):
        policy = DeterministicPolicy(np.asarray(choice))
        values = policy_value(model, policy).values
        if best_values is None or values.sum() < best_values.sum():
            best_policy = policy
        best_values = values if best_values is None else np.minimum(best_values, values)
    return ValueFunction(best_values, "w_prime"), best_policy


def lower_bound(model: CtmdpModel) -> float:
    """Policy-independent lower bound -M (alpha int gamma w + b) / (alpha (alpha - rho)) - c / alpha on V0."""
    w, M, c, rho, b = _weight_constants(model, "w")
    alpha = model.alpha
    if alpha <= rho:
        raise ConditionError(f"alpha={alpha!r} must exceed rho={rho!r}")
    return -M * (alpha * float(model.gamma @ w) + b) / (alpha * (alpha - rho)) - c / alpha


def feasible_probes(
    model: CtmdpModel,
    u: ValueFunction,
    n: int = 100,
    seed: int = 0,
    scale: float = 1.0,
    tol: float = DEFAULT_TOL,
) -> list[DlpReport]:
    """
    Random DLP-feasible candidates v = u - d - s, with d >= 0 random and s >= 0 the smallest
    shift that keeps every constraint at least as slack as it is for ``u``.
    """
    reports = []
    for probe in range(n):
        rng = episode_stream(seed, probe, "dlp-probe")
        d = rng.uniform(0.0, scale, size=model.n_states)
        shift = max(0.0, float(np.max((model.kernel.apply(d) - model.alpha * d[model.pair_state]) / model.alpha)))
        reports.append(dlp_check(model, ValueFunction(u.values - d - shift, u.norm_tag), tol=tol))
    return reports


# --- Result Tables ---

CONVERGENCE_HEADER = ("iteration", "sup_change", "residual")
VALUE_POLICY_HEADER = ("state", "point", "value", "action_index", "action")


def convergence_rows(report: SolveReport) -> Iterable[tuple]:
    for record in report.history:
        yield record.iteration, record.sup_change, record.residual


def value_policy_rows(model: CtmdpModel, value: ValueFunction, policy: DeterministicPolicy) -> Iterable[tuple]:
    actions = policy.action_values(model)
    for i in range(model.n_states):
        yield i, model.states.points[i], value.values[i], int(policy.choice[i]), actions[i]
