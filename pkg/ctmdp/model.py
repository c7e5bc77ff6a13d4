"""
CTMDP primitives on finite grids and numerical checks of the regularity conditions.

A model is stored pair-wise: every admissible (state, action-index) pair is a
row of a sparse signed kernel whose columns are states, and the cost rate is a
flat array over the same pairs. ``ActionGrid.offsets`` maps state ``i`` to the
pair rows ``offsets[i]:offsets[i+1]``.
"""
from __future__ import annotations

import enum
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, replace
from functools import cached_property
from typing import ClassVar, Literal

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict

from .errors import ConditionError, KernelError
from .tools.streams import episode_stream

# --- Tolerances ---
TAU_CONS = 1e-10
TAU_DRIFT = 1e-8
RHO_MIN = 1e-6

Status = Literal["pass", "fail"]


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


# --- Domain Types ---

@dataclass(frozen=True, eq=False)
class StateGrid:
    """State points and the nesting level of each state (state ``i`` belongs to S_l for l >= levels[i])."""

    points: np.ndarray
    levels: np.ndarray

    def __post_init__(self) -> None:
        points = _frozen(self.points, float)
        levels = np.asarray(self.levels)
        if points.ndim != 1 or points.size == 0:
            raise ValueError("state points must be a non-empty 1-d array")
        if levels.shape != points.shape:
            raise ValueError("one nesting level is required per state")
        if np.unique(points).size != points.size:
            raise ValueError("state points must be distinct")
        if np.any(levels < 0) or np.any(np.mod(levels, 1) != 0):
            raise ValueError("nesting levels must be non-negative integers")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "levels", _frozen(levels, np.int64))

    @property
    def size(self) -> int:
        return int(self.points.size)

    @property
    def max_level(self) -> int:
        return int(self.levels.max())

    def members(self, level: int) -> np.ndarray:
        """Boolean mask of S_level."""
        return self.levels <= level


@dataclass(frozen=True, eq=False)
class ActionGrid:
    """Finite admissible action set A(x) for every state."""

    per_state: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        grids = []
        for i, values in enumerate(self.per_state):
            values = _frozen(np.atleast_1d(values), float)
            if values.size == 0:
                raise ValueError(f"A(x) is empty for state {i}")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"A(x) holds non-finite actions for state {i}")
            grids.append(values)
        object.__setattr__(self, "per_state", tuple(grids))

    def __getitem__(self, state: int) -> np.ndarray:
        return self.per_state[state]

    @cached_property
    def counts(self) -> np.ndarray:
        return _frozen([grid.size for grid in self.per_state], np.int64)

    @cached_property
    def offsets(self) -> np.ndarray:
        return _frozen(np.concatenate([[0], np.cumsum(self.counts)]), np.int64)

    @cached_property
    def pair_state(self) -> np.ndarray:
        return _frozen(np.repeat(np.arange(len(self.per_state)), self.counts), np.int64)

    @cached_property
    def flat(self) -> np.ndarray:
        return _frozen(np.concatenate(self.per_state), float)

    @property
    def n_pairs(self) -> int:
        return int(self.offsets[-1])

    def pair(self, state: int, action_index: int) -> int:
        if not 0 <= action_index < self.counts[state]:
            raise IndexError(f"action index {action_index} out of range for state {state}")
        return int(self.offsets[state] + action_index)


@dataclass(frozen=True, eq=False)
class SignedKernel:
    """
    Transition rates q(y|x,a) as a CSR matrix with one row per (state, action) pair.

    The matrix is never mutated after construction; operations that change
    rates (truncation) build a new kernel.
    """

    rates: sp.csr_matrix
    pair_state: np.ndarray

    def __post_init__(self) -> None:
        rates = sp.csr_matrix(self.rates, dtype=float)
        rates.sum_duplicates()
        rates.sort_indices()
        pair_state = _frozen(self.pair_state, np.int64)
        if rates.shape[0] != pair_state.size:
            raise KernelError("kernel needs one row per (state, action) pair")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "pair_state", pair_state)

    @classmethod
    def from_entries(
        cls,
        entries: Iterable[tuple[int, int, float]],
        pair_state: np.ndarray,
        n_states: int,
    ) -> "SignedKernel":
        """Builds a kernel from sparse ``(pair, target_state, rate)`` triples."""
        rows, cols, data = [], [], []
        for pair, target, rate in entries:
            rows.append(pair)
            cols.append(target)
            data.append(rate)
        matrix = sp.csr_matrix(
            (np.asarray(data, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(len(pair_state), n_states),
        )
        return cls(matrix, pair_state)

    @cached_property
    def _entry_rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.rates.shape[0]), np.diff(self.rates.indptr))

    @cached_property
    def _diagonal_mask(self) -> np.ndarray:
        return self.rates.indices == self.pair_state[self._entry_rows]

    @cached_property
    def diagonal(self) -> np.ndarray:
        """q({x}|x,a) per pair."""
        diagonal = np.zeros(self.rates.shape[0])
        mask = self._diagonal_mask
        np.add.at(diagonal, self._entry_rows[mask], self.rates.data[mask])
        return _frozen(diagonal, float)

    @property
    def exit_rates(self) -> np.ndarray:
        """q_x(a) = -q({x}|x,a) per pair."""
        return -self.diagonal

    @cached_property
    def row_sums(self) -> np.ndarray:
        return _frozen(np.asarray(self.rates.sum(axis=1)).ravel(), float)

    @cached_property
    def min_off_diagonal(self) -> np.ndarray:
        """Most negative off-diagonal entry per pair (0 when none is negative)."""
        lowest = np.zeros(self.rates.shape[0])
        mask = ~self._diagonal_mask
        np.minimum.at(lowest, self._entry_rows[mask], self.rates.data[mask])
        return _frozen(lowest, float)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Returns sum_y q(y|x,a) values(y) for every pair."""
        return self.rates @ np.asarray(values, dtype=float)


@dataclass(frozen=True, eq=False)
class CostRate:
    """c0(x,a) per (state, action) pair."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = _frozen(self.values, float)
        if not np.all(np.isfinite(values)):
            raise ValueError("cost rates must be finite")
        object.__setattr__(self, "values", values)


_CONSTANT_NAMES = ("rho", "b", "rho_prime", "b_prime", "L", "L_prime", "M", "c", "M_prime", "c_prime")


@dataclass(frozen=True, eq=False)
class WeightSystem:
    """Lyapunov weights w, w' and the constants of the drift, rate and cost bounds (None = not supplied)."""

    w: np.ndarray
    w_prime: np.ndarray
    rho: float | None = None
    b: float | None = None
    rho_prime: float | None = None
    b_prime: float | None = None
    L: float | None = None
    L_prime: float | None = None
    M: float | None = None
    c: float | None = None
    M_prime: float | None = None
    c_prime: float | None = None

    def __post_init__(self) -> None:
        w = _frozen(self.w, float)
        w_prime = _frozen(self.w_prime, float)
        if w.shape != w_prime.shape:
            raise ValueError("w and w' must be defined on the same grid")
        if np.any(w < 1.0) or np.any(w_prime < 1.0):
            raise ValueError("weights must satisfy w >= 1 and w' >= 1")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_prime", w_prime)
        for name in _CONSTANT_NAMES:
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"weight constant {name} must be a non-negative finite real")
            object.__setattr__(self, name, float(value))
        if self.rho is not None and self.rho == 0.0:
            # Any positive rho satisfies the drift bound once rho = 0 does.
            logging.info(f"rho = 0 replaced by rho_min = {RHO_MIN}")
            object.__setattr__(self, "rho", RHO_MIN)

    def require(self, *names: str) -> None:
        missing = [name for name in names if getattr(self, name) is None]
        if missing:
            raise ConditionError(f"missing weight constants: {', '.join(missing)}")

    def constants(self) -> dict[str, float | None]:
        return {name: getattr(self, name) for name in _CONSTANT_NAMES}

    def weight(self, which: str) -> np.ndarray:
        if which == "w":
            return self.w
        if which == "w_prime":
            return self.w_prime
        raise ValueError(f"unknown weight {which!r}; expected 'w' or 'w_prime'")


@dataclass(frozen=True, eq=False)
class CtmdpModel:
    """A finite CTMDP instance; immutable after construction and safe to share between readers."""

    states: StateGrid
    actions: ActionGrid
    kernel: SignedKernel
    cost: CostRate
    weights: WeightSystem
    alpha: float
    gamma: np.ndarray

    def __post_init__(self) -> None:
        n = self.states.size
        if len(self.actions.per_state) != n:
            raise ValueError("one action grid is required per state")
        if self.kernel.rates.shape != (self.actions.n_pairs, n):
            raise KernelError(
                f"kernel shape {self.kernel.rates.shape} does not match ({self.actions.n_pairs}, {n})"
            )
        if not np.array_equal(self.kernel.pair_state, self.actions.pair_state):
            raise KernelError("kernel rows are not aligned with the action grid")
        if self.cost.values.size != self.actions.n_pairs:
            raise ValueError("one cost rate is required per (state, action) pair")
        if self.weights.w.size != n:
            raise ValueError("weights must be defined on the state grid")
        if not self.alpha > 0:
            raise ValueError("discount factor alpha must be positive")
        gamma = _frozen(self.gamma, float)
        if gamma.shape != (n,) or np.any(gamma < 0) or abs(gamma.sum() - 1.0) > TAU_CONS:
            raise ValueError("gamma must be a non-negative array over states summing to 1")
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "gamma", gamma)

    @property
    def n_states(self) -> int:
        return self.states.size

    @property
    def n_pairs(self) -> int:
        return self.actions.n_pairs

    @property
    def pair_state(self) -> np.ndarray:
        return self.actions.pair_state

    @cached_property
    def qbar(self) -> np.ndarray:
        """sup_a q_x(a) per state."""
        return _frozen(np.maximum.reduceat(self.kernel.exit_rates, self.actions.offsets[:-1]), float)

    @cached_property
    def min_cost(self) -> np.ndarray:
        """min_a c0(x,a) per state."""
        return min_over_actions(self, self.cost.values)[0]

    def with_changes(self, **changes) -> "CtmdpModel":
        return replace(self, **changes)


# --- Construction Helpers ---

def min_over_actions(model: CtmdpModel, pair_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-state minimum of a pair-indexed array.

    Returns:
        tuple[np.ndarray, np.ndarray]: The minima and, per state, the smallest
        action index attaining the minimum.
    """
    pair_values = np.asarray(pair_values, dtype=float)
    starts = model.actions.offsets[:-1]
    minimum = np.minimum.reduceat(pair_values, starts)
    hit = pair_values <= minimum[model.pair_state]
    candidates = np.where(hit, np.arange(model.n_pairs), model.n_pairs)
    first = np.minimum.reduceat(candidates, starts)
    return minimum, first - starts


def build_model(
    points: Sequence[float],
    actions: Sequence[Sequence[float]],
    entries: Iterable[tuple[int, int, int, float]],
    cost: Sequence[Sequence[float]],
    alpha: float,
    gamma: Sequence[float],
    w: Sequence[float] | None = None,
    w_prime: Sequence[float] | None = None,
    levels: Sequence[int] | None = None,
    **constants: float | None,
) -> CtmdpModel:
    """
    Builds a model from plain Python data.

    Args:
        points: State values.
        actions: A(x) per state.
        entries: Sparse kernel entries ``(state, action_index, target, rate)``;
            diagonal entries are listed explicitly.
        cost: c0 per state and action index.
        alpha: Discount factor.
        gamma: Initial distribution over states.
        w, w_prime: Weights (default all ones).
        levels: Nesting levels (default: every state at level 0).
        **constants: Weight constants (rho, b, L, M, ...).

    Returns:
        CtmdpModel: The validated model.
    """
    n = len(points)
    grid = ActionGrid(tuple(np.asarray(a, dtype=float) for a in actions))
    kernel = SignedKernel.from_entries(
        ((grid.pair(i, k), j, rate) for i, k, j, rate in entries), grid.pair_state, n
    )
    flat_cost = np.concatenate([np.atleast_1d(np.asarray(row, dtype=float)) for row in cost])
    weights = WeightSystem(
        w=np.ones(n) if w is None else np.asarray(w, dtype=float),
        w_prime=np.ones(n) if w_prime is None else np.asarray(w_prime, dtype=float),
        **constants,
    )
    return CtmdpModel(
        states=StateGrid(np.asarray(points, dtype=float), np.zeros(n, dtype=np.int64) if levels is None else levels),
        actions=grid,
        kernel=kernel,
        cost=CostRate(flat_cost),
        weights=weights,
        alpha=alpha,
        gamma=np.asarray(gamma, dtype=float),
    )


def zero_kernel_model(
    n_states: int = 1,
    cost: float = 1.0,
    alpha: float = 1.0,
    n_actions: int = 1,
    **constants: float | None,
) -> CtmdpModel:
    """A model without transitions; every state is absorbing and every action costs ``cost``."""
    return build_model(
        points=np.arange(n_states, dtype=float),
        actions=[np.arange(n_actions, dtype=float)] * n_states,
        entries=[],
        cost=[[cost] * n_actions] * n_states,
        alpha=alpha,
        gamma=np.full(n_states, 1.0 / n_states),
        **constants,
    )


def random_finite_model(seed: int, n_states: int, max_actions: int, sparsity: float = 0.3) -> CtmdpModel:
    """
    A random conservative model with fitted constants for which the drift and cost conditions hold.

    Weights are random and nesting levels follow the weight order, so
    condition C1a holds along the supplied levels. The discount factor is
    placed above the larger fitted drift constant.
    """
    rng = episode_stream(seed, 0, "random-model")
    actions, entries, cost = [], [], []
    for i in range(n_states):
        n_a = int(rng.integers(1, max_actions + 1))
        actions.append(np.sort(rng.uniform(0.0, 2.0, size=n_a)))
        cost.append(rng.uniform(-1.0, 2.0, size=n_a))
        for k in range(n_a):
            off = rng.exponential(1.0, size=n_states) * (rng.uniform(size=n_states) > sparsity)
            off[i] = 0.0
            for j in np.flatnonzero(off):
                entries.append((i, k, int(j), float(off[j])))
            if off.sum() > 0:
                entries.append((i, k, i, -float(off.sum())))
    w = 1.0 + rng.uniform(0.0, 3.0, size=n_states)
    w_prime = 1.0 + 0.5 * (w - 1.0)
    levels = np.argsort(np.argsort(w))
    draft = build_model(
        points=np.arange(n_states, dtype=float),
        actions=actions,
        entries=entries,
        cost=cost,
        alpha=1.0,
        gamma=rng.dirichlet(np.ones(n_states)),
        w=w,
        w_prime=w_prime,
        levels=levels,
        b=0.0,
        b_prime=0.0,
    )
    fitted = with_fitted_constants(draft)
    alpha = max(fitted.weights.rho, fitted.weights.rho_prime) + float(rng.uniform(0.5, 2.0))
    return fitted.with_changes(alpha=alpha)


def policy_generator(model: CtmdpModel, choice: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """
    Generator matrix Q^phi and cost vector c^phi of a deterministic stationary policy.

    Args:
        model (CtmdpModel): The model.
        choice (np.ndarray): Action index per state.

    Returns:
        tuple[sp.csr_matrix, np.ndarray]: The n x n generator and the cost rates.
    """
    choice = np.asarray(choice, dtype=np.int64)
    if choice.shape != (model.n_states,) or np.any(choice < 0) or np.any(choice >= model.actions.counts):
        raise IndexError("policy choice must hold a valid action index for every state")
    pairs = model.actions.offsets[:-1] + choice
    return model.kernel.rates[pairs], model.cost.values[pairs]


# --- Operations ---

class ValidationReport(BaseModel):
    """Per-pair conservativeness residuals and stability bounds of a kernel."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    status: Status
    tolerance: float
    state: np.ndarray
    action: np.ndarray
    residual: np.ndarray
    qbar: np.ndarray
    min_off_diagonal: np.ndarray
    failures: int

    def rows(self) -> Iterable[tuple]:
        for i, k, r, q, m in zip(self.state, self.action, self.residual, self.qbar, self.min_off_diagonal):
            ok = r <= self.tolerance and m >= 0.0
            yield int(i), int(k), float(r), float(q), float(m), "pass" if ok else "fail"

    header: ClassVar[tuple[str, ...]] = ("state", "action", "residual", "qbar", "min_off_diagonal", "status")


def validate_kernel(model: CtmdpModel) -> ValidationReport:
    """
    Checks that every kernel row is conservative and has non-negative off-diagonal entries.

    Args:
        model (CtmdpModel): The model to validate.

    Returns:
        ValidationReport: Residual |row sum| and q-bar per pair; ``status`` is
        "pass" iff all residuals are within TAU_CONS and no off-diagonal entry
        is negative. Failures are reported, never raised.
    """
    residual = np.abs(model.kernel.row_sums)
    lowest = model.kernel.min_off_diagonal
    bad = (residual > TAU_CONS) | (lowest < 0.0)
    failures = int(bad.sum())
    if failures:
        logging.warning(f"Kernel validation failed on {failures} (state, action) rows")
    return ValidationReport(
        status="fail" if failures else "pass",
        tolerance=TAU_CONS,
        state=model.pair_state,
        action=np.arange(model.n_pairs) - model.actions.offsets[model.pair_state],
        residual=residual,
        qbar=model.qbar[model.pair_state],
        min_off_diagonal=lowest,
        failures=failures,
    )


class ConditionId(str, enum.Enum):
    C1A = "C1a"
    C1B = "C1b"
    C1C = "C1c"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5A = "C5a"
    C5B = "C5b"
    C5CD = "C5cd"
    C6 = "C6"


class ConditionReport(BaseModel):
    condition: str
    status: Status
    slack: float
    structural: bool = False
    worst_state: int | None = None
    worst_action: int | None = None
    detail: str = ""

    header: ClassVar[tuple[str, ...]] = ("condition", "status", "slack", "worst_state", "worst_action", "detail")

    def row(self) -> tuple:
        return self.condition, self.status, self.slack, self.worst_state, self.worst_action, self.detail


def _locate(model: CtmdpModel, pair: int) -> tuple[int, int]:
    state = int(model.pair_state[pair])
    return state, int(pair - model.actions.offsets[state])


def _drift_report(model: CtmdpModel, cid: ConditionId, weight: np.ndarray, rho: float, b: float) -> ConditionReport:
    ws = weight[model.pair_state]
    slack = rho * ws + b - model.kernel.apply(weight)
    relative = slack / ws
    worst = int(np.argmin(relative))
    state, action = _locate(model, worst)
    ok = relative[worst] >= -TAU_DRIFT
    return ConditionReport(
        condition=cid.value,
        status="pass" if ok else "fail",
        slack=float(slack.min()),
        worst_state=state,
        worst_action=action,
        detail=f"rho={rho!r} b={b!r} min relative slack={float(relative[worst])!r}",
    )


def _cost_slack(model: CtmdpModel, weight: np.ndarray, M: float, c: float) -> tuple[float, float, int]:
    slack = M * weight + c - np.abs(model.min_cost)
    relative = slack / weight
    worst = int(np.argmin(relative))
    return float(slack.min()), float(relative[worst]), worst


def _check_c1a(model: CtmdpModel) -> ConditionReport:
    levels = model.states.levels
    w = model.weights.w
    infima = []
    for level in np.unique(levels):
        outside = levels > level
        infima.append(float(w[outside].min()) if outside.any() else np.inf)
    steps = [b - a for a, b in zip(infima, infima[1:]) if np.isfinite(b)]
    slack = float(min(steps)) if steps else np.inf
    shown = ", ".join(f"{v:.6g}" for v in infima[:8])
    return ConditionReport(
        condition=ConditionId.C1A.value,
        status="pass" if slack >= 0 else "fail",
        slack=slack,
        detail=f"inf of w outside S_l along the supplied levels: {shown}{' ...' if len(infima) > 8 else ''}",
    )


def _check_c1b(model: CtmdpModel) -> ConditionReport:
    model.weights.require("rho", "b")
    return _drift_report(model, ConditionId.C1B, model.weights.w, model.weights.rho, model.weights.b)


def _check_c1c(model: CtmdpModel) -> ConditionReport:
    sups = [float(model.qbar[model.states.members(level)].max()) for level in np.unique(model.states.levels)]
    finite = all(np.isfinite(sups))
    return ConditionReport(
        condition=ConditionId.C1C.value,
        status="pass" if finite else "fail",
        slack=np.inf if finite else -np.inf,
        detail=f"sup of qbar on S_l: {', '.join(f'{v:.6g}' for v in sups[:8])}",
    )


def _check_c2(model: CtmdpModel) -> ConditionReport:
    weights = model.weights
    weights.require("rho", "M", "c")
    raw, relative, worst = _cost_slack(model, weights.w, weights.M, weights.c)
    gap = model.alpha - weights.rho
    initial_moment = float(model.gamma @ weights.w)
    ok = relative >= -TAU_DRIFT and gap > 0 and np.isfinite(initial_moment)
    return ConditionReport(
        condition=ConditionId.C2.value,
        status="pass" if ok else "fail",
        slack=min(raw, gap),
        worst_state=worst,
        detail=f"cost slack={raw!r} alpha-rho={gap!r} integral of w under gamma={initial_moment!r}",
    )


def _structural(cid: ConditionId, what: str) -> ConditionReport:
    return ConditionReport(
        condition=cid.value,
        status="pass",
        slack=np.inf,
        structural=True,
        detail=f"holds by discretization: {what}",
    )


def _check_c3(model: CtmdpModel) -> ConditionReport:
    return _structural(ConditionId.C3, "finite action sets are compact and q_x(a) is continuous on them")


def _check_c4(model: CtmdpModel) -> ConditionReport:
    weights = model.weights
    weights.require("L")
    slack = weights.L * weights.w - model.qbar
    relative = slack / weights.w
    worst = int(np.argmin(relative))
    ok = weights.L > 0 and relative[worst] >= -TAU_DRIFT
    return ConditionReport(
        condition=ConditionId.C4.value,
        status="pass" if ok else "fail",
        slack=float(slack.min()),
        worst_state=worst,
        detail=f"L={weights.L!r}",
    )


def _check_c5a(model: CtmdpModel) -> ConditionReport:
    weights = model.weights
    weights.require("L_prime")
    slack = weights.L_prime * weights.w - (model.qbar + 1.0) * weights.w_prime
    relative = slack / weights.w
    worst = int(np.argmin(relative))
    return ConditionReport(
        condition=ConditionId.C5A.value,
        status="pass" if relative[worst] >= -TAU_DRIFT else "fail",
        slack=float(slack.min()),
        worst_state=worst,
        detail=f"L'={weights.L_prime!r}",
    )


def _check_c5b(model: CtmdpModel) -> ConditionReport:
    weights = model.weights
    weights.require("rho_prime", "b_prime")
    return _drift_report(model, ConditionId.C5B, weights.w_prime, weights.rho_prime, weights.b_prime)


def _check_c5cd(model: CtmdpModel) -> ConditionReport:
    weights = model.weights
    weights.require("rho_prime", "M_prime", "c_prime")
    raw, relative, worst = _cost_slack(model, weights.w_prime, weights.M_prime, weights.c_prime)
    gap = model.alpha - weights.rho_prime
    ok = relative >= -TAU_DRIFT and gap > 0
    return ConditionReport(
        condition=ConditionId.C5CD.value,
        status="pass" if ok else "fail",
        slack=min(raw, gap),
        worst_state=worst,
        detail=f"cost slack={raw!r} alpha-rho'={gap!r}",
    )


def _check_c6(model: CtmdpModel) -> ConditionReport:
    return _structural(
        ConditionId.C6, "on finite action sets c0 and the integrals of q are continuous and A(x) is compact"
    )


_CHECKERS = {
    ConditionId.C1A: _check_c1a,
    ConditionId.C1B: _check_c1b,
    ConditionId.C1C: _check_c1c,
    ConditionId.C2: _check_c2,
    ConditionId.C3: _check_c3,
    ConditionId.C4: _check_c4,
    ConditionId.C5A: _check_c5a,
    ConditionId.C5B: _check_c5b,
    ConditionId.C5CD: _check_c5cd,
    ConditionId.C6: _check_c6,
}


def check_condition(model: CtmdpModel, condition: ConditionId | str) -> ConditionReport:
    """
    Evaluates one regularity condition on the grid.

    Args:
        model (CtmdpModel): The model.
        condition (ConditionId | str): One of C1a, C1b, C1c, C2, C3, C4, C5a,
            C5b, C5cd, C6. C3 and C6 are certified structurally.

    Returns:
        ConditionReport: Worst-case slack and pass/fail status.

    Raises:
        ConditionError: Unknown condition id or missing constants.
    """
    try:
        cid = ConditionId(condition)
    except ValueError:
        raise ConditionError(f"unknown condition id {condition!r}") from None
    report = _CHECKERS[cid](model)
    if report.status == "fail":
        logging.warning(f"Condition {cid.value} failed: slack={report.slack!r} {report.detail}")
    return report


def fit_drift_rho(model: CtmdpModel, weight: np.ndarray, b: float = 0.0, rho_min: float = RHO_MIN) -> float:
    """
    Smallest rho for which the drift bound sum_y q(y|x,a) weight(y) <= rho weight(x) + b holds on the grid.

    Args:
        model (CtmdpModel): The model.
        weight (np.ndarray): A weight with weight >= 1.
        b (float): Additive drift constant, b >= 0.
        rho_min (float): Positive floor for the result.

    Returns:
        float: max over pairs of (Q weight - b) / weight(x), floored at rho_min.
    """
    weight = np.asarray(weight, dtype=float)
    if np.any(weight < 1.0) or b < 0:
        raise ValueError("fit_drift_rho needs weight >= 1 and b >= 0")
    ratios = (model.kernel.apply(weight) - b) / weight[model.pair_state]
    return max(float(ratios.max()), rho_min)


def fit_cost_bound(model: CtmdpModel, weight: np.ndarray, c: float = 0.0) -> float:
    """Smallest M >= 0 with |min_a c0(x,a)| <= M weight(x) + c on the grid."""
    weight = np.asarray(weight, dtype=float)
    return max(float(((np.abs(model.min_cost) - c) / weight).max()), 0.0)


def with_fitted_constants(model: CtmdpModel, overwrite: bool = False) -> CtmdpModel:
    """
    Fills in the weight constants the model does not carry yet.

    b and b' default to 0, c and c' to 0. rho and rho' come from
    ``fit_drift_rho``, M and M' from ``fit_cost_bound``; L is bumped above
    max q-bar/w so the rate bound is strict, and L' = max (q-bar+1) w'/w.
    """
    weights = model.weights

    def pick(name: str, value_fn):
        current = getattr(weights, name)
        return value_fn() if overwrite or current is None else current

    b = pick("b", lambda: 0.0)
    b_prime = pick("b_prime", lambda: 0.0)
    c = pick("c", lambda: 0.0)
    c_prime = pick("c_prime", lambda: 0.0)
    fitted = replace(
        weights,
        b=b,
        b_prime=b_prime,
        c=c,
        c_prime=c_prime,
        rho=pick("rho", lambda: fit_drift_rho(model, weights.w, b)),
        rho_prime=pick("rho_prime", lambda: fit_drift_rho(model, weights.w_prime, b_prime)),
        M=pick("M", lambda: fit_cost_bound(model, weights.w, c)),
        M_prime=pick("M_prime", lambda: fit_cost_bound(model, weights.w_prime, c_prime)),
        L=pick("L", lambda: float((model.qbar / weights.w).max()) * (1.0 + TAU_DRIFT) + RHO_MIN),
        L_prime=pick("L_prime", lambda: float(((model.qbar + 1.0) * weights.w_prime / weights.w).max())),
    )
    return model.with_changes(weights=fitted)


def truncate_model(model: CtmdpModel, level: int) -> CtmdpModel:
    """
    Zeroes the kernel rows of every state outside S_level, making those states absorbing.

    Args:
        model (CtmdpModel): The model.
        level (int): Nesting level, level >= 0.

    Returns:
        CtmdpModel: A copy with the modified rates; all other fields are shared.
    """
    if level < 0:
        raise ValueError("truncation level must be non-negative")
    keep = model.states.members(level)[model.pair_state].astype(float)
    rates = (sp.diags(keep) @ model.kernel.rates).tocsr()
    rates.eliminate_zeros()
    return model.with_changes(kernel=SignedKernel(rates, model.pair_state))
