"""
Sampling the controlled jump process and the regularity diagnostics built on it.

An episode starts at x_0 ~ gamma and alternates sojourns and jumps. The
sojourn at x_m has survival exp(-int_0^u Lambda(S|h_m, v) dv), where Lambda
mixes the off-diagonal rates of A(x_m) with the policy's action distribution.
Sojourns are sampled exactly when the mixture is constant over the sojourn
(or piecewise constant on declared breakpoints) and by thinning against a
rate majorant otherwise. The process is right-continuous: xi_t is the state
of the segment containing t.
"""
from __future__ import annotations

import enum
import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict
from scipy import integrate, optimize, stats
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .errors import ConditionError, KernelError, PolicyError
from .model import TAU_CONS, CtmdpModel, policy_generator, truncate_model
from .solver import DeterministicPolicy
from .tools.streams import ACTIONS, DYNAMICS, START, episode_stream, split

EXPLOSION_GUARD = 10**6
DEFAULT_EPISODES = 10_000
PILOT_EPISODES = 200
QUAD_EPSABS = 1e-10
DENSE_EXPM_LIMIT = 400
PROBE_LIMIT = 0.01
Z95 = float(stats.norm.ppf(0.975))


# --- Policies ---

class PolicyKind(str, enum.Enum):
    DETERMINISTIC = "deterministic-stationary"
    RANDOMIZED_STATIONARY = "randomized-stationary"
    RANDOMIZED_MARKOV = "randomized-Markov"
    HISTORY_DEPENDENT = "history-dependent"


@dataclass(frozen=True, eq=False)
class History:
    """
    Jump history h_m = (x_0, theta_1, x_1, ..., theta_m, x_m) and its jump time T_m.

    Only history-dependent policies receive the full record; the other kinds
    are handed the current state and T_m.
    """

    states: tuple[int, ...]
    sojourns: tuple[float, ...] = ()
    jump_time: float = 0.0

    @property
    def current(self) -> int:
        return self.states[-1]

    @property
    def m(self) -> int:
        return len(self.sojourns)


Evaluator = Callable[[History, float], np.ndarray]


@dataclass(frozen=True, eq=False)
class PolicySpec:
    """
    A policy as an evaluator (history, elapsed sojourn) -> probabilities over A(x_m).

    ``breakpoints`` maps a history to the elapsed-sojourn times where the
    evaluator may change (exact piecewise sampling); without it, sojourns of
    non-stationary kinds are sampled by thinning against ``rate_majorant``.
    """

    kind: PolicyKind
    evaluator: Evaluator
    rate_majorant: np.ndarray | None = None
    breakpoints: Callable[[History], Sequence[float]] | None = None
    choice: np.ndarray | None = None

    @property
    def constant_on_sojourn(self) -> bool:
        return self.kind in (PolicyKind.DETERMINISTIC, PolicyKind.RANDOMIZED_STATIONARY)

    @classmethod
    def deterministic(cls, model: CtmdpModel, policy: DeterministicPolicy) -> "PolicySpec":
        policy.validate(model)
        one_hot = []
        for i, k in enumerate(policy.choice):
            probs = np.zeros(model.actions.counts[i])
            probs[k] = 1.0
            probs.setflags(write=False)
            one_hot.append(probs)
        return cls(PolicyKind.DETERMINISTIC, lambda h, u: one_hot[h.current], choice=policy.choice)

    @classmethod
    def randomized_stationary(cls, probabilities: Sequence[np.ndarray]) -> "PolicySpec":
        table = [np.asarray(p, dtype=float) for p in probabilities]
        return cls(PolicyKind.RANDOMIZED_STATIONARY, lambda h, u: table[h.current])

    @classmethod
    def randomized_markov(
        cls,
        fn: Callable[[float, int], np.ndarray],
        rate_majorant: np.ndarray | None = None,
        breakpoints: Sequence[float] | None = None,
    ) -> "PolicySpec":
        """
        A policy depending on absolute time and the current state.

        Args:
            fn: (t, state) -> probabilities over A(state).
            rate_majorant: Per-state upper bound on the mixed jump rate (thinning).
            breakpoints: Absolute times where ``fn`` may change; between them it
                must be constant in t.
        """
        absolute = None if breakpoints is None else np.sort(np.asarray(breakpoints, dtype=float))

        def elapsed(h: History) -> Sequence[float]:
            return absolute[absolute > h.jump_time] - h.jump_time

        return cls(
            PolicyKind.RANDOMIZED_MARKOV,
            lambda h, u: fn(h.jump_time + u, h.current),
            rate_majorant=None if rate_majorant is None else np.asarray(rate_majorant, dtype=float),
            breakpoints=None if absolute is None else elapsed,
        )

    @classmethod
    def history_dependent(
        cls,
        fn: Evaluator,
        rate_majorant: np.ndarray | None = None,
        breakpoints: Callable[[History], Sequence[float]] | None = None,
    ) -> "PolicySpec":
        return cls(
            PolicyKind.HISTORY_DEPENDENT,
            fn,
            rate_majorant=None if rate_majorant is None else np.asarray(rate_majorant, dtype=float),
            breakpoints=breakpoints,
        )

    def probabilities(self, model: CtmdpModel, history: History, elapsed: float) -> np.ndarray:
        state = history.current
        probs = np.asarray(self.evaluator(history, elapsed), dtype=float)
        if probs.shape != (model.actions.counts[state],):
            raise PolicyError(f"policy returned {probs.shape} probabilities for {model.actions.counts[state]} actions")
        if np.any(probs < -TAU_CONS) or abs(probs.sum() - 1.0) > TAU_CONS:
            raise PolicyError(f"policy output at state {state} is not a probability vector")
        return probs

    def stationary(self) -> DeterministicPolicy:
        if self.kind is not PolicyKind.DETERMINISTIC:
            raise PolicyError(f"exact transition probabilities need a deterministic stationary policy, got {self.kind.value}")
        return DeterministicPolicy(self.choice)


def _as_stationary(policy: DeterministicPolicy | PolicySpec) -> DeterministicPolicy:
    if isinstance(policy, DeterministicPolicy):
        return policy
    return policy.stationary()


class _JumpTables:
    """Mixed off-diagonal rates per (state, action distribution), cached for stationary mixtures."""

    def __init__(self, model: CtmdpModel):
        self.model = model
        rates = model.kernel.rates.copy()
        rows = np.repeat(np.arange(rates.shape[0]), np.diff(rates.indptr))
        rates.data[rates.indices == model.pair_state[rows]] = 0.0
        rates.eliminate_zeros()
        self._off_diagonal = rates
        self._blocks: dict[int, sp.csr_matrix] = {}
        self._cache: dict[tuple[int, bytes], tuple[np.ndarray, np.ndarray, float, float]] = {}

    def _block(self, state: int) -> sp.csr_matrix:
        block = self._blocks.get(state)
        if block is None:
            offsets = self.model.actions.offsets
            block = self._off_diagonal[offsets[state]:offsets[state + 1]].T.tocsr()
            self._blocks[state] = block
        return block

    def mixed(self, state: int, probs: np.ndarray, cache: bool = True) -> tuple[np.ndarray, np.ndarray, float, float]:
        """Returns (targets, cumulative jump probabilities, total rate, mixed cost rate)."""
        key = (state, probs.tobytes())
        if cache and key in self._cache:
            return self._cache[key]
        row = self._block(state) @ probs
        if np.any(row < 0.0):
            raise KernelError(f"negative mixed jump rate out of state {state}")
        targets = np.flatnonzero(row > 0.0)
        total = float(row[targets].sum())
        cumulative = np.cumsum(row[targets]) / total if total > 0 else np.empty(0)
        offsets = self.model.actions.offsets
        cost = float(probs @ self.model.cost.values[offsets[state]:offsets[state + 1]])
        entry = (targets, cumulative, total, cost)
        if cache:
            self._cache[key] = entry
        return entry


def _pick(targets: np.ndarray, cumulative: np.ndarray, rng: np.random.Generator) -> int:
    index = int(np.searchsorted(cumulative, rng.random(), side="right"))
    return int(targets[min(index, targets.size - 1)])


def _discount_integral(alpha: float, start: float, end: float) -> float:
    """int_start^end e^{-alpha t} dt."""
    return -math.exp(-alpha * start) * math.expm1(-alpha * (end - start)) / alpha


# --- Domain Types ---

@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    One episode: jump times T_0 = 0 < T_1 < ... and the states x_m entered at them.

    ``actions`` logs the action index chosen at each decision epoch (sampled
    from the mixture on a separate stream for randomized policies).
    """

    times: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    horizon: float
    exploded: bool
    absorbed: bool
    discounted_cost: float

    @property
    def n_jumps(self) -> int:
        return int(self.times.size - 1)

    @property
    def sojourns(self) -> np.ndarray:
        return np.diff(self.times)

    def state_at(self, t: float) -> int:
        """xi_t (right-continuous)."""
        if not 0.0 <= t <= self.horizon:
            raise ValueError(f"t={t!r} outside the simulated window [0, {self.horizon!r}]")
        return int(self.states[np.searchsorted(self.times, t, side="right") - 1])


class McEstimate(BaseModel):
    mean: float
    half_width: float
    n_episodes: int
    tail_bound: float
    horizon: float
    exploded_episodes: int = 0

    header: ClassVar[tuple[str, ...]] = ("mean", "half_width", "n", "tail_bound", "horizon")

    def row(self) -> tuple:
        return self.mean, self.half_width, self.n_episodes, self.tail_bound, self.horizon


class MomentReport(BaseModel):
    t: float
    mean: float
    stderr: float
    bound: float
    exploded_episodes: int = 0
    status: str


class ProbeReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: float
    levels: list[int]
    frequencies: list[float]
    half_widths: list[float]
    decreasing: bool
    limit: float
    exploded_episodes: int = 0
    status: str


# --- Sampling ---

def _next_jump(
    tables: _JumpTables,
    policy: PolicySpec,
    history: History,
    remaining: float,
    rng: np.random.Generator,
) -> tuple[float, int, float]:
    """
    Samples the sojourn at the current state.

    Returns:
        tuple[float, int, float]: (theta, next state, discounted-cost weight of
        the realized part of the sojourn relative to T_m). theta is inf when
        no jump can occur; the next state is -1 when theta exceeds ``remaining``.
    """
    model = tables.model
    alpha = model.alpha
    state = history.current

    if policy.constant_on_sojourn:
        targets, cumulative, total, cost = tables.mixed(state, policy.probabilities(model, history, 0.0))
        theta = rng.exponential(1.0 / total) if total > 0 else math.inf
        end = min(theta, remaining)
        weight = cost * _discount_integral(alpha, 0.0, end)
        if theta > remaining:
            return theta, -1, weight
        return theta, _pick(targets, cumulative, rng), weight

    if policy.breakpoints is not None:
        cuts = sorted(float(b) for b in policy.breakpoints(history) if 0.0 < b < remaining)
        edges = [0.0, *cuts, math.inf]
        weight = 0.0
        for start, end in zip(edges, edges[1:]):
            targets, cumulative, total, cost = tables.mixed(state, policy.probabilities(model, history, start))
            theta = start + rng.exponential(1.0 / total) if total > 0 else math.inf
            stop = min(theta, end, remaining)
            weight += cost * _discount_integral(alpha, start, stop)
            if theta < end:
                if theta > remaining:
                    return theta, -1, weight
                return theta, _pick(targets, cumulative, rng), weight
            if end >= remaining:
                return end, -1, weight
        return math.inf, -1, weight

    if policy.rate_majorant is None:
        raise PolicyError(f"{policy.kind.value} policy needs breakpoints or a rate majorant")
    bound = float(policy.rate_majorant[state])
    if not np.isfinite(bound) or bound < 0:
        raise PolicyError(f"invalid rate majorant {bound!r} at state {state}")
    theta = 0.0
    while True:
        theta = theta + rng.exponential(1.0 / bound) if bound > 0 else math.inf
        if theta > remaining:
            break
        targets, cumulative, total, _ = tables.mixed(state, policy.probabilities(model, history, theta), cache=False)
        if total > bound * (1.0 + 1e-12):
            raise PolicyError(f"mixed rate {total!r} exceeds the majorant {bound!r} at state {state}")
        if rng.random() * bound < total:
            break
    end = min(theta, remaining)
    weight, _ = integrate.quad(
        lambda u: math.exp(-alpha * u) * tables.mixed(state, policy.probabilities(model, history, u), cache=False)[3],
        0.0,
        end,
        epsabs=QUAD_EPSABS,
        limit=200,
    ) if end > 0 else (0.0, 0.0)
    if theta > remaining:
        return theta, -1, weight
    return theta, _pick(targets, cumulative, rng), weight


def _log_action(
    policy: PolicySpec, model: CtmdpModel, history: History, rng: np.random.Generator
) -> int:
    if policy.kind is PolicyKind.DETERMINISTIC:
        return int(policy.choice[history.current])
    probs = policy.probabilities(model, history, 0.0)
    return int(rng.choice(probs.size, p=probs / probs.sum()))


def simulate_episode(
    model: CtmdpModel,
    policy: PolicySpec,
    horizon: float,
    seed: int,
    episode: int = 0,
    start: int | None = None,
    max_jumps: int = EXPLOSION_GUARD,
    tables: _JumpTables | None = None,
) -> Trajectory:
    """
    Simulates one episode up to ``horizon``.

    Args:
        model (CtmdpModel): The model.
        policy (PolicySpec): The policy.
        horizon (float): Simulated-until time, horizon > 0.
        seed (int): Master seed.
        episode (int): Episode index; (seed, episode) fixes every draw.
        start (int | None): Initial state; drawn from gamma when None.
        max_jumps (int): Explosion guard; the trajectory is flagged when hit.

    Returns:
        Trajectory: The jump record and the discounted cost accumulated on [0, horizon].

    Raises:
        PolicyError: Invalid policy output, or thinning without a valid majorant.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    tables = tables or _JumpTables(model)
    if start is None:
        start = int(episode_stream(seed, episode, START).choice(model.n_states, p=model.gamma))
    dynamics = episode_stream(seed, episode, DYNAMICS)
    action_rng = episode_stream(seed, episode, ACTIONS)
    full_history = policy.kind is PolicyKind.HISTORY_DEPENDENT

    times, states, sojourns, actions = [0.0], [start], [], []
    clock = 0.0
    cost = 0.0
    exploded = absorbed = False
    while True:
        if full_history:
            history = History(tuple(states), tuple(sojourns), clock)
        else:
            history = History((states[-1],), (), clock)
        actions.append(_log_action(policy, model, history, action_rng))
        theta, target, weight = _next_jump(tables, policy, history, horizon - clock, dynamics)
        cost += math.exp(-model.alpha * clock) * weight
        if math.isinf(theta):
            absorbed = True
            break
        if target < 0:
            break
        clock += theta
        times.append(clock)
        states.append(target)
        sojourns.append(theta)
        if len(sojourns) >= max_jumps:
            exploded = True
            logging.warning(f"Episode {episode} hit the explosion guard of {max_jumps} jumps at t={clock!r}")
            break

    return Trajectory(
        times=np.asarray(times),
        states=np.asarray(states, dtype=np.int64),
        actions=np.asarray(actions, dtype=np.int64),
        horizon=float(horizon),
        exploded=exploded,
        absorbed=absorbed,
        discounted_cost=cost,
    )


# --- Estimation ---

def tail_bound(model: CtmdpModel, horizon: float, w0: float | None = None) -> float:
    """
    Bound on the discounted cost after ``horizon``.

    Integrates e^{-alpha t} (M E w(xi_t) + c) from ``horizon`` to infinity with
    E w(xi_t) <= e^{rho t} w0 + (b/rho)(e^{rho t} - 1) in closed form.

    Raises:
        ConditionError: alpha <= rho or missing constants.
    """
    weights = model.weights
    weights.require("rho", "b", "M", "c")
    alpha, rho, b, M, c = model.alpha, weights.rho, weights.b, weights.M, weights.c
    if alpha <= rho:
        raise ConditionError(f"tail bound undefined: alpha={alpha!r} <= rho={rho!r}")
    if w0 is None:
        w0 = float(model.gamma @ weights.w)
    gap = alpha - rho
    grow = math.exp(-gap * horizon) / gap
    decay = math.exp(-alpha * horizon) / alpha
    return M * w0 * grow + M * (b / rho) * (grow - decay) + c * decay


def choose_horizon(model: CtmdpModel, target: float, w0: float | None = None) -> float:
    """Smallest horizon whose tail bound is at most ``target``."""
    if not target > 0:
        raise ValueError("target must be positive")
    if tail_bound(model, 0.0, w0) <= target:
        return 0.0
    high = 1.0
    while tail_bound(model, high, w0) > target:
        high *= 2.0
    return float(optimize.brentq(lambda h: tail_bound(model, h, w0) - target, 0.0, high, xtol=1e-10))


def auto_horizon(model: CtmdpModel, policy: PolicySpec, n: int, seed: int) -> float:
    """
    Horizon whose tail bound is below 10% of the expected CI half-width of an n-episode run.

    The half-width is predicted from a pilot run on a derived seed.
    """
    pilot_horizon = max(choose_horizon(model, 1e-3), 1.0)
    pilot = estimate_discounted_cost(model, policy, pilot_horizon, min(n, PILOT_EPISODES), split(seed, "pilot"))
    predicted = pilot.half_width * math.sqrt(pilot.n_episodes / n)
    if predicted <= 0:
        return pilot_horizon
    return max(choose_horizon(model, 0.1 * predicted), np.finfo(float).eps)


def _normal_ci(samples: np.ndarray) -> tuple[float, float, float]:
    mean = float(samples.mean())
    stderr = float(samples.std(ddof=1) / math.sqrt(samples.size))
    return mean, stderr, Z95 * stderr


def estimate_discounted_cost(
    model: CtmdpModel,
    policy: PolicySpec,
    horizon: float,
    n: int = DEFAULT_EPISODES,
    seed: int = 0,
) -> McEstimate:
    """
    Monte Carlo estimate of the discounted cost truncated at ``horizon``.

    Args:
        model (CtmdpModel): The model.
        policy (PolicySpec): The policy.
        horizon (float): Truncation time.
        n (int): Episodes, n >= 2.
        seed (int): Master seed; episode i draws from (seed, i).

    Returns:
        McEstimate: Mean, 95% normal half-width and the analytic tail bound.
    """
    if n < 2:
        raise ValueError("at least two episodes are needed for a confidence interval")
    bound = tail_bound(model, horizon)
    tables = _JumpTables(model)
    costs = np.empty(n)
    exploded = 0
    for episode in range(n):
        trajectory = simulate_episode(model, policy, horizon, seed, episode, tables=tables)
        costs[episode] = trajectory.discounted_cost
        exploded += trajectory.exploded
    mean, _, half_width = _normal_ci(costs)
    logging.info(f"Estimated discounted cost {mean:.6g} +- {half_width:.3g} over {n} episodes (horizon {horizon:.4g})")
    return McEstimate(
        mean=mean,
        half_width=half_width,
        n_episodes=n,
        tail_bound=bound,
        horizon=float(horizon),
        exploded_episodes=exploded,
    )


# --- Diagnostics ---

def weight_moment_check(
    model: CtmdpModel,
    policy: PolicySpec,
    t: float,
    n: int,
    seed: int,
    start: int | None = None,
) -> MomentReport:
    """
    One-sided Monte Carlo check of E w(xi_t) <= e^{rho t} w(x) + (b/rho)(e^{rho t} - 1).

    Starts from ``start`` or, when None, from gamma (with w(x) replaced by
    the gamma-average of w).
    """
    if n < 2 or not t > 0:
        raise ValueError("weight_moment_check needs n >= 2 and t > 0")
    weights = model.weights
    weights.require("rho", "b")
    tables = _JumpTables(model)
    samples = np.empty(n)
    exploded = 0
    for episode in range(n):
        trajectory = simulate_episode(model, policy, t, seed, episode, start=start, tables=tables)
        samples[episode] = weights.w[trajectory.state_at(t)]
        exploded += trajectory.exploded
    mean, stderr, _ = _normal_ci(samples)
    w0 = float(weights.w[start]) if start is not None else float(model.gamma @ weights.w)
    growth = math.exp(weights.rho * t)
    bound = growth * w0 + (weights.b / weights.rho) * (growth - 1.0)
    ok = mean - 3.0 * stderr <= bound and exploded == 0
    if not ok:
        logging.warning(f"Weight moment at t={t!r}: mean {mean!r} against bound {bound!r}, {exploded} exploded episodes")
    return MomentReport(
        t=float(t),
        mean=mean,
        stderr=stderr,
        bound=bound,
        exploded_episodes=exploded,
        status="pass" if ok else "fail",
    )


def _transition_row(generator: sp.csr_matrix, x: int, t: float) -> np.ndarray:
    """Row x of exp(t Q)."""
    n = generator.shape[0]
    if n <= DENSE_EXPM_LIMIT:
        return expm(t * generator.toarray())[x]
    unit = np.zeros(n)
    unit[x] = 1.0
    return expm_multiply(t * generator.T.tocsr(), unit)


def kolmogorov_residual(
    model: CtmdpModel,
    policy: DeterministicPolicy | PolicySpec,
    x: int,
    t: float,
    target: Iterable[int],
    level: int | None = None,
) -> float:
    """
    Residual of the integral forward equation
    P_x(xi_t in G) - I{x in G} = int_0^t E_x[q(G minus {xi_u} | xi_u) - I{xi_u in G} q_{xi_u}] du.

    Args:
        model (CtmdpModel): A finite model.
        policy: A deterministic stationary policy.
        x (int): Start state.
        t (float): Time, t >= 0.
        target (Iterable[int]): The set G.
        level (int | None): When given, G must lie in S_level.

    Returns:
        float: The absolute residual; transition probabilities come from the
        matrix exponential and the time integral from adaptive quadrature.
    """
    choice = _as_stationary(policy)
    if t < 0:
        raise ValueError("t must be non-negative")
    members = np.zeros(model.n_states, dtype=bool)
    members[list(target)] = True
    if level is not None and np.any(members & ~model.states.members(level)):
        raise ValueError(f"target set is not contained in S_{level}")
    generator, _ = policy_generator(model, choice.choice)
    indicator = members.astype(float)
    off_diagonal = generator - sp.diags(generator.diagonal())
    gain = off_diagonal @ indicator
    loss = indicator * -generator.diagonal()
    lhs = _transition_row(generator, x, t) @ indicator - indicator[x]
    integral, _ = integrate.quad(
        lambda u: _transition_row(generator, x, u) @ (gain - loss), 0.0, t, epsabs=QUAD_EPSABS, limit=200
    )
    return abs(lhs - integral)


def dynkin_residual(
    model: CtmdpModel,
    policy: DeterministicPolicy | PolicySpec,
    u: np.ndarray,
    x: int,
    t: float,
    discounted: bool = False,
) -> float:
    """
    Residual of Dynkin's formula for a stationary policy.

    Plain: E_x u(xi_t) - u(x) = int_0^t E_x[sum_y q(y|xi_s) u(y)] ds.
    Discounted: e^{-alpha t} E_x u(xi_t) - u(x) = int_0^t e^{-alpha s} E_x[sum_y q(y|xi_s) u(y) - alpha u(xi_s)] ds.
    """
    choice = _as_stationary(policy)
    if t < 0:
        raise ValueError("t must be non-negative")
    values = np.asarray(getattr(u, "values", u), dtype=float)
    generator, _ = policy_generator(model, choice.choice)
    drift = generator @ values
    alpha = model.alpha
    end_value = _transition_row(generator, x, t) @ values
    if discounted:
        lhs = math.exp(-alpha * t) * end_value - values[x]
        integrand = lambda s: math.exp(-alpha * s) * (_transition_row(generator, x, s) @ (drift - alpha * values))  # noqa: E731
    else:
        lhs = end_value - values[x]
        integrand = lambda s: _transition_row(generator, x, s) @ drift  # noqa: E731
    integral, _ = integrate.quad(integrand, 0.0, t, epsabs=QUAD_EPSABS, limit=200)
    return abs(lhs - integral)


def explosion_probe(
    model: CtmdpModel,
    policy: PolicySpec,
    t: float,
    levels: Sequence[int],
    n: int,
    seed: int,
    limit: float = PROBE_LIMIT,
) -> ProbeReport:
    """
    Frequency of xi_t outside S_l in the model truncated at each level l.

    Every level reuses the same episode seeds. The probe passes when each
    frequency is at most the previous one plus both CI half-widths, the
    frequency at the last level is below ``limit``, and no episode hit the
    explosion guard.
    """
    levels = [int(level) for level in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("probe levels must be strictly increasing")
    if n < 1 or not t > 0:
        raise ValueError("explosion_probe needs n >= 1 and t > 0")
    frequencies, half_widths = [], []
    exploded = 0
    for level in levels:
        truncated = truncate_model(model, level)
        tables = _JumpTables(truncated)
        outside = 0
        for episode in range(n):
            trajectory = simulate_episode(truncated, policy, t, seed, episode, tables=tables)
            outside += model.states.levels[trajectory.state_at(t)] > level
            exploded += trajectory.exploded
        p = outside / n
        frequencies.append(p)
        half_widths.append(Z95 * math.sqrt(p * (1.0 - p) / n))
    decreasing = all(
        later <= earlier + hw_a + hw_b
        for earlier, later, hw_a, hw_b in zip(frequencies, frequencies[1:], half_widths, half_widths[1:])
    )
    if not decreasing:
        logging.warning(f"Explosion probe frequencies do not decrease: {frequencies}")
    if frequencies[-1] >= limit:
        logging.warning(f"Explosion probe frequency {frequencies[-1]!r} at level {levels[-1]} is not below {limit!r}")
    if exploded:
        logging.warning(f"Explosion probe: {exploded} episodes hit the explosion guard")
    ok = decreasing and frequencies[-1] < limit and exploded == 0
    return ProbeReport(
        t=float(t),
        levels=levels,
        frequencies=frequencies,
        half_widths=half_widths,
        decreasing=decreasing,
        limit=float(limit),
        exploded_episodes=exploded,
        status="pass" if ok else "fail",
    )


# --- Result Tables ---

TRAJECTORY_HEADER = ("episode", "m", "T_m", "x_m", "action")


def trajectory_rows(model: CtmdpModel, episode: int, trajectory: Trajectory) -> Iterable[tuple]:
    for m, (time, state) in enumerate(zip(trajectory.times, trajectory.states)):
        index = int(trajectory.actions[m]) if m < trajectory.actions.size else None
        action = None if index is None else model.actions[int(state)][index]
        yield episode, m, time, int(state), action
