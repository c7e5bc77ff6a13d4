"""
Batch front end: parses run configs, dispatches the solve / simulate / verify / example commands
and writes DSV artifacts plus a run manifest.

Run configs use the same section format as model files:

    [run]       command, seed, out, tol, max_iter, log_level
    [model]     path              (relative to the config file)
    [example]   lambda, C1, C2, Abar, alpha, gamma_low, gamma_high, gamma_atom, x_min, n_actions, n_states
    [simulate]  episodes, horizon (number or auto), log_episodes
    [verify]    t_values, residual_times, levels, probe_t, moment_episodes, probe_episodes,
                dlp_probes, random_models, grid_tol
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
import time
from collections.abc import Callable
from pathlib import Path
from typing import Literal

import numpy as np
import scipy
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from rich.console import Console
from rich.table import Table

from . import __version__
from .errors import ConfigError, CtmdpError
from .model import (
    ConditionId,
    CtmdpModel,
    check_condition,
    random_finite_model,
    validate_kernel,
    with_fitted_constants,
)
from .queueing import (
    CLOSED_FORM_HEADER,
    FIXED_POINT_HEADER,
    FixedPointReport,
    QueueParams,
    build_discrete_model,
    closed_form_table,
    fixed_point_rows,
    fixed_point_z,
    optimal_policy,
    state_points,
    u_star_at_zero,
    weighted_grid_error,
)
from .simulator import (
    TRAJECTORY_HEADER,
    McEstimate,
    PolicySpec,
    auto_horizon,
    dynkin_residual,
    estimate_discounted_cost,
    explosion_probe,
    kolmogorov_residual,
    simulate_episode,
    trajectory_rows,
    weight_moment_check,
)
from .solver import (
    CONVERGENCE_HEADER,
    VALUE_POLICY_HEADER,
    ValueFunction,
    convergence_rows,
    dlp_check,
    enumerate_policies,
    feasible_probes,
    lower_bound,
    policy_value,
    solve,
    value_policy_rows,
)
from .tools.dsv import write_dsv
from .tools.model_file import load_model
from .tools.sections import format_float, parse_float, parse_floats, parse_int, read_sections
from .tools.streams import split

Command = Literal["solve", "simulate", "verify", "example"]
CHECK_HEADER = ("check", "status", "value", "detail")
RESIDUAL_TOL = 1e-6


# --- Configuration ---

class RunConfig(BaseModel):
    """A validated run; every field has a default except the command."""

    model_config = ConfigDict(frozen=True)

    command: Command
    seed: int = Field(0, ge=0)
    out_dir: str = "results"
    tol: float = Field(1e-9, gt=0)
    max_iter: int = Field(10_000, ge=1)
    log_level: str = "INFO"
    model_path: str | None = None
    example: QueueParams | None = None
    n_states: int = Field(500, ge=2)
    episodes: int = Field(10_000, ge=2)
    horizon: float | None = Field(None, gt=0)
    log_episodes: int = Field(10, ge=0)
    t_values: tuple[float, ...] = (0.5, 1.0, 2.0)
    residual_times: tuple[float, ...] = (0.5, 2.0)
    levels: tuple[int, ...] = (1, 2, 5, 10, 20)
    probe_t: float = Field(1.0, gt=0)
    moment_episodes: int = Field(2_000, ge=2)
    probe_episodes: int = Field(1_000, ge=1)
    dlp_probes: int = Field(100, ge=0)
    random_models: int = Field(20, ge=0)
    grid_tol: float = Field(5e-3, gt=0)

    @model_validator(mode="after")
    def check_sources(self) -> "RunConfig":
        if self.model_path is not None and self.example is not None:
            raise ValueError("give either [model] path or an [example] section, not both")
        if self.model_path is not None and not Path(self.model_path).is_file():
            raise ValueError(f"model file {self.model_path!r} does not exist")
        if self.command in ("solve", "simulate") and self.model_path is None and self.example is None:
            raise ValueError(f"command '{self.command}' needs [model] path or an [example] section")
        if any(t <= 0 for t in self.t_values) or any(t < 0 for t in self.residual_times):
            raise ValueError("t_values must be positive and residual_times non-negative")
        if list(self.levels) != sorted(set(self.levels)):
            raise ValueError("levels must be strictly increasing")
        return self

    def queue_params(self) -> QueueParams:
        return self.example or QueueParams()


def _horizon(value: str, key: str, where: str) -> float | None:
    return None if value.lower() == "auto" else parse_float(value, key, where)


def _floats(value: str, key: str, where: str) -> tuple[float, ...]:
    return tuple(parse_floats(value, key, where))


def _ints(value: str, key: str, where: str) -> tuple[int, ...]:
    return tuple(parse_int(token, key, where) for token in value.split())


# section -> key -> (field, parser); None keeps the raw text
_RUN_KEYS: dict[str, dict[str, tuple[str, Callable | None]]] = {
    "run": {
        "command": ("command", None),
        "seed": ("seed", parse_int),
        "out": ("out_dir", None),
        "tol": ("tol", parse_float),
        "max_iter": ("max_iter", parse_int),
        "log_level": ("log_level", None),
    },
    "model": {"path": ("model_path", None)},
    "example": {
        "lambda": ("lambda", parse_float),
        "C1": ("C1", parse_float),
        "C2": ("C2", parse_float),
        "Abar": ("Abar", parse_float),
        "alpha": ("alpha", parse_float),
        "gamma_low": ("gamma_low", parse_float),
        "gamma_high": ("gamma_high", parse_float),
        "gamma_atom": ("gamma_atom", parse_float),
        "x_min": ("x_min", parse_float),
        "n_actions": ("n_actions", parse_int),
        "n_states": ("n_states", parse_int),
    },
    "simulate": {
        "episodes": ("episodes", parse_int),
        "horizon": ("horizon", _horizon),
        "log_episodes": ("log_episodes", parse_int),
    },
    "verify": {
        "t_values": ("t_values", _floats),
        "residual_times": ("residual_times", _floats),
        "levels": ("levels", _ints),
        "probe_t": ("probe_t", parse_float),
        "moment_episodes": ("moment_episodes", parse_int),
        "probe_episodes": ("probe_episodes", parse_int),
        "dlp_probes": ("dlp_probes", parse_int),
        "random_models": ("random_models", parse_int),
        "grid_tol": ("grid_tol", parse_float),
    },
}


def parse_config_text(text: str, source: str = "<string>", base_dir: Path | None = None) -> RunConfig:
    """
    Parses run-config text.

    Raises:
        ConfigError: Unknown section or key, malformed number, missing or
            invalid value; the message names the key and its line.
    """
    values: dict[str, object] = {}
    example: dict[str, object] = {}
    lines: dict[str, int] = {}
    for line in read_sections(text, source):
        where = line.where(source)
        keys = _RUN_KEYS.get(line.section)
        if keys is None:
            raise ConfigError(f"{where}: unknown section [{line.section}]")
        if line.key is None or line.key not in keys:
            raise ConfigError(f"{where}: unknown key {line.key or line.value!r} in [{line.section}]")
        field, parser = keys[line.key]
        value = line.value if parser is None else parser(line.value, line.key, where)
        if field == "model_path" and base_dir is not None and not Path(value).is_absolute():
            value = str((base_dir / value).resolve())
        target = example if line.section == "example" and field != "n_states" else values
        target[field] = value
        lines[field] = line.lineno
    if "command" not in values:
        raise ConfigError(f"{source}: missing required key 'command' in [run]")
    if example:
        try:
            values["example"] = QueueParams(**example)
        except ValidationError as e:
            raise ConfigError(f"{source}: invalid [example] parameters: {_describe(e, lines, source)}") from None
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"{source}: {_describe(e, lines, source)}") from None


def _describe(error: ValidationError, lines: dict[str, int], source: str) -> str:
    parts = []
    for item in error.errors():
        key = str(item["loc"][0]) if item["loc"] else "config"
        line = lines.get(key)
        parts.append(f"'{key}'{f' (line {line})' if line else ''}: {item['msg']}")
    return "; ".join(parts)


def parse_config(path: str | Path) -> RunConfig:
    """Reads and validates a run config; a relative model path is resolved against the config's directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    return parse_config_text(text, source=str(path), base_dir=path.parent)


def _format(value: object) -> str:
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, tuple):
        return " ".join(_format(v) for v in value)
    return str(value)


def serialize_config(config: RunConfig) -> str:
    """Canonical section text; ``parse_config_text`` reads it back to an equal config."""
    data = config.model_dump()
    out = []
    for section, keys in _RUN_KEYS.items():
        block = []
        for key, (field, _) in keys.items():
            if section == "example" and field != "n_states":
                if config.example is None:
                    continue
                value = getattr(config.example, "lam" if field == "lambda" else field)
            else:
                value = data[field]
            if value is None:
                if field == "horizon":
                    block.append(f"{key} = auto")
                continue
            block.append(f"{key} = {_format(value)}")
        if block:
            out.append(f"[{section}]")
            out.extend(block)
    return "\n".join(out) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()


# --- Checks ---

class CheckRow(BaseModel):
    check: str
    status: Literal["pass", "fail", "warn"]
    value: float | None = None
    detail: str = ""

    def row(self) -> tuple:
        return self.check, self.status, self.value, self.detail


def _row(check: str, ok: bool, value: float | None = None, detail: str = "", fatal: bool = True) -> CheckRow:
    status = "pass" if ok else ("fail" if fatal else "warn")
    if not ok:
        log = logging.error if fatal else logging.warning
        log(f"Check '{check}' {status}: value={value!r} {detail}")
    return CheckRow(check=check, status=status, value=None if value is None else float(value), detail=detail)


def _guarded(check: str, rows: list[CheckRow], fn: Callable[[], list[CheckRow]]) -> None:
    """Runs one named check group; a module error becomes a failed row carrying the check name."""
    try:
        rows.extend(fn())
    except (CtmdpError, ValueError, IndexError) as e:
        logging.error(f"Check '{check}' raised {type(e).__name__}: {e}")
        rows.append(CheckRow(check=check, status="fail", detail=f"{type(e).__name__}: {e}"))


# --- Command Handlers ---

def _load(config: RunConfig) -> CtmdpModel:
    if config.model_path is not None:
        model = load_model(config.model_path)
        missing = [name for name, value in model.weights.constants().items() if value is None]
        if missing:
            logging.info(f"Fitting weight constants missing from {config.model_path}: {', '.join(missing)}")
        return with_fitted_constants(model)
    return build_discrete_model(config.queue_params(), config.n_states)


def handle_solve(config: RunConfig, out: Path) -> dict:
    """Solves the configured model and writes the convergence trace and the value/policy table."""
    model = _load(config)
    report = solve(model, tol=config.tol, max_iter=config.max_iter, strict=False)
    write_dsv(out / "convergence.dsv", CONVERGENCE_HEADER, convergence_rows(report))
    write_dsv(out / "value_policy.dsv", VALUE_POLICY_HEADER, value_policy_rows(model, report.value, report.policy))
    checks = [
        _row("solve:converged", report.converged, report.history[-1].sup_change, f"{report.iterations} iterations"),
    ]
    return {
        "status": "success",
        "data": {
            "checks": checks,
            "summary": {
                "iterations": report.iterations,
                "final_residual": report.final_residual,
                "objective": float(model.gamma @ report.value.values),
            },
        },
    }


def handle_simulate(config: RunConfig, out: Path) -> dict:
    """Estimates the discounted cost of the greedy policy of the solved model by Monte Carlo."""
    model = _load(config)
    report = solve(model, tol=config.tol, max_iter=config.max_iter, strict=False)
    policy = PolicySpec.deterministic(model, report.policy)
    horizon = config.horizon or auto_horizon(model, policy, config.episodes, config.seed)
    estimate: McEstimate = estimate_discounted_cost(model, policy, horizon, config.episodes, config.seed)

    def logged():
        for episode in range(min(config.log_episodes, config.episodes)):
            yield from trajectory_rows(model, episode, simulate_episode(model, policy, horizon, config.seed, episode))

    write_dsv(out / "trajectories.dsv", TRAJECTORY_HEADER, logged())
    write_dsv(out / "estimate.dsv", McEstimate.header, [estimate.row()])
    exact = float(model.gamma @ policy_value(model, report.policy).values)
    bound = lower_bound(model)
    checks = [
        _row("simulate:non_explosion", estimate.exploded_episodes == 0, estimate.exploded_episodes),
        _row(
            "simulate:lower_bound",
            estimate.mean + estimate.half_width + estimate.tail_bound >= bound,
            bound,
            f"mean={estimate.mean!r}",
        ),
        _row(
            "simulate:tail_bound",
            estimate.tail_bound <= 0.1 * estimate.half_width or config.horizon is not None,
            estimate.tail_bound,
            f"half_width={estimate.half_width!r}",
            fatal=False,
        ),
    ]
    return {
        "status": "success",
        "data": {"checks": checks, "summary": {**estimate.model_dump(), "exact_policy_value": exact}},
    }


def handle_example(config: RunConfig, out: Path) -> dict:
    """Runs the closed-form side of the queueing example: fixed point, u*, phi* and their checks."""
    params = config.queue_params()
    fixed = fixed_point_z(params, tol=min(config.tol, 1e-10))
    z_star = fixed.z_star
    write_dsv(out / "fixed_point.dsv", FIXED_POINT_HEADER, fixed_point_rows(fixed))
    write_dsv(out / "closed_form.dsv", CLOSED_FORM_HEADER, closed_form_table(params, z_star, state_points(params, config.n_states)))
    checks = _fixed_point_checks(params, fixed)
    write_dsv(out / "policy_check.dsv", CHECK_HEADER, (c.row() for c in checks))
    return {"status": "success", "data": {"checks": checks, "summary": {"z_star": z_star, "iterations": fixed.iterations}}}


def _fixed_point_checks(params: QueueParams, fixed: FixedPointReport) -> list[CheckRow]:
    z_star = fixed.z_star
    rows = [
        _row("fixed_point:converged", fixed.converged, fixed.iterations),
        _row("fixed_point:monotone", fixed.monotone),
        _row("fixed_point:first_step", fixed.first_step_check, fixed.z_history[1], f"> {1.0 - params.C1 / (2.0 * params.alpha)!r}"),
        _row("fixed_point:bound_lambda", fixed.bound_check, z_star, f"< {fixed.bound!r}"),
        _row("fixed_point:bound_alpha", fixed.alpha_bound_check, z_star, f"< {fixed.alpha_bound!r}", fatal=False),
    ]
    policy = optimal_policy(params, z_star)
    rows.append(_row("policy:admissible", policy.admissible, policy.required_abar, f"Abar={params.Abar!r}"))
    rows.append(_row("policy:nonnegative", policy.nonnegative))
    try:
        u_star_at_zero(z_star, params)
        rows.append(_row("u_star_at_zero", True, 1.0 - z_star))
    except CtmdpError as e:
        rows.append(_row("u_star_at_zero", False, 1.0 - z_star, str(e)))
    return rows


def _model_checks(model: CtmdpModel) -> list[CheckRow]:
    report = validate_kernel(model)
    rows = [_row("kernel", report.status == "pass", float(report.residual.max()), f"{report.failures} failing rows")]
    for cid in ConditionId:
        try:
            cond = check_condition(model, cid)
            rows.append(_row(f"condition:{cid.value}", cond.status == "pass", cond.slack, cond.detail))
        except CtmdpError as e:
            rows.append(_row(f"condition:{cid.value}", False, None, str(e)))
    return rows


def _solver_checks(model: CtmdpModel, config: RunConfig, state: dict) -> list[CheckRow]:
    report = solve(model, tol=config.tol, max_iter=config.max_iter, strict=False)
    state["report"] = report
    k = model.alpha + 1.0 + float(model.qbar.max())
    dlp_tol = k * config.tol * max(1.0, 1.0 / model.alpha)
    objective = float(model.gamma @ report.value.values)
    rows = [
        _row("solve:converged", report.converged, report.history[-1].sup_change, f"{report.iterations} iterations"),
        _row(
            "solve:monotone_bounded",
            report.monotone_bounded,
            report.invariant_violations,
            "iterations that rose or left the u_0 bound",
        ),
        _row("solve:residual", report.final_residual <= k * config.tol, report.final_residual, f"K*tol={k * config.tol!r}"),
    ]
    dlp = dlp_check(model, report.value, tol=dlp_tol)
    rows.append(_row("dlp:feasible", dlp.feasible, dlp.feasibility_slack, f"objective={dlp.objective!r}"))
    probes = feasible_probes(model, report.value, config.dlp_probes, split(config.seed, "dlp"), tol=dlp_tol)
    if probes:
        worst = max(p.objective for p in probes)
        ok = all(p.feasible for p in probes) and worst <= objective + 1e-8
        rows.append(_row("dlp:probes", ok, worst, f"{len(probes)} probes, u* objective={objective!r}"))
    bump_state = _bump_state(model)
    if bump_state is not None:
        bumped = report.value.values.copy()
        bumped[bump_state] += 0.1
        perturbed = dlp_check(model, ValueFunction(bumped), tol=dlp_tol)
        ok = not perturbed.feasible or perturbed.objective < objective
        rows.append(_row("dlp:perturbation", ok, perturbed.feasibility_slack, f"state {bump_state}"))
    bound = lower_bound(model)
    rows.append(_row("lower_bound", objective >= bound - 1e-9, bound, f"objective={objective!r}"))
    return rows


def _bump_state(model: CtmdpModel) -> int | None:
    candidates = np.flatnonzero((model.gamma > 0) & (model.qbar > 0))
    return None if candidates.size == 0 else int(candidates[np.argmax(model.gamma[candidates])])


def _simulator_checks(model: CtmdpModel, config: RunConfig, state: dict) -> list[CheckRow]:
    report = state["report"]
    policy = PolicySpec.deterministic(model, report.policy)
    rows = []
    for t in config.t_values:
        moment = weight_moment_check(model, policy, t, config.moment_episodes, split(config.seed, f"moment-{t!r}"))
        detail = f"bound={moment.bound!r}, exploded={moment.exploded_episodes}"
        rows.append(_row(f"moment:t={t!r}", moment.status == "pass", moment.mean, detail))
    levels = [level for level in config.levels if level <= model.states.max_level] or [model.states.max_level]
    probe = explosion_probe(model, policy, config.probe_t, levels, config.probe_episodes, split(config.seed, "probe"))
    detail = f"levels={probe.levels}, limit={probe.limit!r}, decreasing={probe.decreasing}"
    detail += f", exploded={probe.exploded_episodes}"
    rows.append(_row("explosion_probe", probe.status == "pass", probe.frequencies[-1], detail))

    x = int(np.argmax(model.gamma))
    inner = np.flatnonzero(model.states.levels == model.states.levels.min())
    outer = np.flatnonzero(model.states.levels == model.states.max_level)
    for t in config.residual_times:
        r = kolmogorov_residual(model, report.policy, x, t, inner, level=int(model.states.levels.min()))
        rows.append(_row(f"kolmogorov:t={t!r}", r <= RESIDUAL_TOL, r))
        r = kolmogorov_residual(model, report.policy, x, t, outer)
        rows.append(_row(f"kolmogorov_any_set:t={t!r}", r <= RESIDUAL_TOL, r, fatal=False))
        for discounted in (False, True):
            r = dynkin_residual(model, report.policy, report.value, x, t, discounted=discounted)
            rows.append(_row(f"dynkin{'_discounted' if discounted else ''}:t={t!r}", r <= RESIDUAL_TOL, r))
        r = dynkin_residual(model, report.policy, np.ones(model.n_states), x, t)
        rows.append(_row(f"dynkin_constant:t={t!r}", r <= RESIDUAL_TOL, r))
    return rows


def _oracle_checks(config: RunConfig) -> list[CheckRow]:
    worst = 0.0
    for index in range(config.random_models):
        rng_seed = split(config.seed, f"random-model-{index}")
        model = random_finite_model(rng_seed, n_states=2 + index % 3, max_actions=3)
        report = solve(model, tol=1e-12, max_iter=100_000)
        oracle, _ = enumerate_policies(model)
        worst = max(worst, float(np.max(np.abs(report.value.values - oracle.values))))
    return [_row("oracle_equivalence", worst <= 1e-8, worst, f"{config.random_models} random models")]


def handle_verify(config: RunConfig, out: Path) -> dict:
    """Runs the condition, Bellman/DLP, simulation, residual and fixed-point battery."""
    model = _load(config)
    rows: list[CheckRow] = []
    state: dict = {}
    _guarded("model", rows, lambda: _model_checks(model))
    _guarded("solver", rows, lambda: _solver_checks(model, config, state))
    if "report" in state:
        _guarded("simulator", rows, lambda: _simulator_checks(model, config, state))
    if config.model_path is None:
        params = config.queue_params()

        def queue_checks() -> list[CheckRow]:
            fixed = fixed_point_z(params)
            checks = _fixed_point_checks(params, fixed)
            if "report" in state:
                error = weighted_grid_error(model, params, state["report"].value.values, fixed.z_star)
                checks.append(_row("closed_form:grid_error", error <= config.grid_tol, error, f"n={config.n_states}"))
            return checks

        _guarded("queueing", rows, queue_checks)
    _guarded("oracle", rows, lambda: _oracle_checks(config))
    write_dsv(out / "checks.dsv", CHECK_HEADER, (row.row() for row in rows))
    return {"status": "success", "data": {"checks": rows, "summary": {"checks": len(rows)}}}


COMMANDS: dict[str, Callable[[RunConfig, Path], dict]] = {
    "solve": handle_solve,
    "simulate": handle_simulate,
    "verify": handle_verify,
    "example": handle_example,
}


# --- Dispatcher ---

def exit_status(result: dict) -> int:
    """0 when the command succeeded and no check failed, 1 on a failed check, 2 on an error."""
    if result["status"] != "success":
        return 2
    return 1 if any(row.status == "fail" for row in result["data"]["checks"]) else 0


def run(config: RunConfig) -> tuple[int, dict]:
    """
    Executes one command and writes its artifacts and manifest under ``config.out_dir``.

    Returns:
        tuple[int, dict]: The exit status and the handler's status dict.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    logging.info(f"Running '{config.command}' (seed {config.seed}) into {out}")
    try:
        result = COMMANDS[config.command](config, out)
    except CtmdpError as e:
        logging.error(f"Command '{config.command}' failed: {e}")
        result = {"status": "error", "message": str(e)}
    except (ValueError, IndexError) as e:
        logging.error(f"Command '{config.command}' failed with {type(e).__name__}: {e}")
        result = {"status": "error", "message": f"{type(e).__name__}: {e}"}
    status = exit_status(result)
    manifest = [
        ("command", config.command),
        ("config_hash", config_hash(config)),
        ("seed", config.seed),
        ("ctmdp_version", __version__),
        ("numpy_version", np.__version__),
        ("scipy_version", scipy.__version__),
        ("python_version", platform.python_version()),
        ("exit_status", status),
        ("wall_time_s", time.perf_counter() - started),
    ]
    write_dsv(out / "manifest.dsv", ("key", "value"), manifest)
    return status, result


def _summary_table(config: RunConfig, result: dict) -> Table:
    table = Table(title=f"ctmdp {config.command}")
    if result["status"] != "success":
        table.add_column("error", style="red")
        table.add_row(result["message"])
        return table
    table.add_column("check / key")
    table.add_column("status")
    table.add_column("value", justify="right")
    styles = {"pass": "green", "fail": "red", "warn": "yellow"}
    for row in result["data"]["checks"]:
        value = "" if row.value is None else f"{row.value:.6g}"
        table.add_row(row.check, f"[{styles[row.status]}]{row.status}[/]", value)
    for key, value in result["data"].get("summary", {}).items():
        table.add_row(key, "", f"{value:.6g}" if isinstance(value, float) else str(value))
    return table


def _parse_args(argv: list[str] | None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="ctmdp", description="Solve and verify discounted CTMDPs.")
    parser.add_argument("--config", type=Path, required=True, help="Run config file.")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config).")
    parser.add_argument("--out", type=str, help="Output directory (overrides the config).")
    parser.add_argument("--tol", type=float, help="Solver tolerance (overrides the config).")
    parser.add_argument("--log-level", dest="log_level", type=str, help="Logging level.")
    return parser.parse_args(argv)


def resolve_config(config: RunConfig, args: argparse.Namespace, environ: dict[str, str] | None = None) -> RunConfig:
    """Applies environment defaults to keys the file left unset, then command-line overrides."""
    environ = os.environ if environ is None else environ
    updates: dict[str, object] = {}
    env_keys = {"seed": ("CTMDP_SEED", int), "out_dir": ("CTMDP_OUT_DIR", str), "log_level": ("CTMDP_LOG_LEVEL", str)}
    for field, (name, cast) in env_keys.items():
        if field not in config.model_fields_set and environ.get(name):
            try:
                updates[field] = cast(environ[name])
            except ValueError:
                raise ConfigError(f"environment variable {name} is malformed: {environ[name]!r}") from None
    for field, flag in (("seed", "seed"), ("out_dir", "out"), ("tol", "tol"), ("log_level", "log_level")):
        value = getattr(args, flag)
        if value is not None:
            updates[field] = value
    if not updates:
        return config
    try:
        return RunConfig(**{**dict(config), **updates})
    except ValidationError as e:
        raise ConfigError(_describe(e, {}, "command line")) from None


def main(argv: list[str] | None = None) -> int:
    load_dotenv()
    args = _parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or os.getenv("CTMDP_LOG_LEVEL") or "INFO").upper(),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    try:
        config = resolve_config(parse_config(args.config), args)
    except CtmdpError as e:
        logging.error(f"Invalid configuration: {e}")
        return 2
    logging.getLogger().setLevel(config.log_level.upper())
    status, result = run(config)
    Console().print(_summary_table(config, result))
    return status


if __name__ == "__main__":
    sys.exit(main())
