"""
Model files in the section format.

    [states]      i = point level
    [actions]     i = a0 a1 ...
    [kernel]      i k j rate          (sparse; diagonal entries listed explicitly)
    [cost]        i k = value
    [weights]     w = ... / w_prime = ... / rho = ... (any weight constant)
    [discount]    alpha = value
    [gamma]       i = mass
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..model import CtmdpModel, build_model
from .sections import SectionLine, format_float, parse_float, parse_floats, parse_int, read_sections

_WEIGHT_CONSTANTS = ("rho", "b", "rho_prime", "b_prime", "L", "L_prime", "M", "c", "M_prime", "c_prime")
_SECTIONS = ("states", "actions", "kernel", "cost", "weights", "discount", "gamma")


def _index(line: SectionLine, source: str, n: int | None = None) -> int:
    if line.key is None:
        raise ConfigError(f"{line.where(source)}: expected 'i = ...' in [{line.section}]")
    index = parse_int(line.key, "index", line.where(source))
    if index < 0 or (n is not None and index >= n):
        raise ConfigError(f"{line.where(source)}: state index {index} out of range")
    return index


def loads_model(text: str, source: str = "<string>") -> CtmdpModel:
    """
    Parses a model from section-format text.

    Raises:
        ConfigError: On unknown sections or keys, malformed numbers, missing
            sections, or an inconsistent model (the message names the line).
    """
    grouped: dict[str, list[SectionLine]] = {name: [] for name in _SECTIONS}
    for line in read_sections(text, source):
        if line.section not in grouped:
            raise ConfigError(f"{line.where(source)}: unknown section [{line.section}]")
        grouped[line.section].append(line)
    for name in ("states", "actions", "discount"):
        if not grouped[name]:
            raise ConfigError(f"{source}: missing required section [{name}]")

    states: dict[int, tuple[float, int]] = {}
    for line in grouped["states"]:
        where = line.where(source)
        if line.key is None:
            raise ConfigError(f"{where}: expected 'i = point level'")
        fields = line.value.split()
        if len(fields) not in (1, 2):
            raise ConfigError(f"{where}: expected 'i = point level'")
        point = parse_float(fields[0], "point", where)
        level = parse_int(fields[1], "level", where) if len(fields) == 2 else 0
        states[_index(line, source)] = (point, level)
    n = len(states)
    if sorted(states) != list(range(n)):
        raise ConfigError(f"{source}: [states] indices must be 0..n-1 without gaps")

    actions: dict[int, list[float]] = {}
    for line in grouped["actions"]:
        if line.key is None:
            raise ConfigError(f"{line.where(source)}: expected 'i = a0 a1 ...'")
        actions[_index(line, source, n)] = parse_floats(line.value, "actions", line.where(source))
    if sorted(actions) != list(range(n)):
        raise ConfigError(f"{source}: [actions] must list A(x) for every state")

    entries = []
    for line in grouped["kernel"]:
        where = line.where(source)
        fields = line.value.split() if line.key is None else []
        if len(fields) != 4:
            raise ConfigError(f"{where}: expected kernel record 'i k j rate'")
        i, k, j = (parse_int(f, "kernel", where) for f in fields[:3])
        if not (0 <= i < n and 0 <= j < n and 0 <= k < len(actions[i])):
            raise ConfigError(f"{where}: kernel record refers to an unknown state or action")
        entries.append((i, k, j, parse_float(fields[3], "rate", where)))

    cost = [[0.0] * len(actions[i]) for i in range(n)]
    seen = set()
    for line in grouped["cost"]:
        where = line.where(source)
        fields = (line.key or "").split()
        if len(fields) != 2:
            raise ConfigError(f"{where}: expected 'i k = value'")
        i, k = (parse_int(f, "cost", where) for f in fields)
        if not (0 <= i < n and 0 <= k < len(actions[i])):
            raise ConfigError(f"{where}: cost refers to an unknown state or action")
        cost[i][k] = parse_float(line.value, "cost", where)
        seen.add((i, k))
    missing = sum(len(actions[i]) for i in range(n)) - len(seen)
    if missing:
        raise ConfigError(f"{source}: [cost] is missing {missing} (state, action) entries")

    weights: dict[str, object] = {}
    for line in grouped["weights"]:
        where = line.where(source)
        if line.key in ("w", "w_prime"):
            values = parse_floats(line.value, line.key, where)
            if len(values) != n:
                raise ConfigError(f"{where}: '{line.key}' needs {n} values")
            weights[line.key] = values
        elif line.key in _WEIGHT_CONSTANTS:
            weights[line.key] = parse_float(line.value, line.key, where)
        else:
            raise ConfigError(f"{where}: unknown key '{line.key}' in [weights]")

    alpha = None
    for line in grouped["discount"]:
        if line.key != "alpha":
            raise ConfigError(f"{line.where(source)}: unknown key '{line.key}' in [discount]")
        alpha = parse_float(line.value, "alpha", line.where(source))

    gamma = np.zeros(n)
    for line in grouped["gamma"]:
        gamma[_index(line, source, n)] = parse_float(line.value, "gamma", line.where(source))
    if not grouped["gamma"]:
        gamma[:] = 1.0 / n

    try:
        return build_model(
            points=[states[i][0] for i in range(n)],
            actions=[actions[i] for i in range(n)],
            entries=entries,
            cost=cost,
            alpha=alpha,
            gamma=gamma,
            levels=[states[i][1] for i in range(n)],
            **weights,
        )
    except (ValueError, IndexError) as e:
        raise ConfigError(f"{source}: invalid model: {e}") from e


def load_model(path: str | Path) -> CtmdpModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read model file {path}: {e}") from e
    return loads_model(text, source=str(path))


def dumps_model(model: CtmdpModel) -> str:
    """Writes the model back in section format; ``loads_model`` reads it back to an equal model."""
    out = ["[states]"]
    for i in range(model.n_states):
        out.append(f"{i} = {format_float(model.states.points[i])} {int(model.states.levels[i])}")
    out.append("[actions]")
    for i in range(model.n_states):
        out.append(f"{i} = {' '.join(format_float(a) for a in model.actions[i])}")
    out.append("[kernel]")
    rates = model.kernel.rates
    for pair in range(model.n_pairs):
        state = int(model.pair_state[pair])
        k = pair - int(model.actions.offsets[state])
        for p in range(rates.indptr[pair], rates.indptr[pair + 1]):
            out.append(f"{state} {k} {int(rates.indices[p])} {format_float(rates.data[p])}")
    out.append("[cost]")
    for pair in range(model.n_pairs):
        state = int(model.pair_state[pair])
        out.append(f"{state} {pair - int(model.actions.offsets[state])} = {format_float(model.cost.values[pair])}")
    out.append("[weights]")
    out.append(f"w = {' '.join(format_float(v) for v in model.weights.w)}")
    out.append(f"w_prime = {' '.join(format_float(v) for v in model.weights.w_prime)}")
    for name, value in model.weights.constants().items():
        if value is not None:
            out.append(f"{name} = {format_float(value)}")
    out.append("[discount]")
    out.append(f"alpha = {format_float(model.alpha)}")
    out.append("[gamma]")
    for i in range(model.n_states):
        out.append(f"{i} = {format_float(model.gamma[i])}")
    return "\n".join(out) + "\n"


def dump_model(model: CtmdpModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_model(model), encoding="utf-8")
    return path
