"""Reader for the line-based section format shared by model files and run configs.

A file is a sequence of ``[section]`` headers, each followed by lines that are
either ``key = value`` pairs or bare whitespace-separated records (the sparse
kernel rows ``i k j rate``). ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..errors import ConfigError


@dataclass(frozen=True)
class SectionLine:
    section: str
    lineno: int
    key: str | None
    value: str

    def where(self, source: str) -> str:
        return f"{source}:{self.lineno}"


def read_sections(text: str, source: str = "<string>") -> list[SectionLine]:
    """
    Splits section-format text into tagged lines.

    Args:
        text (str): The file contents.
        source (str): Name used in error messages (usually the file path).

    Returns:
        list[SectionLine]: One entry per non-empty, non-comment line, tagged
        with its section and 1-based line number. ``key`` is None for bare
        records.

    Raises:
        ConfigError: On content before the first header or a malformed header.
    """
    lines: list[SectionLine] = []
    section: str | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise ConfigError(f"{source}:{lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip().lower()
            continue
        if section is None:
            raise ConfigError(f"{source}:{lineno}: content before the first [section] header")
        if "=" in line:
            key, value = line.split("=", 1)
            lines.append(SectionLine(section, lineno, key.strip(), value.strip()))
        else:
            lines.append(SectionLine(section, lineno, None, line))
    return lines


def parse_float(value: str, key: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{where}: malformed number for '{key}': {value!r}") from None


def parse_int(value: str, key: str, where: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{where}: malformed integer for '{key}': {value!r}") from None


def parse_floats(value: str, key: str, where: str) -> list[float]:
    return [parse_float(token, key, where) for token in value.split()]


def format_float(value: float) -> str:
    """Shortest text that reads back to the same float."""
    return repr(float(value))
