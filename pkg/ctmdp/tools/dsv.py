"""Delimiter-separated result tables: ``,`` delimiter, ``.`` decimal point, LF endings, one header line."""
from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np


def _cell(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def render_dsv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, delimiter=",", lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buffer.getvalue()


def write_dsv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    """
    Writes a DSV table.

    Args:
        path (str | Path): Destination file; parent directories are created.
        header (Sequence[str]): Column names.
        rows (Iterable[Sequence[object]]): Row values. Floats are written with
            ``repr`` so identical inputs always give byte-identical files.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(render_dsv(header, rows))
    logging.info(f"Wrote {path}")
    return path


def read_dsv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        records = list(csv.reader(handle, delimiter=","))
    if not records:
        return [], []
    return records[0], records[1:]
