"""CSV output with a fixed numeric format.

All floating point values are written in scientific notation with 15
significant digits, booleans as 0/1, and a header row first.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = ["format_value", "write_csv", "read_csv"]


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if np.isnan(v):
            return "nan"
        return f"{v:.14e}"
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write ``rows`` under ``header`` to ``path`` (UTF-8, '.' decimal)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("row length does not match header")
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read a table written by :func:`write_csv` into column arrays.

    Columns that parse as numbers become float arrays; others stay strings.
    """
    with Path(path).open(newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols: list[list[str]] = [[] for _ in header]
        for row in r:
            for c, v in zip(cols, row):
                c.append(v)
    out = {}
    for name, c in zip(header, cols):
        try:
            out[name] = np.array([float(v) for v in c])
        except ValueError:
            out[name] = np.array(c)
    return out
