"""Deterministic CSV output with a commented provenance header."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FLOAT_FORMAT = "{:.12g}"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def write_csv(path, columns: Sequence[str], rows, header: Optional[Sequence[str]] = None) -> Path:
    """Write ``rows`` under ``columns``; ``header`` lines are prefixed with ``#``.

    Floats use a fixed format so repeated runs produce identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {h}" for h in (header or [])]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path):
    """Return ``(header_lines, columns, data)`` with ``data`` as a float array."""
    header, body = [], []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            header.append(line[1:].strip())
        elif line:
            body.append(line)
    columns = body[0].split(",")
    data = np.array([[float(x) for x in r.split(",")] for r in body[1:]]).reshape(-1, len(columns))
    return header, columns, data
