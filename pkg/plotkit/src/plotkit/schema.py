"""The versioned metrics.csv schema and tolerant numeric loading."""
from __future__ import annotations

import csv

import numpy as np

METRICS_COLUMNS = (
    "step", "loss", "log_z", "states_visited", "reward_calls", "modes_cells",
    "modes_regions", "l1_empirical", "l1_exact", "top100", "buffer_size",
    "wall_ms",
)


class SchemaError(ValueError):
    """A CSV does not carry the expected column layout."""


def load_metrics(path: str, columns: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Read the requested columns; empty cells become NaN.

    Raises SchemaError naming the first missing column.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in columns:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for col in columns:
        vals = []
        for row in rows:
            cell = (row.get(col) or "").strip()
            vals.append(float(cell) if cell else np.nan)
        out[col] = np.asarray(vals)
    return out
