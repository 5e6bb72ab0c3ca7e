"""Offline figure rendering for training-metrics CSVs and trajectory snapshots.

Reads only the versioned metrics.csv schema and the newline-delimited
trajectory snapshot format; never mutates its inputs.  Rendering is pinned
to a committed style so identical inputs produce identical image bytes.
"""

__version__ = "0.1.0"

from .curves import CurveSpec, plot_curves
from .lengths import plot_length_hist
from .schema import METRICS_COLUMNS, SchemaError, load_metrics

__all__ = [
    "CurveSpec",
    "METRICS_COLUMNS",
    "SchemaError",
    "load_metrics",
    "plot_curves",
    "plot_length_hist",
]
