"""Metric curves over training steps or reward calls, with seed bands."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .schema import SchemaError, load_metrics
from .style import PNG_METADATA, apply_style

X_COLUMNS = ("step", "reward_calls")


@dataclass(frozen=True)
class CurveSpec:
    """What to draw: input CSVs grouped by label, one panel per y column.

    CSVs sharing a label are treated as seeds of one configuration and
    rendered as a mean line with a band (min/max or +-1 sigma).
    """

    csv_paths: tuple[str, ...]
    y_columns: tuple[str, ...]
    x_column: str = "step"
    labels: tuple[str, ...] = ()      # parallel to csv_paths; defaults to one group
    smoothing_window: int = 1
    band: str = "minmax"              # or "std"
    output_path: str = "curves.png"

    def __post_init__(self):
        if not self.csv_paths:
            raise ValueError("need at least one csv path")
        if not self.y_columns:
            raise ValueError("need at least one y column")
        if self.x_column not in X_COLUMNS:
            raise SchemaError(f"x column must be one of {X_COLUMNS}, got {self.x_column!r}")
        if self.labels and len(self.labels) != len(self.csv_paths):
            raise ValueError("labels must parallel csv_paths")
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")
        if self.band not in ("minmax", "std"):
            raise ValueError(f"band must be 'minmax' or 'std', got {self.band!r}")


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or y.size < 2:
        return y
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.concatenate([np.repeat(y[:1], pad), y, np.repeat(y[-1:], pad)])
    return np.convolve(padded, kernel, mode="same")[pad:pad + y.size]


def _groups(spec: CurveSpec) -> dict[str, list[str]]:
    labels = spec.labels or tuple("run" for _ in spec.csv_paths)
    out: dict[str, list[str]] = {}
    for label, path in zip(labels, spec.csv_paths):
        out.setdefault(label, []).append(path)
    return out


def plot_curves(spec: CurveSpec) -> str:
    """Render the spec to a PNG; returns the output path."""
    import matplotlib.pyplot as plt

    apply_style()
    needed = (spec.x_column, *spec.y_columns)
    tables = {path: load_metrics(path, needed) for path in spec.csv_paths}

    n = len(spec.y_columns)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.0), squeeze=False)
    for ax, ycol in zip(axes[0], spec.y_columns):
        for label, paths in _groups(spec).items():
            xs = [tables[p][spec.x_column] for p in paths]
            ys = [_smooth(tables[p][ycol], spec.smoothing_window) for p in paths]
            # align runs on their shared x grid
            common = xs[0]
            for x in xs[1:]:
                common = np.intersect1d(common, x)
            if common.size == 0:
                warnings.warn(f"{label}: no shared {spec.x_column} values; skipped")
                continue
            aligned = []
            for x, y in zip(xs, ys):
                idx = np.searchsorted(x, common)
                aligned.append(y[idx])
            stack = np.vstack(aligned)
            mean = np.nanmean(stack, axis=0)
            line, = ax.plot(common, mean, label=label)
            if stack.shape[0] > 1:
                if spec.band == "minmax":
                    lo, hi = np.nanmin(stack, 0), np.nanmax(stack, 0)
                else:
                    sd = np.nanstd(stack, 0)
                    lo, hi = mean - sd, mean + sd
                ax.fill_between(common, lo, hi, alpha=0.2, color=line.get_color())
        ax.set_xlabel(spec.x_column)
        ax.set_ylabel(ycol)
        ax.set_title(ycol)
        if len(_groups(spec)) > 1:
            ax.legend()
    fig.tight_layout()
    fig.savefig(spec.output_path, metadata=PNG_METADATA)
    plt.close(fig)
    return spec.output_path
