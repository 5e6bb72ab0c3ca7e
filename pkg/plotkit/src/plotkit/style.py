"""Pinned rendering style so repeated runs produce identical image bytes."""
from __future__ import annotations

import json
from importlib import resources

import matplotlib

matplotlib.use("Agg")  # headless and deterministic

# Fixed string instead of the matplotlib version banner: keeps PNG metadata
# stable across library upgrades.
PNG_METADATA = {"Software": "plotkit"}


def load_style() -> dict:
    with resources.files("plotkit").joinpath("style.json").open("r") as fh:
        return json.load(fh)


def apply_style() -> None:
    matplotlib.rcParams.update(load_style())
