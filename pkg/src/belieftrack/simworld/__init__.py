"""Simulated articulated-object benchmarks: dynamics, rendering, datasets."""

from . import clutter, dataset, pendulum, render, spider

__all__ = ["clutter", "dataset", "pendulum", "render", "spider"]
