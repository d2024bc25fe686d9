"""Binning and energy accounting shared by every module."""

from typing import Optional, Sequence

import numpy as np

from .exceptions import BinRangeError, ProfileError
from .models import POWER_ROLES, LoadProfile, Tariff


def bin_index(value: float, edges: Sequence[float], step: Optional[int] = None) -> int:
    """
    1-based bin of `value`.

    Bin j covers [edges[j-1], edges[j]); the last bin also holds edges[-1].
    """
    edges = np.asarray(edges, dtype=float)
    if not (edges[0] <= value <= edges[-1]):
        raise BinRangeError(float(value), step, float(edges[0]), float(edges[-1]))
    j = int(np.searchsorted(edges, value, side="right"))
    return min(j, edges.size - 1)


def bin_indices(values: Sequence[float], edges: Sequence[float]) -> np.ndarray:
    """0-based bins of every value; raises on the first out-of-range step."""
    values = np.asarray(values, dtype=float)
    edges = np.asarray(edges, dtype=float)
    outside = np.flatnonzero((values < edges[0]) | (values > edges[-1]) | ~np.isfinite(values))
    if outside.size:
        step = int(outside[0])
        raise BinRangeError(float(values[step]), step, float(edges[0]), float(edges[-1]))
    j = np.searchsorted(edges, values, side="right")
    return np.minimum(j, edges.size - 1) - 1


def energy_cost(y: LoadProfile, tariff: Tariff) -> float:
    """Cost of a power profile in cents: sum of price * power * step hours."""
    if y.role not in POWER_ROLES:
        raise ProfileError(f"energy_cost needs a power profile, got {y.role.value}")
    prices = tariff.prices(y.grid)
    return float(np.sum(prices * y.values) * y.grid.step_hours)
