"""Initial-data shapes."""
from __future__ import annotations

import numpy as np

from .exponents import ProblemParams, derive_exponents
from .grid import Field, Grid


def gaussian_bump(grid: Grid, mass: float = 1.0, width: float = 1.0) -> Field:
    """Centered Gaussian with the given discrete mass."""
    vals = np.exp(-grid.radius ** 2 / (2 * width ** 2))
    vals *= mass / (vals.sum() * grid.cell_volume)
    return Field(grid, vals)


def power_profile(grid: Grid, decay: float, amplitude: float = 1.0, core: float = 1.0) -> Field:
    """amplitude * (1 + |x|^2 / core^2)^(-decay/2): bounded, ~|x|^-decay at infinity."""
    return Field(grid, amplitude * (1 + (grid.radius / core) ** 2) ** (-decay / 2))


def power_cell_averages(grid: Grid, decay: float) -> Field:
    """Exact cell averages of |x|^-decay (decay < dim, so the center cell stays finite).

    Averaging preserves the mass of every cell, so the discrete datum carries
    no spurious core mass that would slow the approach to self-similar decay.
    """
    if not 0 <= decay < grid.dim:
        raise ValueError(f"decay must lie in [0, dim), got {decay}")
    h = grid.h
    if grid.dim == 1:
        x = grid.axis
        prim = lambda s: np.sign(s) * np.abs(s) ** (1 - decay) / (1 - decay)
        return Field(grid, (prim(x + h / 2) - prim(x - h / 2)) / h)
    # 2D: tensor midpoint rule on an even subgrid, which never samples the origin
    m = 16
    off = (np.arange(m) + 0.5) / m - 0.5
    c = grid.cell_centers
    acc = np.zeros(grid.size)
    for a in off:
        for b in off:
            acc += np.hypot(c[:, 0] + a * h, c[:, 1] + b * h) ** (-decay)
    return Field(grid, acc / m ** 2)


def critical_profile(grid: Grid, params: ProblemParams, component: str = "u",
                     amplitude: float = 1.0, op=None, smoothing_time: float = 1.0) -> Field:
    """Datum on the borderline of weak-L^{r_star}: |x|^(-N/r_star), heat-smoothed for time 1.

    The smoothed datum is S(1)|x|^-d, so its heat flow is S(t + 1)|x|^-d and
    decays like (t + 1)^(-gamma_i), the rate allowed for small global solutions.
    Without `op` the raw cell averages are returned.
    """
    rep = derive_exponents(params)
    r_star = rep.r1_star if component == "u" else rep.r2_star
    base = power_cell_averages(grid, grid.dim / r_star)
    if op is not None and smoothing_time > 0:
        from .semigroup import apply_semigroup
        base = apply_semigroup(op, base, smoothing_time, steps=200)
    return Field(grid, amplitude * base.values)


def shape_by_name(name: str, grid: Grid, params: ProblemParams, component: str,
                  width: float = 1.0, op=None) -> Field:
    if name == "gaussian":
        return gaussian_bump(grid, 1.0, width)
    if name == "critical":
        return critical_profile(grid, params, component, op=op)
    if name == "delta":
        vals = np.zeros(grid.size)
        vals[grid.center_index] = 1.0 / grid.cell_volume
        return Field(grid, vals)
    raise ValueError(f"unknown data shape {name!r} (gaussian, critical, delta)")


SHAPES = ("gaussian", "critical", "delta")
