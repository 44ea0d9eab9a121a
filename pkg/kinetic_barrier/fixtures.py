"""
Standard sample distributions used by the verifier, the solver and the tests.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from kinetic_barrier.core_model import GridDistribution, VelocityGrid
from kinetic_barrier.errors import ConfigError


def gaussian(points: np.ndarray, mass: float = 1.0, temperature: float = 1.0, center=None) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    d = points.shape[-1]
    shift = points if center is None else points - np.asarray(center, dtype=float)
    r2 = np.sum(shift**2, axis=-1)
    return mass / (2.0 * math.pi * temperature) ** (d / 2) * np.exp(-r2 / (2.0 * temperature))


def maxwellian(grid: VelocityGrid, mass: float = 1.0, temperature: float = 1.0, center=None, **kwargs) -> GridDistribution:
    return GridDistribution.from_function(grid, lambda v: gaussian(v, mass, temperature, center), **kwargs)


def displaced_bump(
    grid: VelocityGrid,
    mass: float = 1.0,
    temperature: float = 1.0,
    bump_mass: float = 0.05,
    offset: float = 1.0,
    width: float = 0.5,
    **kwargs,
) -> GridDistribution:
    """Maxwellian plus a small Gaussian bump displaced along the first axis."""
    center = np.zeros(grid.d)
    center[0] = offset

    def density(v):
        return gaussian(v, mass, temperature) + gaussian(v, bump_mass, width**2, center)

    return GridDistribution.from_function(grid, density, **kwargs)


def mixture(grid: VelocityGrid, mass: float = 1.0, temperature: float = 1.0, separation: float = 2.0, **kwargs) -> GridDistribution:
    """Two Maxwellians of half the mass each, centred at +/- separation along the first axis."""
    center = np.zeros(grid.d)
    center[0] = separation

    def density(v):
        return gaussian(v, mass / 2, temperature, center) + gaussian(v, mass / 2, temperature, -center)

    return GridDistribution.from_function(grid, density, **kwargs)


def heavy_tail(
    grid: VelocityGrid,
    mass: float = 1.0,
    temperature: float = 1.0,
    exponent: float | None = None,
    amplitude: float = 0.01,
    **kwargs,
) -> GridDistribution:
    """Maxwellian plus amplitude*(1+|v|)^-exponent; exponent defaults to d + 2.5."""
    p = grid.d + 2.5 if exponent is None else exponent

    def density(v):
        r = np.linalg.norm(v, axis=-1)
        return gaussian(v, mass, temperature) + amplitude * (1.0 + r) ** (-p)

    return GridDistribution.from_function(grid, density, **kwargs)


def cold_core(grid: VelocityGrid, mass: float = 1.0, temperature: float = 0.0025, **kwargs) -> GridDistribution:
    """
    Narrow Maxwellian; its mass sits in the few cells around the origin.

    The core is usually narrower than a cell, so the nodal values are rescaled to carry
    exactly the requested mass on the grid.
    """
    values = gaussian(grid.nodes, 1.0, temperature)
    values = values * (mass / (values.sum() * grid.cell_volume))
    return GridDistribution(grid=grid, values=values.reshape(grid.shape), **kwargs)


def vacuum(grid: VelocityGrid, mass: float = 1e-6, temperature: float = 1.0, **kwargs) -> GridDistribution:
    """Almost no mass at all; expected to fail the mass-core search."""
    return maxwellian(grid, mass=mass, temperature=temperature, **kwargs)


FIXTURES: dict[str, Callable[..., GridDistribution]] = {
    "maxwellian": maxwellian,
    "bump": displaced_bump,
    "mixture": mixture,
    "heavy_tail": heavy_tail,
    "cold": cold_core,
    "vacuum": vacuum,
}


def build_fixture(name: str, grid: VelocityGrid, **kwargs) -> GridDistribution:
    try:
        factory = FIXTURES[name]
    except KeyError:
        raise ConfigError(f"unknown fixture {name!r}, expected one of {sorted(FIXTURES)}") from None
    return factory(grid, **kwargs)
