"""
Hydrodynamic fields, the mass core of a distribution and the cone of non-degeneracy.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import special

from kinetic_barrier.collision_kernel import PlaneRule, kernel_Kf_many
from kinetic_barrier.core_model import (
    GridDistribution,
    HydroBounds,
    HydroState,
    KernelParams,
    VelocityGrid,
    ball_volume,
    require_evaluation_dimension,
)
from kinetic_barrier.errors import EmptyCone, NoCore

CORE_GUARD = 1.0
CERTIFICATE_RADII = (0.5, 1.0, 2.0)


def hydro_fields(f: GridDistribution, bounds: HydroBounds | None = None) -> HydroState:
    """Mass, energy and entropy by node sums, with 0 ln 0 = 0."""
    grid = f.grid
    values = f.flat
    mass = float(values.sum() * grid.cell_volume)
    energy = float(values @ grid.norms**2 * grid.cell_volume)
    entropy = float(special.xlogy(values, values).sum() * grid.cell_volume)
    return HydroState(mass=mass, energy=energy, entropy=entropy, bounds=bounds)


# --- Mass core ---


@dataclass(frozen=True, eq=False)
class MassCore:
    """Nodes with f >= c0 and |v| <= R0, and their total cell measure."""

    grid: VelocityGrid
    c0: float
    R0: float
    node_set: np.ndarray
    measure: float
    mu_target: float

    @property
    def points(self) -> np.ndarray:
        return self.grid.nodes[self.node_set]

    def contains(self, v) -> bool:
        """True iff the grid node nearest to v belongs to the core."""
        return self.grid.nearest_index(v) in set(self.node_set.tolist())


def core_target(bounds: HydroBounds, guard: float = CORE_GUARD) -> float:
    """m0 / (4 (1 + E0/m0 + guard)): a floor on the measure of the core."""
    return bounds.m0 / (4.0 * (1.0 + bounds.E0 / bounds.m0 + guard))


def mass_core(f: GridDistribution, state: HydroState) -> MassCore:
    """
    Finds the core on the ladder R0 = 2^j (ascending, from 2^-6) and c0 = 2^-k (descending).

    Returns:
        MassCore: The first (R0, c0) pair whose core measure reaches the target.

    Raises:
        NoCore: When the hydrodynamic bounds fail or the ladder is exhausted.
    """
    if state.bounds is None or not state.within_bounds:
        raise NoCore(
            f"hydrodynamic fields M={state.mass:.4g}, E={state.energy:.4g}, H={state.entropy:.4g} "
            f"violate the bounds {state.bounds}"
        )
    grid = f.grid
    values = f.flat
    target = core_target(state.bounds)
    peak = float(values.max())
    if peak <= 0:
        raise NoCore("distribution vanishes identically")

    # Note: radii stop at the grid corner and thresholds start at the first power of two below the peak
    j_max = math.ceil(math.log2(grid.r_max * math.sqrt(grid.d)))
    k_min = -math.ceil(math.log2(peak)) if peak > 1 else 0
    for j in range(-6, j_max + 1):
        radius = 2.0**j
        inside = grid.norms <= radius
        if not np.any(inside):
            continue
        for k in range(k_min, 61):
            threshold = 2.0**-k
            nodes = np.flatnonzero(inside & (values >= threshold))
            measure = len(nodes) * grid.cell_volume
            if measure >= target:
                nodes.setflags(write=False)
                logging.info(
                    f"Geometry: mass core R0={radius:g}, c0={threshold:g}, measure={measure:.4g} (target {target:.4g})"
                )
                return MassCore(grid, threshold, radius, nodes, measure, target)
    raise NoCore(f"no (R0, c0) on the ladder reaches the core measure {target:.4g}")


# --- Cone of non-degeneracy ---


def antipodal_directions(d: int, n_dir: int) -> np.ndarray:
    """
    n_dir unit vectors, the second half being the negatives of the first.

    d = 2 uses uniform angles, d = 3 a Fibonacci lattice on the upper half sphere.
    """
    require_evaluation_dimension(d)
    half = n_dir // 2
    if d == 2:
        phi = math.pi * np.arange(half) / half
        upper = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    else:
        i = np.arange(half) + 0.5
        z = i / half
        phi = math.pi * (3.0 - math.sqrt(5.0)) * i
        ring = np.sqrt(1.0 - z**2)
        upper = np.stack([ring * np.cos(phi), ring * np.sin(phi), z], axis=-1)
    return np.concatenate([upper, -upper])


@dataclass(frozen=True, eq=False)
class NondegeneracyCone:
    """
    Directions along which K_f(v, v + r omega) has its lower bound.

    Attributes:
        v (np.ndarray): Apex.
        directions (np.ndarray): The full direction set, shape (n_dir, d).
        integrals (np.ndarray): Hyperplane integrals of the core indicator per direction.
        accepted (np.ndarray): Boolean mask of directions in the cone.
        threshold (float): Acceptance level lambda.
        C0 (float): Largest |v . omega| over accepted directions.
        certificates (dict): Radius -> min over accepted omega of
            K_f(v, v + r omega) r^(d+2s) / (1+|v|)^(1+2s+gamma).
    """

    v: np.ndarray
    directions: np.ndarray
    integrals: np.ndarray
    accepted: np.ndarray
    threshold: float
    C0: float
    certificates: dict[float, float] = field(default_factory=dict)

    @property
    def accepted_directions(self) -> np.ndarray:
        return self.directions[self.accepted]

    @property
    def fraction(self) -> float:
        return float(self.accepted.mean())

    def measure_profile(self, r: float) -> float:
        """|cone intersected with the ball B_r|."""
        d = self.directions.shape[1]
        return self.fraction * ball_volume(d) * r**d

    def scaled_measure(self, r: float) -> float:
        """|cone intersected with B_r| (1 + |v|) / r^d, bounded above and below along |v|."""
        d = self.directions.shape[1]
        return self.measure_profile(r) * (1.0 + float(np.linalg.norm(self.v))) / r**d


def nondegeneracy_cone(
    f: GridDistribution,
    core: MassCore,
    v,
    p: KernelParams,
    *,
    n_dir: int = 256,
    slab: float | None = None,
    certificate_radii: Sequence[float] = CERTIFICATE_RADII,
    rule: PlaneRule | None = None,
) -> NondegeneracyCone:
    """
    Integrates the core indicator over the hyperplane through v orthogonal to each direction.

    The hyperplane integral is approximated by the core cells within a slab of width
    slab (default h) around the hyperplane, divided by that width. Directions whose integral
    reaches half the median positive value form the cone.

    Raises:
        EmptyCone: When no direction passes.
    """
    v = np.asarray(v, dtype=float)
    d = p.d
    grid = f.grid
    tau = grid.h if slab is None else slab
    directions = antipodal_directions(d, n_dir)
    offsets = core.points - v
    heights = np.abs(offsets @ directions.T)
    integrals = (heights <= 0.5 * tau).sum(axis=0) * grid.cell_volume / tau

    positive = integrals[integrals > 0]
    if len(positive) == 0:
        logging.warning(f"Geometry: no hyperplane through |v|={np.linalg.norm(v):.4g} meets the core")
        raise EmptyCone(f"no direction meets the core from |v|={np.linalg.norm(v):.4g}")
    threshold = 0.5 * float(np.median(positive))
    accepted = integrals >= threshold
    accepted_dirs = directions[accepted]
    c0_band = float(np.max(np.abs(accepted_dirs @ v)))

    certificates: dict[float, float] = {}
    scale = (1.0 + float(np.linalg.norm(v))) ** (1.0 + 2.0 * p.s + p.gamma)
    for r in certificate_radii:
        kern = kernel_Kf_many(f, v, r * accepted_dirs, p, rule=rule)
        certificates[float(r)] = float(np.min(kern.values) * r ** (d + 2.0 * p.s) / scale)
    logging.debug(
        f"Geometry: cone at |v|={np.linalg.norm(v):.4g}: {accepted.sum()}/{n_dir} directions, C0={c0_band:.4g}"
    )
    return NondegeneracyCone(
        v=v,
        directions=directions,
        integrals=integrals,
        accepted=accepted,
        threshold=threshold,
        C0=c0_band,
        certificates=certificates,
    )


# --- Non-concentration ---


def concentration_modulus(area) -> np.ndarray:
    """ln(1 + A) + 1/ln(1/A), the second term only for A < 1."""
    area = np.asarray(area, dtype=float)
    small = area < 1.0
    with np.errstate(divide="ignore"):
        correction = np.where(small, 1.0 / np.log(1.0 / np.where(small, area, 0.5)), 0.0)
    return np.log1p(area) + correction


def non_concentration_profile(f: GridDistribution, areas: Sequence[float], bounds: HydroBounds | None = None) -> pd.DataFrame:
    """
    Largest mass of f carried by a set of measure A, against the modulus ln(1+A) + 1/ln(1/A).

    The extremal set takes the largest node values first; the last cell is taken fractionally.
    """
    grid = f.grid
    ranked = np.sort(f.flat)[::-1] * grid.cell_volume
    cumulative = np.concatenate([[0.0], np.cumsum(ranked)])
    rows = []
    for area in areas:
        cells = area / grid.cell_volume
        whole = min(int(cells), len(ranked))
        mass = cumulative[whole]
        if whole < len(ranked):
            mass += (cells - whole) * ranked[whole]
        modulus = float(concentration_modulus(area))
        rows.append({"area": float(area), "max_mass": float(mass), "modulus": modulus, "implied_constant": mass / modulus})
    frame = pd.DataFrame(rows)
    if bounds is not None:
        frame["mass_bound"] = bounds.M0
    return frame
