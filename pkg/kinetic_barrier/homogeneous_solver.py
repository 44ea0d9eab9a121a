"""
Explicit time integration of d_t f = Q(f, f) on the velocity grid.

The collision rate is the angularly truncated sigma-representation operator in its
conservative weak form, whose mass, momentum and energy vanish to rounding. The optional
projection removes what rounding leaves.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import signal

from kinetic_barrier.carleman_operator import SigmaRule, q_sigma_grid, singular_cell_weights
from kinetic_barrier.collision_kernel import AngularKernel
from kinetic_barrier.core_model import GridDistribution, KernelParams, VelocityGrid
from kinetic_barrier.errors import BlowUp, OutOfRange
from kinetic_barrier.hydro_geometry import hydro_fields

STEPPERS = ("explicit_euler", "rk2")
BLOW_UP_LEVEL = 1e12


@dataclass(frozen=True)
class SolverConfig:
    """
    Attributes:
        dt (float | None): Time step; None picks the stable step scaled to divide t_end.
        theta_min (float): Angular truncation of the stepping operator.
        conservative_projection (bool): Remove the mass, momentum and energy of each rate.
        snapshot_times (tuple): Times at which snapshots are kept; empty keeps every step.
        moment_orders (tuple): Orders q of the recorded sup and L1 moments.
        defect_tolerance (float): Clipped mass, relative to M(0), above which a
            trajectory is rejected for verification.
        entropy_tolerance (float): Allowed entropy increase per step before a warning.
    """

    params: KernelParams
    grid: VelocityGrid
    t_end: float = 1.0
    dt: float | None = None
    theta_min: float = 0.1
    stepper: str = "explicit_euler"
    clip_negative: bool = True
    stability_factor: float = 0.2
    conservative_projection: bool = True
    sigma_rule: SigmaRule = field(default_factory=SigmaRule)
    snapshot_times: tuple[float, ...] = ()
    moment_orders: tuple[float, ...] = ()
    threads: int | None = None
    defect_tolerance: float = 1e-3
    entropy_tolerance: float = 1e-4

    def __post_init__(self):
        if self.t_end <= 0:
            raise OutOfRange("t_end", f"must be positive, got {self.t_end}")
        if self.dt is not None and self.dt <= 0:
            raise OutOfRange("dt", f"must be positive, got {self.dt}")
        if self.theta_min <= 0:
            raise OutOfRange("theta_min", f"the stepping operator needs an angular cutoff, got {self.theta_min}")
        if self.stepper not in STEPPERS:
            raise OutOfRange("stepper", f"expected one of {STEPPERS}, got {self.stepper!r}")
        if self.stability_factor <= 0:
            raise OutOfRange("stability_factor", f"must be positive, got {self.stability_factor}")
        if self.params.d != self.grid.d:
            raise OutOfRange("d", f"kernel dimension {self.params.d} differs from grid dimension {self.grid.d}")


# --- Time step ---


def collision_frequency(f: GridDistribution, p: KernelParams, theta_min: float) -> np.ndarray:
    """nu(v) = angular mass * int f(v_*) |v - v_*|^gamma dv_* at every node, by FFT convolution."""
    grid = f.grid
    n = grid.n_per_axis
    offsets = grid.h * (np.arange(2 * n - 1) - (n - 1))
    mesh = np.meshgrid(*([offsets] * grid.d), indexing="ij")
    dist = np.sqrt(sum(m**2 for m in mesh))
    with np.errstate(divide="ignore"):
        kernel = grid.cell_volume * dist**p.gamma
    if p.gamma < 0:
        kernel[(n - 1,) * grid.d] = singular_cell_weights(grid, grid.nodes[0], p.gamma)[0]
    conv = signal.fftconvolve(f.values, kernel, mode="same")
    return np.maximum(conv, 0.0).ravel() * AngularKernel(p, theta_min).angular_mass


def stable_time_step(f: GridDistribution, cfg: SolverConfig) -> float:
    """stability_factor / sup nu; t_end when f carries no collisions."""
    nu = float(np.max(collision_frequency(f, cfg.params, cfg.theta_min)))
    if nu <= 0:
        return cfg.t_end
    return cfg.stability_factor / nu


def resolve_time_step(f: GridDistribution, cfg: SolverConfig) -> float:
    """
    Raises:
        OutOfRange: When an explicit dt exceeds the stable step.
    """
    stable = stable_time_step(f, cfg)
    if cfg.dt is None:
        steps = max(1, math.ceil(cfg.t_end / stable))
        return cfg.t_end / steps
    if cfg.dt > stable * (1.0 + 1e-12):
        raise OutOfRange("dt", f"dt={cfg.dt:.4g} exceeds the stable step {stable:.4g}")
    return cfg.dt


# --- Collision rate ---


def moment_basis(grid: VelocityGrid) -> np.ndarray:
    """Collision invariants 1, v_1..v_d, |v|^2 at the nodes, shape (d+2, size)."""
    nodes = grid.nodes
    return np.vstack([np.ones(grid.size), nodes.T, grid.norms**2])


def conservative_projection(f: GridDistribution, rate: np.ndarray) -> np.ndarray:
    """
    rate - f * (Phi^T lambda) with lambda chosen so the projected rate has zero mass,
    momentum and energy.
    """
    grid = f.grid
    weights = f.flat * grid.cell_volume
    if not np.any(weights > 0):
        return rate
    phi = moment_basis(grid)
    system = (phi * weights) @ phi.T
    lam, *_ = np.linalg.lstsq(system, phi @ rate * grid.cell_volume, rcond=None)
    return rate - f.flat * (phi.T @ lam)


def collision_rate(f: GridDistribution, cfg: SolverConfig) -> np.ndarray:
    rate = q_sigma_grid(f, cfg.params, cfg.theta_min, rule=cfg.sigma_rule, threads=cfg.threads)
    if cfg.conservative_projection:
        rate = conservative_projection(f, rate)
    return rate


def _guard(values: np.ndarray, t: float | None = None) -> None:
    where = "" if t is None else f" at t={t:.4g}"
    if not np.all(np.isfinite(values)):
        raise BlowUp(f"non-finite values{where}")
    peak = float(np.max(np.abs(values)))
    if peak > BLOW_UP_LEVEL:
        raise BlowUp(f"|f| reached {peak:.4g}{where}")


def _nonnegative(f: GridDistribution, values: np.ndarray, cfg: SolverConfig) -> tuple[GridDistribution, float]:
    negative = values < 0
    if not np.any(negative):
        return f.with_values(values.reshape(f.grid.shape)), 0.0
    clipped = float(-values[negative].sum() * f.grid.cell_volume)
    if not cfg.clip_negative:
        raise BlowUp(f"step produced negative values (mass {clipped:.3g}) with clipping disabled")
    logging.warning(f"Solver: clipped {negative.sum()} negative nodes, mass {clipped:.3g}")
    return f.with_values(np.where(negative, 0.0, values).reshape(f.grid.shape)), clipped


def advance(f: GridDistribution, cfg: SolverConfig, dt: float) -> tuple[GridDistribution, float]:
    """
    One step of the configured scheme.

    Returns:
        tuple: The next distribution and the mass removed by clipping.

    Raises:
        BlowUp: On non-finite values or values above 1e12.
    """
    k1 = collision_rate(f, cfg)
    values = f.flat + dt * k1
    if cfg.stepper == "rk2":
        _guard(values)
        predictor = f.with_values(np.maximum(values, 0.0).reshape(f.grid.shape))
        k2 = collision_rate(predictor, cfg)
        values = f.flat + 0.5 * dt * (k1 + k2)
    _guard(values)
    return _nonnegative(f, values, cfg)


def step(f: GridDistribution, cfg: SolverConfig, dt: float | None = None) -> GridDistribution:
    """f + dt Q(f, f) (or the RK2 update), with negative values clipped when configured."""
    dt = resolve_time_step(f, cfg) if dt is None else dt
    return advance(f, cfg, dt)[0]


# --- Trajectories ---


def pointwise_moment(f: GridDistribution, q: float) -> float:
    """sup_v f(v) (1+|v|)^q over the nodes."""
    return float(np.max(f.flat * (1.0 + f.grid.norms) ** q))


def l1_moment(f: GridDistribution, q: float) -> float:
    return float(f.flat @ (1.0 + f.grid.norms) ** q * f.grid.cell_volume)


@dataclass
class MomentTrace:
    orders: tuple[float, ...]
    times: list[float] = field(default_factory=list)
    mass: list[float] = field(default_factory=list)
    momentum: list[np.ndarray] = field(default_factory=list)
    energy: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    clipped: list[float] = field(default_factory=list)
    sup_moments: dict[float, list[float]] = field(default_factory=dict)
    l1_moments: dict[float, list[float]] = field(default_factory=dict)

    def record(self, t: float, f: GridDistribution, clipped: float = 0.0) -> None:
        state = hydro_fields(f)
        self.times.append(float(t))
        self.mass.append(state.mass)
        self.momentum.append(f.flat @ f.grid.nodes * f.grid.cell_volume)
        self.energy.append(state.energy)
        self.entropy.append(state.entropy)
        self.clipped.append(clipped)
        for q in self.orders:
            self.sup_moments.setdefault(q, []).append(pointwise_moment(f, q))
            self.l1_moments.setdefault(q, []).append(l1_moment(f, q))

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times, "mass": self.mass, "energy": self.energy, "entropy": self.entropy})
        momentum = np.array(self.momentum)
        for i in range(momentum.shape[1] if momentum.ndim == 2 else 0):
            frame[f"momentum_{i + 1}"] = momentum[:, i]
        frame["clipped"] = self.clipped
        for q in self.orders:
            frame[f"sup_moment_{q:g}"] = self.sup_moments[q]
            frame[f"l1_moment_{q:g}"] = self.l1_moments[q]
        return frame


@dataclass
class SimulationResult:
    trace: MomentTrace
    snapshots: list[tuple[float, GridDistribution]]
    dt: float
    clipped_total: float
    entropy_violations: int
    accepted: bool

    @property
    def final(self) -> GridDistribution:
        return self.snapshots[-1][1]


def simulate(cfg: SolverConfig, f0: GridDistribution) -> SimulationResult:
    """
    Runs to exactly t_end, recording the moment trace at every step.

    Snapshots are kept at t = 0, t_end and the first step at or after each configured
    snapshot time (every step when none are configured).
    """
    if f0.grid != cfg.grid:
        raise OutOfRange("grid", "initial datum lives on a different grid than the solver")
    dt = resolve_time_step(f0, cfg)
    # Note: an explicit dt that does not divide t_end gets a shorter last step
    n_steps = max(1, math.ceil(cfg.t_end / dt - 1e-9))
    logging.info(f"Solver: {n_steps} {cfg.stepper} steps of dt={dt:.4g} to t={cfg.t_end:g}")

    trace = MomentTrace(orders=tuple(cfg.moment_orders))
    trace.record(0.0, f0)
    snapshots = [(0.0, f0)]
    pending = sorted(t for t in cfg.snapshot_times if t > 0)
    mass0 = trace.mass[0]
    clipped_total = 0.0
    violations = 0

    f = f0
    t = 0.0
    for k in range(1, n_steps + 1):
        t_next = cfg.t_end if k == n_steps else k * dt
        try:
            f, clipped = advance(f, cfg, t_next - t)
        except BlowUp as e:
            logging.error(f"Solver: blow-up in step {k}: {e}")
            raise
        t = t_next
        clipped_total += clipped
        trace.record(t, f, clipped)
        if trace.entropy[-1] > trace.entropy[-2] + cfg.entropy_tolerance:
            violations += 1
            logging.warning(f"Solver: entropy increased by {trace.entropy[-1] - trace.entropy[-2]:.3g} at t={t:.4g}")

        keep = not cfg.snapshot_times or k == n_steps
        while pending and t >= pending[0] - 1e-12 * cfg.t_end:
            pending.pop(0)
            keep = True
        if keep:
            snapshots.append((t, f))

    accepted = clipped_total <= cfg.defect_tolerance * mass0
    if not accepted:
        logging.warning(f"Solver: clipped mass {clipped_total:.3g} exceeds {cfg.defect_tolerance:g} M(0); trajectory rejected")
    drift = abs(trace.mass[-1] - mass0) / mass0 if mass0 > 0 else 0.0
    logging.info(f"Solver: done, relative mass drift {drift:.3g}, {violations} entropy increases")
    return SimulationResult(trace, snapshots, dt, clipped_total, violations, accepted)


# --- Snapshot files ---


def write_snapshot(path: str | Path, t: float, f: GridDistribution) -> Path:
    """CSV of (node_index, v1..vd, f) under a header of '# key=value' lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    grid = f.grid
    frame = pd.DataFrame(grid.nodes, columns=[f"v{i + 1}" for i in range(grid.d)])
    frame.insert(0, "node_index", np.arange(grid.size))
    frame["f"] = f.flat
    with open(path, "w") as out:
        out.write(f"# d={grid.d}\n# r_max={grid.r_max!r}\n# n_per_axis={grid.n_per_axis}\n# t={float(t)!r}\n")
        frame.to_csv(out, index=False)
    return path


def read_snapshot(path: str | Path, **kwargs) -> tuple[float, GridDistribution]:
    """
    Raises:
        OutOfRange: When the header is incomplete or the rows do not cover the grid.
    """
    header = {}
    with open(path, "r") as src:
        for line in src:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    missing = {"d", "r_max", "n_per_axis", "t"} - header.keys()
    if missing:
        raise OutOfRange("snapshot", f"{path}: header lacks {sorted(missing)}")
    grid = VelocityGrid(d=int(header["d"]), r_max=float(header["r_max"]), n_per_axis=int(header["n_per_axis"]))
    frame = pd.read_csv(path, comment="#").sort_values("node_index")
    if len(frame) != grid.size or not np.array_equal(frame["node_index"].to_numpy(), np.arange(grid.size)):
        raise OutOfRange("snapshot", f"{path}: expected {grid.size} nodes, found {len(frame)}")
    values = frame["f"].to_numpy(dtype=float).reshape(grid.shape)
    return float(header["t"]), GridDistribution(grid=grid, values=values, **kwargs)


def write_trajectory(directory: str | Path, snapshots: Sequence[tuple[float, GridDistribution]], stem: str = "snapshot") -> list[Path]:
    directory = Path(directory)
    return [write_snapshot(directory / f"{stem}-{i:04d}.csv", t, f) for i, (t, f) in enumerate(snapshots)]
