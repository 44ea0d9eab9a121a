import logging
from pathlib import Path

import pandas as pd

from evaluator_utils import RunContext
from kinetic_barrier.barrier_verifier import PRESETS, barrier_preset, contact_scan, linfty_schedule
from kinetic_barrier.core_model import BarrierForm
from kinetic_barrier.errors import ConfigError, PreconditionViolated
from kinetic_barrier.homogeneous_solver import read_snapshot, simulate
from kinetic_barrier.report_store import ReportStore

BARRIER_CHOICES = ("linfty", *PRESETS, *(form.value for form in BarrierForm))


def load_trajectory(ctx: RunContext, snapshots: str | None):
    """Snapshots from a directory of snapshot files, or a fresh solver run."""
    if snapshots:
        files = sorted(Path(snapshots).glob("*.csv"))
        if not files:
            raise ConfigError(f"no snapshot files in {snapshots}")
        interpolation = ctx.settings.get_str("interpolation")
        trajectory = sorted((read_snapshot(path, interpolation=interpolation) for path in files), key=lambda item: item[0])
        logging.info(f"App: Loaded {len(trajectory)} snapshots from {snapshots}")
        return trajectory
    result = simulate(ctx.solver_config(), ctx.f)
    if not result.accepted:
        raise PreconditionViolated(f"trajectory rejected: clipped mass {result.clipped_total:.3g}")
    return result.snapshots


def run_scan(ctx: RunContext, args, store: ReportStore) -> int:
    """
    Replays the contact argument on a trajectory against the chosen barrier.

    Returns:
        int: 1 when the trajectory touches the barrier, 0 otherwise.
    """
    settings = ctx.settings
    p = ctx.params
    trajectory = load_trajectory(ctx, args.snapshots)
    name = args.barrier
    if name == "linfty":
        t_window = (0.05, settings.get_float("solver.t_end"))
        barrier = linfty_schedule(p, ctx.bounds, trajectory, t_window=t_window)
        trajectory = [(t, f) for t, f in trajectory if t_window[0] <= t <= t_window[1]]
    elif name in PRESETS:
        barrier = barrier_preset(
            name,
            p,
            settings.get_float("barrier.q"),
            settings.get_float("barrier.n0"),
            settings.get_float("barrier.eps0"),
            eta=settings.get_float("barrier.eta"),
            q0=settings.get_float("barrier.q0", p.d + 2.0),
            eps_rate=settings.get_float("barrier.eps_rate"),
        )
    else:
        barrier = ctx.barrier(name)

    scan = contact_scan(trajectory, barrier, p, pv=ctx.pv, theta_min=settings.get_float("verify.theta_min"))
    row = {"barrier": name, "q": barrier.q, "n0": barrier.n_schedule.n0, "beta": barrier.n_schedule.beta, **scan.to_dict()}
    store.add_table(pd.DataFrame([row]))
    if scan.contact:
        logging.error(f"App: Trajectory touches the {name} barrier at t={scan.t0:g}")
        return 1
    logging.info(f"App: No contact with the {name} barrier, margin {scan.margin:.4g}")
    return 0
