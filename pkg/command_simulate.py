import logging

from evaluator_utils import RunContext
from kinetic_barrier.homogeneous_solver import simulate, write_trajectory
from kinetic_barrier.report_store import ReportStore


def run_simulate(ctx: RunContext, args, store: ReportStore) -> int:
    """
    Integrates the configured fixture to t_end; writes the moment trace, the snapshots and a
    run summary.
    """
    cfg = ctx.solver_config()
    result = simulate(cfg, ctx.f)
    store.add_table(result.trace.to_frame())
    paths = write_trajectory(store.output_dir / f"{store.stem}-snapshots", result.snapshots)
    logging.info(f"App: Wrote {len(paths)} snapshots")
    mass = result.trace.mass
    store.add_json(
        {
            "dt": result.dt,
            "steps": len(result.trace.times) - 1,
            "clipped_total": result.clipped_total,
            "entropy_violations": result.entropy_violations,
            "accepted": result.accepted,
            "relative_mass_drift": abs(mass[-1] - mass[0]) / mass[0] if mass[0] > 0 else 0.0,
            "snapshots": [p.name for p in paths],
        },
        "summary",
    )
    return 0
