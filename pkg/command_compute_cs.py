import logging

import pandas as pd

from evaluator_utils import RunContext
from kinetic_barrier.collision_kernel import cancellation_constant
from kinetic_barrier.report_store import ReportStore


def run_compute_cs(ctx: RunContext, args, store: ReportStore) -> int:
    """
    Writes the cancellation constant C_S and its quadrature error as a one-row table.
    """
    p = ctx.params
    theta_min = args.theta_min
    logging.info(f"App: Computing C_S for d={p.d}, gamma={p.gamma}, s={p.s}, theta_min={theta_min}")
    cs = cancellation_constant(p, theta_min)
    frame = pd.DataFrame(
        [{"d": p.d, "gamma": p.gamma, "s": p.s, "theta_min": theta_min, "c_s": cs.value, "error": cs.quadrature_error}]
    )
    store.add_table(frame)
    logging.info(f"App: C_S = {cs.value:.12g} +/- {cs.quadrature_error:.2g}")
    return 0
