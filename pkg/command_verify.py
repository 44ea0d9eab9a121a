import logging
from pathlib import Path

import pandas as pd

from evaluator_utils import RunContext
from kinetic_barrier.barrier_verifier import FAIL, FROZEN_FILE, apply_frozen, proposition_ids, verify
from kinetic_barrier.report_store import ReportStore


def run_verify(ctx: RunContext, args, store: ReportStore) -> int:
    """
    Runs one proposition check (or all applicable ones) and writes one table per check, the
    combined table and a summary with the fitted slopes.

    Returns:
        int: 1 when any check fails, 0 otherwise.
    """
    setup = ctx.verification_setup()
    ids = proposition_ids(setup) if args.prop == "all" else [args.prop]
    logging.info(f"App: Verifying {', '.join(ids)}")
    reports = [verify(setup, prop_id) for prop_id in ids]
    apply_frozen(reports, Path(ctx.output_dir) / FROZEN_FILE)

    frames = [report.to_frame() for report in reports if report.rows]
    if frames:
        store.add_table(pd.concat(frames, ignore_index=True))
    for report in reports:
        if report.rows:
            store.add_table(report.to_frame(), report.proposition_id)
    store.add_json({report.proposition_id: report.summary() for report in reports}, "summary")

    failed = [report.proposition_id for report in reports if report.verdict == FAIL]
    for report in reports:
        logging.info(f"App: {report.proposition_id}: {report.verdict}")
    if failed:
        logging.error(f"App: Verification failed for {', '.join(failed)}")
        return 1
    return 0
