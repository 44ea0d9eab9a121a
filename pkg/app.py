import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from command_compute_cs import run_compute_cs
from command_eval_operator import run_eval_operator
from command_scan import BARRIER_CHOICES, run_scan
from command_simulate import run_simulate
from command_verify import run_verify
from evaluator_utils import build_run_context
from kinetic_barrier.barrier_verifier import PROPOSITIONS
from kinetic_barrier.errors import KineticBarrierError, NumericalFailure
from kinetic_barrier.report_store import ReportStore
from kinetic_barrier.settings import Settings
from utils import LOG_LEVELS, configure_logging, get_config

# --- Exit codes ---

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = {
    "compute-cs": run_compute_cs,
    "eval-operator": run_eval_operator,
    "verify": run_verify,
    "simulate": run_simulate,
    "scan": run_scan,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kinetic-barrier", description="Barrier checks for the non-cutoff Boltzmann collision operator.")
    parser.add_argument("--config", help="run configuration file (key = value lines)")
    parser.add_argument("--output-dir", help="directory for tables and manifests")
    parser.add_argument("--log-level", choices=LOG_LEVELS, help="overrides KINETIC_BARRIER_LOG_LEVEL")
    parser.add_argument("--threads", type=int, help="overrides KINETIC_BARRIER_THREADS")
    commands = parser.add_subparsers(dest="command", required=True)

    compute_cs = commands.add_parser("compute-cs", help="cancellation constant C_S")
    compute_cs.add_argument("--theta-min", type=float, default=0.0)

    eval_operator = commands.add_parser("eval-operator", help="Q(f, g) at one velocity")
    eval_operator.add_argument("--v", required=True, help="velocity as comma separated components")
    eval_operator.add_argument("--g", choices=("f", "barrier"), default="f", help="second argument of Q")

    verify = commands.add_parser("verify", help="check proposition bounds")
    verify.add_argument(
        "--prop",
        required=True,
        help=f"one of {', '.join(PROPOSITIONS)} (optionally -corrected), a number such as 3.1 or 5.4, or all",
    )

    commands.add_parser("simulate", help="integrate the homogeneous equation")

    scan = commands.add_parser("scan", help="contact scan of a trajectory against a barrier")
    scan.add_argument("--barrier", required=True, choices=BARRIER_CHOICES)
    scan.add_argument("--snapshots", help="directory of snapshot files; a fresh simulation otherwise")
    return parser


def run(argv: list[str] | None = None) -> int:
    """
    Runs one command and returns its exit code.

    Returns:
        int: 0 on success, 1 on a failed verification or a barrier contact, 2 for configuration
            and domain errors, 3 for numerical failures.
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    load_dotenv()
    configure_logging(args.log_level or os.getenv("KINETIC_BARRIER_LOG_LEVEL", "INFO"))
    logging.info("App: Loaded environment variables.")

    store = None
    settings = None
    try:
        config = get_config(logging)
        if args.threads is not None:
            config.threads = args.threads
        settings = Settings.load(args.config) if args.config else Settings()
        ctx = build_run_context(settings, config)
        if args.output_dir:
            ctx.output_dir = args.output_dir
        store = ReportStore(ctx.output_dir, args.command)
        code = COMMANDS[args.command](ctx, args, store)
    except NumericalFailure as e:
        logging.error(f"App: Numerical failure: {e}", exc_info=True)
        code = EXIT_NUMERICAL
    except (KineticBarrierError, FileNotFoundError) as e:
        logging.error(f"App: {type(e).__name__}: {e}")
        code = EXIT_CONFIG

    if store is not None:
        store.write_manifest(settings.to_dict(), argv, code)
    return code


if __name__ == "__main__":
    sys.exit(run())
