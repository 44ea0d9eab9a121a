import logging
import math

import numpy as np
import pandas as pd

from evaluator_utils import RunContext
from kinetic_barrier.carleman_operator import q_ns, q_s_carleman, q_s_reverse, q_sigma_oracle, split_operator
from kinetic_barrier.errors import ConfigError, EmptyCone, NoCore
from kinetic_barrier.hydro_geometry import hydro_fields, mass_core, non_concentration_profile, nondegeneracy_cone
from kinetic_barrier.report_store import ReportStore

NON_CONCENTRATION_AREAS = (0.01, 0.1, 0.5, 1.0, 4.0)


def parse_velocity(text: str, d: int) -> np.ndarray:
    """
    Raises:
        ConfigError: When the text is not d comma separated numbers.
    """
    try:
        v = np.array([float(x) for x in text.split(",")], dtype=float)
    except ValueError:
        raise ConfigError(f"--v must be comma separated numbers, got {text!r}") from None
    if v.shape != (d,):
        raise ConfigError(f"--v needs {d} components, got {len(v)}")
    return v


def run_eval_operator(ctx: RunContext, args, store: ReportStore) -> int:
    """
    Evaluates Q(f, g) at one velocity in every representation, with the good/bad split,
    the sigma oracle and the geometry of f around v.
    """
    p, f = ctx.params, ctx.f
    v = parse_velocity(args.v, p.d)
    settings = ctx.settings
    theta_min = settings.get_float("verify.theta_min")
    oracle_theta = settings.get_float("theta_min")
    barrier = ctx.barrier()
    g = f if args.g == "f" else barrier.at(settings.get_float("verify.time"))
    logging.info(f"App: Evaluating the collision operator at v={v.tolist()} against g={args.g}")

    row = {f"v{i + 1}": float(x) for i, x in enumerate(v)}
    forward = q_s_carleman(f, g, v, p, ctx.pv, theta_min=theta_min)
    reverse = q_s_reverse(f, g, v, p, ctx.pv, theta_min=theta_min)
    non_singular = q_ns(f, v, p, theta_min=theta_min)
    row.update(
        q_s_forward=forward.value,
        q_s_forward_error=forward.error,
        q_s_reverse=reverse.value,
        q_s_reverse_error=reverse.error,
        q_ns=non_singular.value,
        q_ns_error=non_singular.error,
    )
    if np.linalg.norm(v) > 0:
        split = split_operator(f, g, v, barrier.q, p, ctx.pv, theta_min=theta_min)
        row.update(split.to_dict())
        row["recombines"] = split.recombines
    if args.g == "f":
        oracle = q_sigma_oracle(f, v, p, oracle_theta)
        row.update(oracle_theta_min=oracle_theta, q_sigma=oracle.value, q_sigma_error=oracle.error)

    state = hydro_fields(f, ctx.bounds)
    row.update(mass=state.mass, energy=state.energy, entropy=state.entropy, within_bounds=state.within_bounds)
    try:
        core = mass_core(f, state)
        cone = nondegeneracy_cone(f, core, v, p)
        row.update(core_R0=core.R0, core_c0=core.c0, core_measure=core.measure, cone_fraction=cone.fraction, cone_C0=cone.C0)
        row.update({f"cone_certificate_{r:g}": c for r, c in cone.certificates.items()})
    except (NoCore, EmptyCone) as e:
        logging.warning(f"App: No geometry at v: {e}")
        row.update(core_R0=math.nan, cone_fraction=math.nan)

    store.add_table(pd.DataFrame([row]))
    store.add_table(non_concentration_profile(f, NON_CONCENTRATION_AREAS, ctx.bounds), "nonconcentration")
    return 0
