"""
Numerical checks of the barrier inequalities.

Every check evaluates one side of a claimed bound (a good or bad term of the split, the
inner hyperplane integral, or Q_ns) on concrete distributions, divides by the right-hand
side without its constant and reports the implied constants. A claim passes when it has
the right sign at every sample and the implied constants stay within SPREAD_LIMIT of each
other.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from kinetic_barrier.carleman_operator import (
    PVPolicy,
    SplitResult,
    inner_hyperplane_integral,
    q_ns,
    q_ns_pieces,
    split_operator,
)
from kinetic_barrier.collision_kernel import PlaneRule
from kinetic_barrier.core_model import (
    Barrier,
    BarrierForm,
    BarrierSlice,
    EpsSchedule,
    GridDistribution,
    HydroBounds,
    KernelParams,
    TimeSchedule,
    c1,
    min_power,
    normalization_factor,
    one_plus_value,
)
from kinetic_barrier.errors import (
    CalibrationFailed,
    DomainError,
    NoCore,
    PreconditionViolated,
    WrongRegime,
)
from kinetic_barrier.hydro_geometry import concentration_modulus, hydro_fields, mass_core
from kinetic_barrier.parallel import parallel_map

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"
SPREAD_LIMIT = 1e3
SLOPE_TOLERANCE = 0.15
FROZEN_FILE = "frozen_constants.json"
FROZEN_FACTOR = 10.0
RADIUS_RULES = ("core", "linear")
SMALL_V_NORMS = (0.5, 1.0, 2.0)
SMALL_V_LEVELS = (2.0, 4.0, 8.0)
CORRECTED_SUFFIX = "-corrected"
MIN_GOOD_SPEEDS = 3
GOOD_SPEED_MULTIPLES = (1.0, 1.5, 2.0, 3.0)


# --- Setup and reports ---


@dataclass(frozen=True, eq=False)
class VerificationSetup:
    """
    Everything a proposition check needs.

    Attributes:
        f (GridDistribution): The sample distribution (f_raw for contact configurations).
        params (KernelParams): Kernel parameters.
        bounds (HydroBounds | None): Hydrodynamic bounds; the core radius rule needs them.
        barrier (Barrier | None): Barrier with a corrector, for the -corrected checks.
        n0 (float): Amplitude of the plain barrier N min(1, |v|^-q).
        v_norms (tuple): Sample speeds.
        q_values (tuple): Decay exponents to test.
        samples (int): Directions per speed; the first is always e_1.
        radius_rule (str): core gives R_q = max(2, 2 R0 / c1(q)), linear gives max(2, c_r (1+q)).
        time (float): Time at which barriers are frozen.
        tail_q (float | None): Power-law tail exponent attached to tail-less inputs;
            None means d + gamma + 2s + 1.
        strict_slopes (bool): Let the log-log slopes decide the verdict.
    """

    f: GridDistribution
    params: KernelParams
    bounds: HydroBounds | None = None
    barrier: Barrier | None = None
    n0: float = 1.0
    v_norms: tuple[float, ...] = (8.0, 16.0, 32.0, 64.0)
    q_values: tuple[float, ...] = (3.0,)
    samples: int = 1
    radius_rule: str = "core"
    c_r: float = 2.0
    time: float = 1.0
    theta_min: float = 0.0
    pv: PVPolicy = field(default_factory=PVPolicy)
    rule: PlaneRule = field(default_factory=PlaneRule)
    seed: int = 0
    threads: int | None = None
    strict_slopes: bool = False
    tail_q: float | None = None

    def __post_init__(self):
        if self.radius_rule not in RADIUS_RULES:
            raise DomainError(f"radius rule must be one of {RADIUS_RULES}, got {self.radius_rule!r}")
        if self.samples < 1:
            raise DomainError(f"need at least one sample direction, got {self.samples}")

    @property
    def threshold(self) -> float:
        return self.params.d + self.params.gamma + 2.0 * self.params.s

    @cached_property
    def f_raw(self) -> GridDistribution:
        """The input with a power-law tail, so contact points beyond the grid exist."""
        if self.f.tail.kind != "zero":
            return self.f
        q_tail = self.tail_q if self.tail_q is not None else self.threshold + 1.0
        return self.f.with_power_tail(q_tail)

    @cached_property
    def core_radius(self) -> float:
        return mass_core(self.f, hydro_fields(self.f, self.bounds)).R0

    def directions(self) -> np.ndarray:
        d = self.params.d
        first = np.eye(d)[:1]
        if self.samples == 1:
            return first
        rng = np.random.default_rng(self.seed)
        extra = rng.standard_normal((self.samples - 1, d))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        return np.concatenate([first, extra])

    def points(self, norms: Sequence[float] | None = None) -> list[np.ndarray]:
        dirs = self.directions()
        return [float(r) * e for r in (self.v_norms if norms is None else norms) for e in dirs]


@dataclass
class ReportRow:
    q: float
    v_norm: float
    lhs: float
    rhs: float
    error: float = 0.0
    implied: float = math.nan
    verdict: str = PASS
    extras: dict = field(default_factory=dict)


@dataclass
class PropositionReport:
    """Rows of one claim, with fitted log-log slopes and the overall verdict."""

    proposition_id: str
    claim: str
    rows: list[ReportRow] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)
    expected_slopes: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)
    verdict: str = SKIP
    spread: float = math.nan
    max_implied: float = math.nan

    def to_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            record = {
                "prop_id": self.proposition_id,
                "q": row.q,
                "v_norm": row.v_norm,
                "lhs": row.lhs,
                "rhs_core": row.rhs,
                "implied_constant": row.implied,
                "verdict": row.verdict,
                "lhs_error": row.error,
            }
            record.update(row.extras)
            records.append(record)
        columns = ["prop_id", "q", "v_norm", "lhs", "rhs_core", "implied_constant", "verdict"]
        return pd.DataFrame(records, columns=None if records else columns)

    def summary(self) -> dict:
        return {
            "claim": self.claim,
            "verdict": self.verdict,
            "rows": len(self.rows),
            "spread": self.spread,
            "max_implied": self.max_implied,
            "slopes": self.slopes,
            "expected_slopes": self.expected_slopes,
            "notes": self.notes,
            "reasons": self.reasons,
        }


# --- Right-hand sides ---


def good_large_q_bound(p: KernelParams, q: float, v_norm: float, g_v: float) -> float:
    return -((1.0 + q) ** p.s) * v_norm**p.gamma * g_v


def good_mid_q_bound(p: KernelParams, v_norm: float, g_v: float) -> float:
    k = 2.0 * p.s / p.d
    return -(g_v ** (1.0 + k)) * v_norm ** (p.gamma + 2.0 * p.s + k)


def good_small_v_bound(p: KernelParams, m: float) -> float:
    return -(m ** (1.0 + 2.0 * p.s / p.d))


def inner_integral_bound(p: KernelParams, q: float, n: float, v_norm: float) -> float:
    return -((1.0 + q) ** p.s) * n * v_norm ** (-2.0 * p.s - q)


def bad_far_bound(p: KernelParams, q: float, v_norm: float, g_v: float) -> float:
    return (1.0 + q) ** 2 * 2.0**q * v_norm ** (p.gamma - 2.0) * g_v


def bad_near_bound(p: KernelParams, q: float, v_norm: float, g_v: float) -> float:
    return v_norm**p.gamma * g_v / (q - (p.d + p.gamma + 2.0 * p.s))


def bad_ring_bound(p: KernelParams, q: float, v_norm: float, g_v: float, *, from_proof: bool = False) -> float:
    """
    The printed prefactor uses (1+q)^(q-(d-1)); the splitting radius c1(q) = 1/(20q) gives
    (20q)^(q-(d-1)) instead, selected by from_proof.
    """
    base = 20.0 * q if from_proof else 1.0 + q
    prefactor = base ** (q - (p.d - 1.0)) + 1.0 / (q - (p.d + p.gamma + 2.0 * p.s))
    return (1.0 + q) ** 2 * prefactor * v_norm ** (p.gamma - 2.0) * g_v


def bad_mid_q_bound(p: KernelParams, q: float, n: float, v_norm: float, *, log_factor: bool = True) -> float:
    edge = p.d - 1.0
    if math.isclose(q, edge):
        value = n * v_norm ** (p.gamma - p.d - 1.0)
        return value * math.log1p(v_norm) if log_factor else value
    if q > edge:
        return n * v_norm ** (p.gamma - p.d - 1.0)
    return n * v_norm ** (p.gamma - q - 2.0)


def bad_mid_q_exponent(p: KernelParams, q: float) -> float:
    return p.gamma - p.d - 1.0 if q >= p.d - 1.0 - 1e-12 else p.gamma - q - 2.0


def non_singular_bound(p: KernelParams, q: float, v_norm: float, g_v: float, *, weighted: bool = True) -> float:
    value = (1.0 + v_norm) ** p.gamma * g_v
    if p.gamma < 0:
        weight = 2.0 ** (-q * p.gamma / p.d) if weighted else 1.0
        value += weight * g_v ** (1.0 - p.gamma / p.d)
    return value


def refined_non_singular_bound(p: KernelParams, v_norm: float, g_v: float, M0: float) -> tuple[float, float, float]:
    """
    g^(1-gamma/d) phi(M0/g)^a + (1+|v|)^gamma g with a = min(1/2, (d+gamma)/|gamma|), and the
    split radii r1 = (M0/g)^(1/d) phi^(-1/(2 gamma)), r2 = (M0/g)^(1/d) phi^(1/(2 gamma)).

    Raises:
        PreconditionViolated: Outside -d/2 < gamma < 0 or when M0/g >= 1.
    """
    if not (-p.d / 2.0 < p.gamma < 0.0):
        raise PreconditionViolated(f"the refined bound is checked for -d/2 < gamma < 0, got {p.gamma}")
    ratio = M0 / g_v
    if ratio >= 1.0:
        raise PreconditionViolated(f"the refined bound needs M0/g < 1, got {ratio:.4g}")
    phi = float(concentration_modulus(ratio))
    exponent = min(0.5, (p.d + p.gamma) / abs(p.gamma))
    rhs = g_v ** (1.0 - p.gamma / p.d) * phi**exponent + (1.0 + v_norm) ** p.gamma * g_v
    base = ratio ** (1.0 / p.d)
    return rhs, base * phi ** (-1.0 / (2.0 * p.gamma)), base * phi ** (1.0 / (2.0 * p.gamma))


def corrected_bound(kind: str, p: KernelParams, barrier: Barrier, t: float, v_norm: float, g_v: float) -> float:
    """
    Right-hand sides for barriers carrying a corrector, with N = N(t) and eps = eps(t).

    Raises:
        PreconditionViolated: When the corrector form or the exponents fall outside the claim.
    """
    d, gamma, s = p.d, p.gamma, p.s
    q, n, eps = barrier.q, barrier.n(t), barrier.eps(t)
    form = barrier.form
    thr = d + gamma + 2.0 * s
    match kind:
        case "good-large-q":
            value = -(q**s) * n * v_norm ** (gamma - q)
            if form is BarrierForm.POWER_CORRECTOR:
                value -= eps * v_norm ** (gamma - (d + 1.0) + barrier.eta)
            elif form is BarrierForm.Q0_CORRECTOR:
                value -= barrier.q0**s * eps * v_norm ** (gamma - barrier.q0)
            return value
        case "good-mid-q":
            return good_mid_q_bound(p, v_norm, g_v)
        case "bad-far":
            return bad_far_bound(p, q, v_norm, g_v)
        case "bad-near":
            base = v_norm ** (gamma - q) * n / (q - thr)
            if form is BarrierForm.POWER_CORRECTOR:
                if gamma + 2.0 * s >= 1.0 - barrier.eta:
                    raise PreconditionViolated(f"power corrector needs gamma + 2s < 1 - eta, got {gamma + 2 * s} >= {1 - barrier.eta}")
                return base + eps * v_norm ** (gamma - d - 1.0 + barrier.eta)
            if form is BarrierForm.Q0_CORRECTOR:
                if barrier.q0 <= thr:
                    raise PreconditionViolated(f"q0 corrector needs q0 > d + gamma + 2s = {thr}, got {barrier.q0}")
                return base + eps * v_norm ** (gamma - barrier.q0) / (barrier.q0 - thr)
            raise PreconditionViolated(f"bad-near with a corrector covers power and q0 correctors, got {form.value}")
        case "bad-ring":
            return v_norm ** (gamma - 2.0) * g_v / (q - thr)
        case "bad-mid-q":
            if form is not BarrierForm.CONST_CORRECTOR:
                raise PreconditionViolated(f"bad-mid-q with a corrector covers the constant corrector, got {form.value}")
            return bad_mid_q_bound(p, q, n, v_norm)
        case "non-singular":
            return non_singular_bound(p, q, v_norm, g_v, weighted=False)
    raise DomainError(f"no corrected bound for {kind!r}")


# --- Sample configurations ---


def good_radius(setup: VerificationSetup, q: float) -> float:
    """The speed R_q above which the good-term claims are tested."""
    if setup.radius_rule == "linear":
        return max(2.0, setup.c_r * (1.0 + q))
    if q == 0:
        return 2.0
    return max(2.0, 2.0 * setup.core_radius / c1(q))


def good_speeds(setup: VerificationSetup, radius: float) -> list[float]:
    """
    The configured speeds at or above radius, or multiples of radius when fewer than
    MIN_GOOD_SPEEDS of them qualify.
    """
    speeds = [float(r) for r in setup.v_norms if r >= radius]
    if len(speeds) >= MIN_GOOD_SPEEDS:
        return speeds
    # Note: the core radius rule can put R_q beyond all but one configured speed
    derived = [radius * m for m in GOOD_SPEED_MULTIPLES]
    logging.info(f"Verifier: {len(speeds)} configured speed(s) reach R_q={radius:.4g}, sampling {derived}")
    return derived


def _good_region_occupied(f: GridDistribution, q: float, v_norm: float) -> bool:
    if q == 0:
        return bool(np.any(f.flat > 0))
    return bool(np.any((f.flat > 0) & (f.grid.norms <= c1(q) * v_norm)))


def _scalar(g, v: np.ndarray) -> float:
    return float(np.asarray(g(v[None, :]), dtype=float).ravel()[0])


def plain_barrier(setup: VerificationSetup, q: float) -> Barrier:
    return Barrier(q=q, n_schedule=TimeSchedule.constant(setup.n0), d=setup.params.d)


def _template(setup: VerificationSetup, corrected: bool, q: float) -> Barrier:
    if not corrected:
        return plain_barrier(setup, q)
    if setup.barrier is None or setup.barrier.form is BarrierForm.PLAIN:
        raise PreconditionViolated("corrected checks need a barrier with a corrector")
    return setup.barrier


@dataclass(frozen=True, eq=False)
class ContactConfiguration:
    """f := min(f_raw, g) with g scaled so that g(v) = f_raw(v)."""

    v: np.ndarray
    f: GridDistribution
    barrier: Barrier
    g: BarrierSlice
    contact: float


def contact_configuration(f_raw: GridDistribution, v, template: Barrier, t: float = 1.0) -> ContactConfiguration:
    """
    Rescales the barrier's amplitude so it touches f_raw at v, keeping the corrector.

    Raises:
        PreconditionViolated: When f_raw(v) = 0 or the corrector alone exceeds f_raw(v).
    """
    v = np.asarray(v, dtype=float)
    v_norm = float(np.linalg.norm(v))
    level = _scalar(f_raw, v)
    if level <= 0:
        raise PreconditionViolated(f"f vanishes at |v|={v_norm:.4g}, no contact configuration")
    corrector = 0.0
    if template.corrector_exponent is not None:
        corrector = template.eps(t) * float(min_power(v_norm, template.corrector_exponent))
    n = (level - corrector) / float(min_power(v_norm, template.q))
    if n <= 0:
        raise PreconditionViolated(f"corrector {corrector:.4g} exceeds f(v)={level:.4g} at |v|={v_norm:.4g}")
    barrier = dataclasses.replace(template, n_schedule=TimeSchedule.constant(n))
    g = barrier.at(t)
    f = f_raw.minimum(g)
    return ContactConfiguration(v=v, f=f, barrier=barrier, g=g, contact=_scalar(f, v) / _scalar(g, v))


def _normalization_extras(barrier: Barrier, t: float, v: np.ndarray) -> dict:
    return {
        "g_one_plus": float(one_plus_value(barrier, t, v)),
        "normalization_factor": normalization_factor(barrier.q),
    }


def _split(setup: VerificationSetup, f, g, v, q: float, forward_bad: bool = True) -> SplitResult:
    return split_operator(
        f, g, v, q, setup.params, setup.pv, theta_min=setup.theta_min, rule=setup.rule, forward_bad=forward_bad
    )


# --- Verdicts ---


def fit_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log|y| against log x over the entries with y != 0."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = (y > 0) & (x > 0) & np.isfinite(y)
    if np.unique(x[keep]).size < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def fit_residual(x: Sequence[float], y: Sequence[float]) -> float:
    """RMS residual of the log-log line fit."""
    x = np.asarray(x, dtype=float)
    y = np.abs(np.asarray(y, dtype=float))
    keep = (y > 0) & (x > 0) & np.isfinite(y)
    if np.unique(x[keep]).size < 2:
        return math.nan
    lx, ly = np.log(x[keep]), np.log(y[keep])
    coef = np.polyfit(lx, ly, 1)
    return float(np.sqrt(np.mean((np.polyval(coef, lx) - ly) ** 2)))


def score_row(row: ReportRow, claim: str) -> ReportRow:
    if claim == "negative":
        row.implied = row.lhs / row.rhs if row.rhs != 0 else math.nan
        ok = row.lhs < 0 and row.rhs < 0
    else:
        row.implied = max(row.lhs, 0.0) / row.rhs if row.rhs > 0 else math.nan
        ok = math.isfinite(row.lhs)
    row.verdict = PASS if ok and math.isfinite(row.implied) else FAIL
    return row


def assess(report: PropositionReport, strict_slopes: bool = False, tolerance: float = SLOPE_TOLERANCE) -> str:
    """Sign and finiteness at every row, bounded spread and, if strict, the expected slopes."""
    if not report.rows:
        report.verdict = SKIP
        return report.verdict
    implied = np.array([r.implied for r in report.rows], dtype=float)
    positive = implied[np.isfinite(implied) & (implied > 0)]
    report.max_implied = float(positive.max()) if positive.size else 0.0
    report.spread = float(positive.max() / positive.min()) if positive.size else 1.0

    report.reasons = []
    ok = all(r.verdict == PASS for r in report.rows)
    if not ok:
        report.reasons.append("sign or finiteness fails at some sample")
    if report.spread > SPREAD_LIMIT:
        report.reasons.append(f"implied constants spread {report.spread:.3g} exceeds {SPREAD_LIMIT:g}")
        ok = False
    if strict_slopes:
        for key, expected in report.expected_slopes.items():
            fitted = report.slopes.get(key, math.nan)
            if math.isfinite(fitted) and abs(fitted - expected) > tolerance:
                report.reasons.append(f"slope {fitted:.3f} at {key} misses {expected:.3f} by more than {tolerance}")
                ok = False
    report.verdict = PASS if ok else FAIL
    return report.verdict


# --- Generic check runner ---

RowResult = tuple[ReportRow | None, str | None]


def _run_rows(
    setup: VerificationSetup,
    proposition_id: str,
    claim: str,
    q: float,
    evaluate: Callable[[np.ndarray], RowResult],
    points: list[np.ndarray],
    expected_slope: float | None = None,
    slope_of: str = "lhs",
) -> PropositionReport:
    logging.info(f"Verifier: {proposition_id} at q={q:g} over {len(points)} samples")
    results = parallel_map(evaluate, points, setup.threads)
    report = PropositionReport(proposition_id=proposition_id, claim=claim)
    for row, note in results:
        if note:
            report.notes.append(note)
            logging.warning(f"Verifier: {proposition_id}: {note}")
        if row is not None:
            report.rows.append(score_row(row, claim))
    if not report.rows:
        raise PreconditionViolated(f"{proposition_id}: no sample meets the preconditions at q={q:g}")
    key = f"q={q:g}"
    norms = [r.v_norm for r in report.rows]
    values = [r.lhs if slope_of == "lhs" else r.rhs for r in report.rows]
    report.slopes[key] = fit_slope(norms, values)
    if expected_slope is not None:
        report.expected_slopes[key] = expected_slope
    assess(report, setup.strict_slopes)
    return report


def merge_reports(reports: Sequence[PropositionReport], strict_slopes: bool = False) -> PropositionReport:
    first = reports[0]
    merged = PropositionReport(proposition_id=first.proposition_id, claim=first.claim)
    for report in reports:
        merged.rows.extend(report.rows)
        merged.slopes.update(report.slopes)
        merged.expected_slopes.update(report.expected_slopes)
        merged.notes.extend(report.notes)
    assess(merged, strict_slopes)
    return merged


def _require_split_q(q: float) -> None:
    if 0 < q < 1:
        raise PreconditionViolated(f"the good/bad split needs q = 0 or q >= 1, got q={q}")


# --- Checks ---


def check_inner_integral(
    setup: VerificationSetup,
    q: float,
    star_fractions: Sequence[float] = (0.0, 0.9),
) -> PropositionReport:
    """
    Inner hyperplane integral at v'_* = fraction * c1(q)|v| e against -(1+q)^s N |v|^(-2s-q).

    Raises:
        PreconditionViolated: For |v| < 2, a fraction outside [0, 1) or q < 1.
    """
    if q < 1:
        raise PreconditionViolated(f"inner-integral needs q >= 1, got q={q}")
    if min(setup.v_norms) < 2:
        raise PreconditionViolated(f"inner-integral needs |v| >= 2, got {min(setup.v_norms)}")
    if any(not (0.0 <= a < 1.0) for a in star_fractions):
        raise PreconditionViolated(f"v'_* must satisfy |v'_*| < c1(q)|v|, got fractions {star_fractions}")
    p = setup.params
    g = plain_barrier(setup, q).at(setup.time)
    h = setup.f.grid.h
    report = None
    for fraction in star_fractions:

        def evaluate(v: np.ndarray) -> RowResult:
            v_norm = float(np.linalg.norm(v))
            star = fraction * c1(q) * v
            value = inner_hyperplane_integral(g, v, star, p, setup.pv, h=h, theta_min=setup.theta_min, rule=setup.rule)
            rhs = inner_integral_bound(p, q, setup.n0, v_norm)
            return ReportRow(q, v_norm, value.value, rhs, value.error, extras={"star_fraction": fraction}), None

        part = _run_rows(setup, "inner-integral", "negative", q, evaluate, setup.points(), -2.0 * p.s - q)
        part.slopes = {f"q={q:g},a={fraction:g}": part.slopes.pop(f"q={q:g}")}
        part.expected_slopes = {f"q={q:g},a={fraction:g}": -2.0 * p.s - q}
        report = part if report is None else merge_reports([report, part])
    assess(report, setup.strict_slopes)
    return report


def check_good_large_q(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """good(f, g) against -(1+q)^s |v|^gamma g(v) for |v| >= R_q."""
    _require_split_q(q)
    p = setup.params
    barrier = _template(setup, corrected, q)
    q = barrier.q
    g = barrier.at(setup.time)
    radius = good_radius(setup, q)

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        if v_norm < radius:
            return None, f"|v|={v_norm:g} below R_q={radius:.4g}"
        if not _good_region_occupied(setup.f, q, v_norm):
            return None, f"good region |v*| <= c1(q)|v| holds no mass at |v|={v_norm:g}"
        split = _split(setup, setup.f, g, v, q, forward_bad=False)
        g_v = _scalar(g, v)
        if corrected:
            rhs = corrected_bound("good-large-q", p, barrier, setup.time, v_norm, g_v)
        else:
            rhs = good_large_q_bound(p, q, v_norm, g_v)
        extras = {"g": g_v, **_normalization_extras(barrier, setup.time, v)}
        return ReportRow(q, v_norm, split.good, rhs, split.errors["good"], extras=extras), None

    name = "good-large-q" + (CORRECTED_SUFFIX if corrected else "")
    points = setup.points(good_speeds(setup, radius))
    return _run_rows(setup, name, "negative", q, evaluate, points, p.gamma - q)


def check_good_midq(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """good(f, f) at contact points against -g^(1+2s/d) |v|^(gamma+2s+2s/d), q in [0, d+1]."""
    p = setup.params
    if not (0.0 <= q <= p.d + 1.0):
        raise PreconditionViolated(f"good-mid-q needs q in [0, {p.d + 1}], got {q}")
    _require_split_q(q)
    template = _template(setup, corrected, q)
    q = template.q
    radius = good_radius(setup, q)

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        if v_norm < radius:
            return None, f"|v|={v_norm:g} below R_q={radius:.4g}"
        try:
            contact = contact_configuration(setup.f_raw, v, template, setup.time)
        except PreconditionViolated as e:
            return None, str(e)
        if not _good_region_occupied(contact.f, q, v_norm):
            return None, f"good region holds no mass at |v|={v_norm:g}"
        split = _split(setup, contact.f, contact.f, v, q, forward_bad=False)
        g_v = _scalar(contact.g, v)
        rhs = good_mid_q_bound(p, v_norm, g_v)
        extras = {"g": g_v, "contact": contact.contact, **_normalization_extras(contact.barrier, setup.time, v)}
        return ReportRow(q, v_norm, split.good, rhs, split.errors["good"], extras=extras), None

    name = "good-mid-q" + (CORRECTED_SUFFIX if corrected else "")
    return _run_rows(setup, name, "negative", q, evaluate, setup.points(good_speeds(setup, radius)))


def _stencil_floor(f: GridDistribution, v: np.ndarray) -> float:
    grid = f.grid
    near = np.max(np.abs(grid.nodes - v), axis=1) < grid.h
    if not np.any(near):
        return _scalar(f, v)
    return float(f.flat[near].min())


def check_good_small_v(
    setup: VerificationSetup,
    levels: Sequence[float] = SMALL_V_LEVELS,
    v_norms: Sequence[float] = SMALL_V_NORMS,
) -> PropositionReport:
    """
    good(f, f) with the constant barrier g = m against -m^(1+2s/d).

    f := min(c f_raw, m), with c large enough that every node around v is capped, so f(v) = m.
    """
    p = setup.params
    reports = []
    for m in levels:
        g = Barrier(q=0.0, n_schedule=TimeSchedule.constant(m), d=p.d).at(setup.time)

        def evaluate(v: np.ndarray) -> RowResult:
            v_norm = float(np.linalg.norm(v))
            floor = _stencil_floor(setup.f, v)
            if floor <= 0:
                return None, f"f vanishes near |v|={v_norm:g}, no contact with m={m:g}"
            scale = 2.0 * m / floor
            scaled = dataclasses.replace(
                setup.f,
                values=scale * setup.f.values,
                tail=dataclasses.replace(setup.f.tail, amplitude=scale * setup.f.tail.amplitude),
            )
            f = scaled.minimum(g)
            split = _split(setup, f, f, v, 0.0)
            extras = {"m": m, "contact": _scalar(f, v) / m}
            return ReportRow(0.0, v_norm, split.good, good_small_v_bound(p, m), split.errors["good"], extras=extras), None

        reports.append(_run_rows(setup, "good-small-v", "negative", 0.0, evaluate, setup.points(v_norms)))
    report = merge_reports(reports, strict_slopes=False)
    report.slopes, report.expected_slopes = {}, {}
    for v_norm in sorted({r.v_norm for r in report.rows}):
        rows = [r for r in report.rows if r.v_norm == v_norm]
        key = f"|v|={v_norm:g}"
        report.slopes[key] = fit_slope([r.extras["m"] for r in rows], [r.lhs for r in rows])
        report.expected_slopes[key] = 1.0 + 2.0 * p.s / p.d
    assess(report, setup.strict_slopes)
    return report


def check_bad_far(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """bad1(f, g) against (1+q)^2 2^q |v|^(gamma-2) g(v), |v| >= 2."""
    if q < 1:
        raise PreconditionViolated(f"bad-far needs q >= 1, got q={q}")
    p = setup.params
    barrier = _template(setup, corrected, q)
    q = barrier.q
    g = barrier.at(setup.time)

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        if v_norm < 2:
            return None, f"|v|={v_norm:g} below 2"
        split = _split(setup, setup.f, g, v, q)
        g_v = _scalar(g, v)
        rhs = bad_far_bound(p, q, v_norm, g_v)
        extras = {"g": g_v, **_normalization_extras(barrier, setup.time, v)}
        return ReportRow(q, v_norm, split.bad1, rhs, split.errors["bad1"], extras=extras), None

    name = "bad-far" + (CORRECTED_SUFFIX if corrected else "")
    return _run_rows(setup, name, "upper", q, evaluate, setup.points(), p.gamma - 2.0 - q)


def _contact_bad(setup: VerificationSetup, q: float, corrected: bool, kind: str) -> PropositionReport:
    p = setup.params
    if q <= setup.threshold:
        raise PreconditionViolated(f"{kind} needs q > d + gamma + 2s = {setup.threshold:.4g}, got {q}")
    template = _template(setup, corrected, q)
    q = template.q
    term = "bad2" if kind == "bad-near" else "bad3"

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        if v_norm < 2:
            return None, f"|v|={v_norm:g} below 2"
        try:
            contact = contact_configuration(setup.f_raw, v, template, setup.time)
            g_v = _scalar(contact.g, v)
            if corrected:
                rhs = corrected_bound(kind, p, contact.barrier, setup.time, v_norm, g_v)
            elif kind == "bad-near":
                rhs = bad_near_bound(p, q, v_norm, g_v)
            else:
                rhs = bad_ring_bound(p, q, v_norm, g_v)
        except PreconditionViolated as e:
            return None, str(e)
        split = _split(setup, contact.f, contact.f, v, q)
        lhs = getattr(split, term)
        extras = {"g": g_v, "contact": contact.contact, **_normalization_extras(contact.barrier, setup.time, v)}
        if kind == "bad-ring" and not corrected:
            rhs_alt = bad_ring_bound(p, q, v_norm, g_v, from_proof=True)
            extras.update(rhs_alt=rhs_alt, implied_alt=max(lhs, 0.0) / rhs_alt)
        return ReportRow(q, v_norm, lhs, rhs, split.errors[term], extras=extras), None

    name = kind + (CORRECTED_SUFFIX if corrected else "")
    report = _run_rows(setup, name, "upper", q, evaluate, setup.points())
    if kind == "bad-ring" and not corrected:
        report.notes.append("rhs_alt uses the splitting radius prefactor (20q)^(q-(d-1)) in place of (1+q)^(q-(d-1))")
    return report


def check_bad_near(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """bad2(f, f) at contact points against |v|^gamma g(v) / (q - (d+gamma+2s))."""
    return _contact_bad(setup, q, corrected, "bad-near")


def check_bad_ring(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """bad3(f, f) at contact points against the printed ring prefactor, plus the proof's variant."""
    return _contact_bad(setup, q, corrected, "bad-ring")


def check_bad_mid_q(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """
    (bad2 + bad3)(f, g) against N |v|^(gamma-d-1), N |v|^(gamma-d-1) ln(1+|v|) or
    N |v|^(gamma-q-2) for q above, at or below d - 1.
    """
    p = setup.params
    if not (1.0 <= q <= p.d + 1.0):
        raise PreconditionViolated(f"bad-mid-q needs q in [1, {p.d + 1}], got {q}")
    barrier = _template(setup, corrected, q)
    q = barrier.q
    g = barrier.at(setup.time)
    n = barrier.n(setup.time)
    log_case = math.isclose(q, p.d - 1.0)

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        if v_norm < 2:
            return None, f"|v|={v_norm:g} below 2"
        try:
            if corrected:
                rhs = corrected_bound("bad-mid-q", p, barrier, setup.time, v_norm, _scalar(g, v))
            else:
                rhs = bad_mid_q_bound(p, q, n, v_norm)
        except PreconditionViolated as e:
            return None, str(e)
        split = _split(setup, setup.f, g, v, q)
        extras = {"rhs_no_log": bad_mid_q_bound(p, q, n, v_norm, log_factor=False)} if log_case else {}
        extras.update(_normalization_extras(barrier, setup.time, v))
        lhs = split.bad2 + split.bad3
        return ReportRow(q, v_norm, lhs, rhs, split.errors["bad2"] + split.errors["bad3"], extras=extras), None

    name = "bad-mid-q" + (CORRECTED_SUFFIX if corrected else "")
    report = _run_rows(setup, name, "upper", q, evaluate, setup.points(), bad_mid_q_exponent(p, q))
    if log_case:
        norms = np.array([r.v_norm for r in report.rows])
        lhs = np.array([r.lhs for r in report.rows])
        with_log = fit_residual(norms, lhs / np.log1p(norms))
        without = fit_residual(norms, lhs)
        report.notes.append(f"q = d-1: log-log residual {with_log:.3g} with the ln(1+|v|) factor, {without:.3g} without")
    return report


def check_bad_terms(setup: VerificationSetup, q: float, corrected: bool = False) -> list[PropositionReport]:
    """bad-far, bad-near, bad-ring and bad-mid-q; checks whose range excludes q are left out."""
    reports = []
    for check in (check_bad_far, check_bad_near, check_bad_ring, check_bad_mid_q):
        try:
            reports.append(check(setup, q, corrected))
        except PreconditionViolated as e:
            logging.warning(f"Verifier: {e}")
    return reports


def check_qns(setup: VerificationSetup, q: float, corrected: bool = False) -> PropositionReport:
    """
    Q_ns(f, f) at contact points against (1+|v|)^gamma g, plus 2^(-q gamma/d) g^(1-gamma/d) for
    gamma < 0.

    With q = 0, -d/2 < gamma < 0 and M0/g < 1 the refined bound and the pieces of Q_ns
    split at its radii r1 and r2 are reported too.
    """
    p = setup.params
    template = _template(setup, corrected, q)
    q = template.q
    refine = q == 0 and -p.d / 2.0 < p.gamma < 0 and setup.bounds is not None

    def evaluate(v: np.ndarray) -> RowResult:
        v_norm = float(np.linalg.norm(v))
        try:
            contact = contact_configuration(setup.f_raw, v, template, setup.time)
        except PreconditionViolated as e:
            return None, str(e)
        g_v = _scalar(contact.g, v)
        value = q_ns(contact.f, v, p, theta_min=setup.theta_min)
        if corrected:
            rhs = corrected_bound("non-singular", p, contact.barrier, setup.time, v_norm, g_v)
        else:
            rhs = non_singular_bound(p, q, v_norm, g_v)
        extras = {"g": g_v, "contact": contact.contact, **_normalization_extras(contact.barrier, setup.time, v)}
        if refine and setup.bounds.M0 < g_v:
            rhs_refined, r1, r2 = refined_non_singular_bound(p, v_norm, g_v, setup.bounds.M0)
            pieces = q_ns_pieces(contact.f, v, p, sorted((r1, r2)), theta_min=setup.theta_min)
            extras.update(
                rhs_refined=rhs_refined,
                implied_refined=max(value.value, 0.0) / rhs_refined,
                r1=r1,
                r2=r2,
                qns_inner=float(pieces[0]),
                qns_middle=float(pieces[1]),
                qns_outer=float(pieces[2]),
            )
        return ReportRow(q, v_norm, value.value, rhs, value.error, extras=extras), None

    name = "non-singular" + (CORRECTED_SUFFIX if corrected else "")
    report = _run_rows(setup, name, "upper", q, evaluate, setup.points())
    if q == 0 and p.gamma <= -p.d / 2.0:
        report.notes.append(f"refined bound not checked: its exponent degenerates for gamma={p.gamma} <= -d/2")
    return report


# --- Registry ---


PROPOSITIONS: dict[str, Callable[..., PropositionReport]] = {
    "inner-integral": check_inner_integral,
    "good-large-q": check_good_large_q,
    "good-mid-q": check_good_midq,
    "good-small-v": check_good_small_v,
    "bad-far": check_bad_far,
    "bad-near": check_bad_near,
    "bad-ring": check_bad_ring,
    "bad-mid-q": check_bad_mid_q,
    "non-singular": check_qns,
}
CORRECTABLE = ("good-large-q", "good-mid-q", "bad-far", "bad-near", "bad-ring", "bad-mid-q", "non-singular")
NUMBERED_IDS: dict[str, str] = {
    "3.1": "good-large-q",
    "3.2": "inner-integral",
    "3.3": "good-mid-q",
    "3.4": "good-small-v",
    "3.5": "bad-far",
    "3.6": "bad-near",
    "3.7": "bad-ring",
    "3.8": "bad-mid-q",
    "3.9": "non-singular",
    **{f"5.{k}": name + CORRECTED_SUFFIX for k, name in enumerate(CORRECTABLE, start=3)},
}


def resolve_id(proposition_id: str) -> str:
    """Maps a numbered id such as 3.1 or 5.4 to its check name; names pass through."""
    return NUMBERED_IDS.get(proposition_id.strip(), proposition_id.strip())


def proposition_ids(setup: VerificationSetup) -> list[str]:
    """Every id applicable to the setup; -corrected ids only with a corrected barrier."""
    ids = list(PROPOSITIONS)
    if setup.barrier is not None and setup.barrier.form is not BarrierForm.PLAIN:
        ids += [name + CORRECTED_SUFFIX for name in CORRECTABLE]
    return ids


def verify(setup: VerificationSetup, proposition_id: str) -> PropositionReport:
    """
    Runs one check over setup.q_values and merges the rows.

    Out-of-range q values are noted and skipped; a check with nothing left is reported as
    SKIP with the reason in its notes.
    """
    proposition_id = resolve_id(proposition_id)
    corrected = proposition_id.endswith(CORRECTED_SUFFIX)
    base = proposition_id.removesuffix(CORRECTED_SUFFIX)
    if base not in PROPOSITIONS or (corrected and base not in CORRECTABLE):
        raise DomainError(
            f"unknown proposition {proposition_id!r}, expected one of {sorted(PROPOSITIONS)}"
            f" or a number in {sorted(NUMBERED_IDS)}"
        )
    check = PROPOSITIONS[base]

    if base == "good-small-v":
        runs = [lambda: check(setup)]
    elif corrected:
        runs = [lambda: check(setup, _template(setup, True, 0.0).q, True)]
    else:
        runs = [lambda q=q: check(setup, q) for q in setup.q_values]

    reports, notes = [], []
    for run in runs:
        try:
            reports.append(run())
        except (PreconditionViolated, NoCore, WrongRegime, DomainError) as e:
            notes.append(str(e))
            logging.warning(f"Verifier: {proposition_id} skipped: {e}")
    if not reports:
        return PropositionReport(proposition_id=proposition_id, claim="", notes=notes, verdict=SKIP)
    report = merge_reports(reports, setup.strict_slopes)
    report.notes = notes + report.notes
    logging.info(f"Verifier: {proposition_id} -> {report.verdict} (spread {report.spread:.3g})")
    return report


# --- Frozen regression constants ---


def load_frozen(path: str | Path) -> dict[str, float]:
    path = Path(path)
    if not path.exists():
        return {}
    with open(path, "r") as f:
        return {k: float(v) for k, v in json.load(f).items()}


def apply_frozen(reports: Sequence[PropositionReport], path: str | Path, factor: float = FROZEN_FACTOR) -> dict[str, float]:
    """
    Fails reports whose maximal implied constant exceeds factor times the recorded value and
    records the ones seen for the first time.

    Returns:
        dict: The frozen constants after this run.
    """
    path = Path(path)
    frozen = load_frozen(path)
    changed = False
    for report in reports:
        if report.verdict == SKIP or not math.isfinite(report.max_implied):
            continue
        key = report.proposition_id
        if key not in frozen:
            frozen[key] = report.max_implied
            changed = True
            logging.info(f"Verifier: froze {key} at {report.max_implied:.6g}")
        elif report.max_implied > factor * frozen[key]:
            report.reasons.append(f"implied constant {report.max_implied:.4g} exceeds {factor:g}x the frozen {frozen[key]:.4g}")
            report.verdict = FAIL
    if changed:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(frozen, f, indent=2, sort_keys=True)
    return frozen


# --- Contact scan and schedules ---


@dataclass
class ContactScan:
    """
    First snapshot where max(f/g) reaches 1, or the closest approach when none does.

    good_dominates: good + positive parts of the bad terms and Q_ns stays negative.
    contact_inequality_holds: d_t g <= Q(f, f) at the contact point.
    """

    t0: float
    v0_index: int
    v0: np.ndarray
    margin: float
    contact: bool
    split: SplitResult | None = None
    dtg: float | None = None
    good_dominates: bool | None = None
    contact_inequality_holds: bool | None = None

    def to_dict(self) -> dict:
        row = {
            "t0": self.t0,
            "v0_index": self.v0_index,
            **{f"v0_{i + 1}": float(x) for i, x in enumerate(self.v0)},
            "margin": self.margin,
            "contact": self.contact,
            "dtg": self.dtg,
            "good_dominates": self.good_dominates,
            "contact_inequality_holds": self.contact_inequality_holds,
        }
        if self.split is not None:
            row.update(self.split.to_dict())
        return row


def _singular_at(barrier: Barrier, t: float) -> bool:
    eps_singular = barrier.form is not BarrierForm.PLAIN and barrier.eps_schedule.kind == "power" and barrier.eps_schedule.rate > 0
    return t <= 0 and (barrier.n_schedule.singular or eps_singular)


def contact_scan(
    trajectory: Sequence[tuple[float, GridDistribution]],
    barrier: Barrier,
    p: KernelParams,
    *,
    pv: PVPolicy | None = None,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    evaluate_split: bool = True,
) -> ContactScan:
    """
    Walks the snapshots in order and stops at the first node with f >= g.

    Ties in max(f/g) go to the lowest linear node index. At a contact the split of Q(f, f)
    and d_t g are evaluated.
    """
    best: ContactScan | None = None
    for t, f in trajectory:
        if _singular_at(barrier, t):
            continue
        nodes = f.grid.nodes
        ratio = f.flat / barrier.value(t, nodes)
        idx = int(np.argmax(ratio))
        margin = 1.0 - float(ratio[idx])
        scan = ContactScan(t0=float(t), v0_index=idx, v0=nodes[idx].copy(), margin=margin, contact=margin <= 0)
        if scan.contact:
            scan.dtg = float(barrier.time_derivative(t, scan.v0))
            if evaluate_split:
                try:
                    split = split_operator(f, f, scan.v0, barrier.q, p, pv, theta_min=theta_min, rule=rule)
                except DomainError as e:
                    logging.warning(f"Verifier: no split at the contact point: {e}")
                else:
                    positive = sum(max(x, 0.0) for x in (split.bad1, split.bad2, split.bad3, split.q_ns))
                    scan.split = split
                    scan.good_dominates = split.good + positive < 0
                    scan.contact_inequality_holds = scan.dtg <= split.total
            logging.info(f"Verifier: contact at t={t:g}, node {idx}, |v|={np.linalg.norm(scan.v0):.4g}")
            return scan
        if best is None or margin < best.margin:
            best = scan
    if best is None:
        raise PreconditionViolated("trajectory has no snapshot where the barrier is defined")
    logging.info(f"Verifier: no contact, closest approach margin {best.margin:.4g} at t={best.t0:g}")
    return best


def appearance_exponents(p: KernelParams, q: float) -> tuple[float | None, float | None]:
    """
    beta = d/(2s) + q/gamma for gamma > 0, and q_soft = d + 1 + d gamma/(2s) for -2 < gamma <= 0.

    Raises:
        WrongRegime: When neither applies.
    """
    beta = p.d / (2.0 * p.s) + q / p.gamma if p.gamma > 0 else None
    q_soft = p.d + 1.0 + p.d * p.gamma / (2.0 * p.s) if -2.0 < p.gamma <= 0 else None
    if beta is None and q_soft is None:
        raise WrongRegime(f"no appearance exponent for gamma={p.gamma}")
    return beta, q_soft


PRESETS = ("propagation", "appearance", "soft_appearance", "soft_propagation", "corrected_appearance")


def barrier_preset(
    name: str,
    p: KernelParams,
    q: float,
    n0: float = 1.0,
    eps0: float = 0.1,
    *,
    eta: float = 0.5,
    q0: float | None = None,
    eps_rate: float = 1.0,
) -> Barrier:
    """
    A barrier configured for one of the upper-bound results.

    Raises:
        WrongRegime: When the preset needs a different sign of gamma.
        PreconditionViolated: When the corrected appearance exponents are not positive.
    """
    d = p.d
    match name:
        case "propagation":
            return Barrier(q=q, n_schedule=TimeSchedule.constant(n0), d=d)
        case "appearance":
            beta, _ = appearance_exponents(p, q)
            if beta is None:
                raise WrongRegime(f"appearance needs gamma > 0, got {p.gamma}")
            return Barrier(q=q, n_schedule=TimeSchedule.power(n0, beta), d=d)
        case "soft_appearance":
            _, q_soft = appearance_exponents(p, q)
            if q_soft is None:
                raise WrongRegime(f"soft_appearance needs -2 < gamma <= 0, got {p.gamma}")
            return Barrier(
                q=q_soft,
                n_schedule=TimeSchedule.power(n0, d / (2.0 * p.s)),
                form=BarrierForm.CONST_CORRECTOR,
                eps_schedule=EpsSchedule(eps0),
                d=d,
            )
        case "soft_propagation":
            if p.gamma > 0:
                raise WrongRegime(f"soft_propagation needs gamma <= 0, got {p.gamma}")
            return Barrier(
                q=q,
                n_schedule=TimeSchedule.constant(n0),
                form=BarrierForm.POWER_CORRECTOR,
                eps_schedule=EpsSchedule(eps0, "exponential", eps_rate),
                eta=eta,
                d=d,
            )
        case "corrected_appearance":
            if p.gamma <= 0:
                raise WrongRegime(f"corrected_appearance needs gamma > 0, got {p.gamma}")
            q0 = d + 2.0 if q0 is None else q0
            beta = q / p.gamma - d / (2.0 * p.s)
            beta0 = q0 / p.gamma - d / (2.0 * p.s)
            if beta <= 0 or beta0 <= 0:
                raise PreconditionViolated(f"corrected_appearance needs positive exponents, got beta={beta:.4g}, beta0={beta0:.4g}")
            return Barrier(
                q=q,
                n_schedule=TimeSchedule.power(n0, beta),
                form=BarrierForm.Q0_CORRECTOR,
                eps_schedule=EpsSchedule(eps0, "power", beta0),
                q0=q0,
                d=d,
            )
    raise DomainError(f"unknown barrier preset {name!r}, expected one of {PRESETS}")


def linfty_schedule(
    p: KernelParams,
    bounds: HydroBounds,
    trajectory: Sequence[tuple[float, GridDistribution]],
    *,
    t_window: tuple[float, float] = (0.05, math.inf),
    ladder: range = range(-10, 21),
    refine_steps: int = 12,
) -> Barrier:
    """
    Calibrates N_inf in N(t) = N_inf (1 + t^(-d/(2s))): the first power of two on the ladder
    for which the trajectory never touches the q = 0 barrier, refined by bisection.

    Raises:
        PreconditionViolated: For gamma + 2s outside [0, 2] or an initial datum off the bounds.
        CalibrationFailed: When the top of the ladder still touches.
    """
    if not p.moderately_soft:
        raise PreconditionViolated(f"the L-infinity schedule needs gamma + 2s in [0, 2], got {p.gamma + 2 * p.s}")
    if not trajectory:
        raise PreconditionViolated("empty trajectory")
    if not hydro_fields(trajectory[0][1], bounds).within_bounds:
        raise PreconditionViolated("initial datum violates the hydrodynamic bounds")
    lo_t, hi_t = t_window
    window = [(t, f) for t, f in trajectory if lo_t <= t <= hi_t]
    if not window:
        raise PreconditionViolated(f"no snapshot in the window {t_window}")

    def clear(n: float) -> bool:
        barrier = Barrier(q=0.0, n_schedule=TimeSchedule.linfty(n, p.d, p.s), d=p.d)
        return not contact_scan(window, barrier, p, evaluate_split=False).contact

    previous = None
    for k in ladder:
        n = 2.0**k
        if clear(n):
            break
        previous = n
    else:
        raise CalibrationFailed(f"trajectory touches the barrier up to N_inf = 2^{ladder[-1]}")

    if previous is not None:
        lo, hi = previous, n
        for _ in range(refine_steps):
            mid = 0.5 * (lo + hi)
            if clear(mid):
                hi = mid
            else:
                lo = mid
        n = hi
    logging.info(f"Verifier: calibrated N_inf = {n:.6g}")
    return Barrier(q=0.0, n_schedule=TimeSchedule.linfty(n, p.d, p.s), d=p.d)
