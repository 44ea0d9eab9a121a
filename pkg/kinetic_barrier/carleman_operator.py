"""
Pointwise evaluation of the collision operator Q(f, g) = Q_s(f, g) + Q_ns(f, g).

Q_s is evaluated in the forward Carleman representation (outer integral over v' = v + w,
inner integral over the hyperplane of v'_*) and in the reverse one (outer integral over the
grid nodes v'_*, inner over the hyperplane of v'). The good/bad split lives in the reverse
representation; the near and ring bad terms are also recomputed in the forward one.
The sigma-representation oracle is an independent direct quadrature with an angular cutoff.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import special

from kinetic_barrier.collision_kernel import (
    DEGENERATE_FACTOR,
    AngularKernel,
    CancellationConstant,
    PlaneRule,
    cancellation_constant,
    carleman_jacobian,
    collision_cos_theta,
    composite_legendre,
    hybrid_radial,
    kernel_Kf_many,
    orthonormal_complement,
    plane_directions,
    plane_outer_radius,
)
from kinetic_barrier.core_model import (
    INTERPOLATION_RULES,
    Barrier,
    Evaluator,
    GridDistribution,
    KernelParams,
    VelocityGrid,
    ball_volume,
    require_evaluation_dimension,
    sphere_area,
    splitting_constants,
)
from kinetic_barrier.errors import DomainError, OutOfRange, PVDivergence
from kinetic_barrier.parallel import parallel_map

Mask = Callable[[np.ndarray], np.ndarray]


class OperatorValue(NamedTuple):
    value: float
    error: float


class PVMode(str, Enum):
    SYMMETRIC_PAIRING = "symmetric_pairing"
    RADIUS_EXCLUSION = "radius_exclusion"


@dataclass(frozen=True)
class PVPolicy:
    """
    How the principal value around v is realized.

    symmetric_pairing integrates g(v+w) + g(v-w) - 2g(v) down to r_pv and adds a model
    correction for the ball |w| < r_pv; radius_exclusion drops that ball outright.

    Attributes:
        mode (PVMode): Pairing or exclusion.
        r_pv (float | None): Innermost radius; None means h/4 of the grid in use.
        log_panels_per_octave (int): Radial panels per doubling of |w| near v.
        n_directions (int): Directions of w on the half sphere (forward representation).
        cauchy_fraction (float): Share of the total above which a non-decaying innermost
            shell is reported as divergence.
    """

    mode: PVMode = PVMode.SYMMETRIC_PAIRING
    r_pv: float | None = None
    log_panels_per_octave: int = 4
    n_directions: int = 32
    cauchy_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "mode", PVMode(self.mode))
        if self.r_pv is not None and self.r_pv <= 0:
            raise OutOfRange("pv", f"r_pv must be positive, got {self.r_pv}")
        if self.n_directions < 4 or self.n_directions % 2:
            raise OutOfRange("pv", f"n_directions must be an even number >= 4, got {self.n_directions}")

    @property
    def pairing(self) -> bool:
        return self.mode is PVMode.SYMMETRIC_PAIRING

    def radius(self, h: float) -> float:
        return self.r_pv if self.r_pv is not None else 0.25 * h

    def check(self, p: KernelParams) -> None:
        if not self.pairing and p.s >= 0.5:
            raise OutOfRange("pv", f"radius_exclusion does not converge for s={p.s} >= 1/2")


def as_evaluator(g, t: float | None = None) -> Evaluator:
    """Barriers are frozen at time t (default 1); anything else is used as is."""
    if isinstance(g, Barrier):
        return g.at(1.0 if t is None else t)
    return g


def _scalar(g: Evaluator, v: np.ndarray) -> float:
    return float(np.asarray(g(v[None, :]), dtype=float).ravel()[0])


def _core_correction(density0, rho0, lo, s: float):
    """Integral over [0, lo] of a radial density modelled as C rho^(1-2s), matched at rho0."""
    return density0 * rho0 ** (2.0 * s - 1.0) * lo ** (2.0 - 2.0 * s) / (2.0 - 2.0 * s)


def _cauchy_check(shells: np.ndarray, pv: PVPolicy, where: str) -> None:
    if len(shells) < 2:
        return
    total = float(np.sum(np.abs(shells)))
    inner, next_ = abs(float(shells[0])), abs(float(shells[1]))
    if total > 0 and inner >= next_ and inner > pv.cauchy_fraction * total:
        raise PVDivergence(
            f"{where}: innermost shell {inner:.3g} does not decay (next {next_:.3g}, total {total:.3g})"
        )


def half_sphere_directions(d: int, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One direction from each antipodal pair, with weights and nested coarse weights.

    d = 2 uses n angles on [0, pi); d = 3 uses Gauss-Legendre in cos(theta) on [0, 1] times
    n azimuths.
    """
    require_evaluation_dimension(d)
    phi = math.pi * np.arange(n) / n if d == 2 else 2.0 * math.pi * np.arange(n) / n
    coarse_phi = np.zeros(n)
    if d == 2:
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        coarse_phi[::2] = 2.0 * math.pi / n
        return dirs, np.full(n, math.pi / n), coarse_phi
    x, w = special.roots_legendre(max(2, n // 8))
    mu = 0.5 * (x + 1.0)
    ring = np.sqrt(1.0 - mu**2)
    dirs = np.stack(
        [
            (ring[:, None] * np.cos(phi)[None, :]).ravel(),
            (ring[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(mu, n),
        ],
        axis=-1,
    )
    coarse_phi[::2] = 4.0 * math.pi / n
    weights = np.outer(0.5 * w, np.full(n, 2.0 * math.pi / n)).ravel()
    coarse = np.outer(0.5 * w, coarse_phi).ravel()
    return dirs, weights, coarse


def coarse_lattice(grid: VelocityGrid) -> np.ndarray:
    """Weights 2^d on nodes with all-even indices and 0 elsewhere, for Richardson estimates."""
    idx = np.indices(grid.shape).reshape(grid.d, -1)
    return np.where(np.all(idx % 2 == 0, axis=0), 2.0**grid.d, 0.0)


# --- Non-singular part ---


def singular_cell_weights(grid: VelocityGrid, v, gamma: float) -> np.ndarray:
    """
    Approximations of the cell integrals of |x - v|^gamma for every node.

    For gamma < 0 the cells within one spacing of v are subdivided, and the sub-cell
    containing v is replaced by the exact integral over a ball of equal volume.
    """
    v = np.asarray(v, dtype=float)
    h, d = grid.h, grid.d
    diff = grid.nodes - v
    dist = np.linalg.norm(diff, axis=1)
    with np.errstate(divide="ignore"):
        weights = grid.cell_volume * dist**gamma
    if gamma >= 0:
        return weights

    near = np.flatnonzero(np.max(np.abs(diff), axis=1) <= h * (1.0 + 1e-12))
    m = 16 if d == 2 else 8
    axis = ((np.arange(m) + 0.5) / m - 0.5) * h
    offsets = np.stack([c.ravel() for c in np.meshgrid(*([axis] * d), indexing="ij")], axis=-1)
    sub = diff[near][:, None, :] + offsets[None, :, :]
    sub_dist = np.linalg.norm(sub, axis=-1)
    volume = (h / m) ** d
    with np.errstate(divide="ignore"):
        values = volume * sub_dist**gamma
    closest = np.unravel_index(np.argmin(sub_dist), sub_dist.shape)
    if np.max(np.abs(sub[closest])) <= 0.5 * h / m * (1.0 + 1e-12):
        rho = (volume / ball_volume(d)) ** (1.0 / d)
        values[closest] = sphere_area(d - 1) * rho ** (d + gamma) / (d + gamma)
    weights[near] = values.sum(axis=1)
    return weights


def _convolution(f: GridDistribution, v: np.ndarray, gamma: float):
    grid = f.grid
    weights = singular_cell_weights(grid, v, gamma)
    far = np.max(np.abs(grid.nodes - v), axis=1) > grid.h * (1.0 + 1e-12)
    fine = f.flat * weights
    coarse = np.sum((fine * coarse_lattice(grid))[far])
    error = abs(float(np.sum(fine[far])) - coarse) / 3.0
    tail = f.tail.exterior_moment(grid.r_max, grid.d, gamma)
    return fine, tail, error


def q_ns(
    f: GridDistribution,
    v,
    p: KernelParams,
    *,
    theta_min: float = 0.0,
    cs: CancellationConstant | None = None,
) -> OperatorValue:
    """
    Q_ns(f, f)(v) = f(v) C_S int f(v - u) |u|^gamma du by grid convolution.

    Power-law tails contribute their exterior moment beyond r_max.
    """
    cs = cs or cancellation_constant(p, theta_min)
    v = np.asarray(v, dtype=float)
    fv = _scalar(f, v)
    if fv == 0.0:
        return OperatorValue(0.0, 0.0)
    fine, tail, conv_error = _convolution(f, v, p.gamma)
    if math.isinf(tail):
        logging.warning(f"Operator: tail moment of order {p.gamma} diverges, Q_ns error is unbounded")
    conv = float(np.sum(fine)) + (0.0 if math.isinf(tail) else tail)
    value = fv * cs.value * conv
    error = fv * (cs.quadrature_error * conv + cs.value * conv_error) + (math.inf if math.isinf(tail) else 0.0)
    return OperatorValue(value, error)


def q_ns_pieces(
    f: GridDistribution,
    v,
    p: KernelParams,
    radii: Sequence[float],
    *,
    theta_min: float = 0.0,
) -> np.ndarray:
    """
    Q_ns split by |u| into [0, r_1), [r_1, r_2), ..., [r_last, inf); the pieces sum to q_ns.
    """
    radii = np.sort(np.asarray(radii, dtype=float))
    cs = cancellation_constant(p, theta_min)
    v = np.asarray(v, dtype=float)
    fv = _scalar(f, v)
    pieces = np.zeros(len(radii) + 1)
    if fv == 0.0:
        return pieces
    fine, tail, _ = _convolution(f, v, p.gamma)
    bins = np.digitize(np.linalg.norm(f.grid.nodes - v, axis=1), radii)
    pieces += np.bincount(bins, weights=fine, minlength=len(pieces))
    if not math.isinf(tail):
        pieces[-1] += tail
    return fv * cs.value * pieces


# --- Singular part, forward representation ---


def q_s_carleman(
    f: GridDistribution,
    g,
    v,
    p: KernelParams,
    pv: PVPolicy | None = None,
    *,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    t: float | None = None,
) -> OperatorValue:
    """
    Q_s(f, g)(v) = 2^(d-1) PV int K_f(v, v+w) [g(v+w) - g(v)] dw.

    K_f(v, v+w) = K_f(v, v-w), so pairing w with -w leaves only the second difference;
    the antisymmetric remainder is identically zero.

    Raises:
        PVDivergence: When the innermost shells fail the Cauchy criterion.
    """
    pv = pv or PVPolicy()
    pv.check(p)
    rule = rule or PlaneRule()
    g = as_evaluator(g, t)
    v = np.asarray(v, dtype=float)
    d = p.d
    require_evaluation_dimension(d)
    h = f.grid.h
    r0 = pv.radius(h)
    outer = plane_outer_radius(f, v, rule)
    if outer <= r0:
        return OperatorValue(0.0, 0.0)

    knee = max(2.0 * h, r0)
    log_panels = max(1, math.ceil(pv.log_panels_per_octave * math.log2(knee / r0)))
    radial = hybrid_radial([r0], [outer], knee, 0.5 * h, log_panels, rule.panel_order)
    rho, rw, rm = radial.radii[0], radial.weights[0], radial.mid_weights[0]
    dirs, dw, dw_coarse = half_sphere_directions(d, pv.n_directions)

    offsets = rho[None, :, None] * dirs[:, None, :]
    kern = kernel_Kf_many(f, v, offsets.reshape(-1, d), p, theta_min=theta_min, rule=rule)
    shape = offsets.shape[:-1]
    k_val = kern.values.reshape(shape)
    k_err = kern.errors.reshape(shape)
    gv = _scalar(g, v)
    second = g(v + offsets) + g(v - offsets) - 2.0 * gv
    jac = rho ** (d - 1)

    ring = dw @ (k_val * second) * jac
    ring_coarse = dw_coarse @ (k_val * second) * jac
    kernel_error = float((dw @ (k_err * np.abs(second)) * jac) @ rw)
    fine = float(ring @ rw)
    mid = float(ring @ rm)
    coarse = float(ring_coarse @ rw)

    shells = (ring[: radial.n_log] * rw[: radial.n_log]).reshape(-1, rule.panel_order).sum(axis=1)
    _cauchy_check(shells, pv, "forward representation")

    core = 0.0
    if pv.pairing and theta_min == 0:
        core = float(_core_correction(ring[0], rho[0], r0, p.s))
    factor = carleman_jacobian(d)
    value = factor * (fine + core)
    error = factor * (abs(fine - mid) + abs(fine - coarse) + kernel_error + abs(core))
    logging.debug(f"Operator: forward Q_s at |v|={np.linalg.norm(v):.4g} = {value:.6g} +/- {error:.2g}")
    return OperatorValue(value, error)


# --- Singular part, reverse representation ---


def _inner_integrals(
    g: Evaluator,
    gv: float,
    v: np.ndarray,
    u: np.ndarray,
    p: KernelParams,
    pv: PVPolicy,
    masks: Sequence[Mask | None],
    *,
    theta_min: float,
    h: float,
    rule: PlaneRule,
):
    """
    For each u_i, the hyperplane integrals over w orthogonal to u_i with |w| <= |u_i| of
    chi(v+w) [g(v+w) - g(v)] btilde(cos theta) |w|^(-(d-1)-2s), one row per mask.

    Returns:
        tuple: values (M, n), errors (M, n), innermost log-shell contributions (M, n, S).
    """
    d = p.d
    n = len(u)
    u_norm = np.linalg.norm(u, axis=1)
    r0 = pv.radius(h)
    if theta_min > 0:
        lo = math.tan(0.5 * theta_min) * u_norm
    elif pv.pairing:
        # Note: paired second differences are integrable below r0, so the cutoff may undercut it
        lo = np.minimum(r0, 0.25 * u_norm)
    else:
        lo = np.full(n, r0)
    active = lo < u_norm
    lo = np.where(active, lo, u_norm)

    knee = 2.0 * h
    smallest = float(np.min(lo[active])) if np.any(active) else knee
    log_panels = int(np.clip(math.ceil(pv.log_panels_per_octave * math.log2(max(knee / smallest, 1.0))), 1, 64))
    radial = hybrid_radial(lo, u_norm, knee, 0.5 * h, log_panels, rule.panel_order)
    rho, rw, rm = radial.radii, radial.weights * active[:, None], radial.mid_weights * active[:, None]

    basis = orthonormal_complement(u / u_norm[:, None])
    n_phi = rule.n_phi
    values = np.zeros((len(masks), n))
    errors = np.zeros((len(masks), n))
    shells = np.zeros((len(masks), n, log_panels))

    n_dirs = 1 if d == 2 else n_phi // 2
    chunk = max(1, rule.max_points // (2 * rho.shape[1] * n_dirs))
    for start in range(0, n, chunk):
        sl = slice(start, start + chunk)
        dirs, dw, dw_coarse = plane_directions(basis[sl], n_phi, half=True)
        r = rho[sl]
        cos_theta, valid = collision_cos_theta(r[:, :, None] * dirs[:, None, 0, :], u[sl, None, :])
        radial_factor = r ** (-1.0 - 2.0 * p.s) * p.angular_factor(cos_theta) * valid
        steps = r[:, :, None, None] * dirs[:, None, :, :]
        plus, minus = v + steps, v - steps
        g_plus = g(plus) - gv
        g_minus = g(minus) - gv
        for k, mask in enumerate(masks):
            if mask is None:
                pair = g_plus + g_minus
            else:
                pair = mask(plus) * g_plus + mask(minus) * g_minus
            dens = radial_factor * (pair @ dw)
            dens_coarse = radial_factor * (pair @ dw_coarse)
            fine = np.sum(dens * rw[sl], axis=1)
            mid = np.sum(dens * rm[sl], axis=1)
            err = np.abs(fine - mid)
            if d == 3:
                err += np.abs(fine - np.sum(dens_coarse * rw[sl], axis=1))
            if pv.pairing and theta_min == 0:
                # Reason: the disc below lo is replaced by its Taylor model, whose size joins the error
                core = _core_correction(dens[:, 0], r[:, 0], lo[sl], p.s) * active[sl]
                fine = fine + core
                err = err + np.abs(core)
            values[k, sl] = fine
            errors[k, sl] = err
            n_log = radial.n_log
            shells[k, sl] = (dens[:, :n_log] * rw[sl, :n_log]).reshape(len(r), -1, rule.panel_order).sum(axis=2)
    return values, errors, shells


def inner_hyperplane_integral(
    g,
    v,
    v_star_prime,
    p: KernelParams,
    pv: PVPolicy | None = None,
    *,
    h: float = 0.1,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    t: float | None = None,
) -> OperatorValue:
    """
    PV integral over v' in v + (v'_* - v)^perp, |v' - v| <= |v'_* - v|, of
    [g(v') - g(v)] btilde(cos theta) |v' - v|^(-(d-1)-2s).

    Args:
        h (float): Resolution of the radial rule away from v.
    """
    pv = pv or PVPolicy()
    pv.check(p)
    rule = rule or PlaneRule()
    g = as_evaluator(g, t)
    v = np.asarray(v, dtype=float)
    u = np.asarray(v_star_prime, dtype=float)[None, :] - v
    require_evaluation_dimension(p.d)
    if np.linalg.norm(u) < DEGENERATE_FACTOR * h:
        return OperatorValue(0.0, 0.0)
    values, errors, _ = _inner_integrals(g, _scalar(g, v), v, u, p, pv, [None], theta_min=theta_min, h=h, rule=rule)
    return OperatorValue(float(values[0, 0]), float(errors[0, 0]))


@dataclass(frozen=True)
class _ReverseTerms:
    star_norms: np.ndarray
    weights: np.ndarray
    lattice: np.ndarray
    inner: np.ndarray
    inner_errors: np.ndarray
    tail_factor: float

    def total(self, select: np.ndarray, row: int | None = None) -> OperatorValue:
        inner = self.inner.sum(axis=0) if row is None else self.inner[row]
        inner_err = self.inner_errors.sum(axis=0) if row is None else self.inner_errors[row]
        w = self.weights * select
        fine = float(w @ inner)
        coarse = float((w * self.lattice) @ inner)
        error = float(w @ inner_err) + abs(fine - coarse) / 3.0
        peak = float(np.max(np.abs(inner[select]), initial=0.0))
        if peak > 0 and self.tail_factor > 0:
            error += self.tail_factor * peak
        return OperatorValue(fine, error)


def _reverse_terms(
    f: GridDistribution,
    g: Evaluator,
    v: np.ndarray,
    p: KernelParams,
    pv: PVPolicy,
    masks: Sequence[Mask | None],
    *,
    theta_min: float,
    rule: PlaneRule,
) -> _ReverseTerms:
    grid = f.grid
    d = p.d
    u_all = grid.nodes - v
    u_norm = np.linalg.norm(u_all, axis=1)
    keep = (f.flat > 0) & (u_norm > DEGENERATE_FACTOR * grid.h)
    u = u_all[keep]
    weights = carleman_jacobian(d) * f.flat[keep] * grid.cell_volume * u_norm[keep] ** (p.gamma + 2.0 * p.s)
    tail = f.tail.exterior_moment(grid.r_max, d, p.gamma + 2.0 * p.s)
    tail_factor = carleman_jacobian(d) * tail

    if len(u) == 0:
        empty = np.zeros((len(masks), 0))
        return _ReverseTerms(np.zeros(0), np.zeros(0), np.zeros(0), empty, empty, tail_factor)
    gv = _scalar(g, v)
    inner, inner_err, shells = _inner_integrals(g, gv, v, u, p, pv, masks, theta_min=theta_min, h=grid.h, rule=rule)
    _cauchy_check(np.einsum("j,mjs->s", weights, shells), pv, "reverse representation")
    return _ReverseTerms(
        star_norms=grid.norms[keep],
        weights=weights,
        lattice=coarse_lattice(grid)[keep],
        inner=inner,
        inner_errors=inner_err,
        tail_factor=tail_factor,
    )


def q_s_reverse(
    f: GridDistribution,
    g,
    v,
    p: KernelParams,
    pv: PVPolicy | None = None,
    *,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    t: float | None = None,
) -> OperatorValue:
    """
    Q_s(f, g)(v) = 2^(d-1) int f(v'_*) |v - v'_*|^(gamma+2s) I(v'_*) dv'_*, with I the
    principal value hyperplane integral of [g(v') - g(v)] btilde |v' - v|^(-(d-1)-2s).

    The outer integral is the node sum over the grid.
    """
    pv = pv or PVPolicy()
    pv.check(p)
    rule = rule or PlaneRule()
    g = as_evaluator(g, t)
    v = np.asarray(v, dtype=float)
    require_evaluation_dimension(p.d)
    terms = _reverse_terms(f, g, v, p, pv, [None], theta_min=theta_min, rule=rule)
    result = terms.total(np.ones(len(terms.weights), dtype=bool))
    logging.debug(f"Operator: reverse Q_s at |v|={np.linalg.norm(v):.4g} = {result.value:.6g} +/- {result.error:.2g}")
    return result


# --- Good / bad split ---


@dataclass(frozen=True)
class SplitResult:
    """
    Q(f, g)(v) split as good + bad1 + bad2 + bad3 + q_ns.

    total is the reverse-representation Q_s plus q_ns. With forward_bad, bad2 and bad3 come
    from the forward representation, so total and the sum of the parts differ by the gap
    between the two representations; recombines checks that gap against the summed
    quadrature errors. gaps records the forward minus reverse difference per term.
    """

    good: float
    bad1: float
    bad2: float
    bad3: float
    q_ns: float
    total: float
    q_s: float
    errors: dict[str, float] = field(default_factory=dict)
    gaps: dict[str, float] = field(default_factory=dict)

    @property
    def parts_sum(self) -> float:
        return self.good + self.bad1 + self.bad2 + self.bad3 + self.q_ns

    @property
    def bad(self) -> float:
        return self.bad1 + self.bad2 + self.bad3

    @property
    def combined_error(self) -> float:
        return sum(self.errors.get(k, 0.0) for k in ("good", "bad1", "bad2", "bad3", "q_ns"))

    @property
    def recombines(self) -> bool:
        return abs(self.total - self.parts_sum) <= self.combined_error + 1e-12 * abs(self.total)

    def to_dict(self) -> dict:
        row = {k: getattr(self, k) for k in ("good", "bad1", "bad2", "bad3", "q_ns", "total", "q_s")}
        row.update({f"{k}_error": v for k, v in self.errors.items()})
        row.update({f"{k}_gap": v for k, v in self.gaps.items()})
        return row


def _norm_mask(lower: float | None = None, upper: float | None = None, strict_lower: bool = False) -> Mask:
    def mask(points: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(points, axis=-1)
        out = np.ones(r.shape, dtype=bool)
        if lower is not None:
            out &= (r > lower) if strict_lower else (r >= lower)
        if upper is not None:
            out &= r < upper
        return out

    return mask


def _polar_rule(d: int, a: float, b: float, h: float, order: int):
    """Points and weights of a quadrature on the shell a <= |x| < b centred at the origin."""
    n_r = int(np.clip(math.ceil((b - a) / (0.5 * h)), 2, 64))
    t, tw, tm = composite_legendre(n_r, order)
    r = a + (b - a) * t
    if d == 2:
        n_ang = int(np.clip(math.ceil(2.0 * math.pi * b / (0.5 * h)), 16, 256))
        phi = 2.0 * math.pi * np.arange(n_ang) / n_ang
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        dir_w = np.full(n_ang, 2.0 * math.pi / n_ang)
    else:
        n_phi = int(np.clip(math.ceil(math.pi * b / (0.5 * h)), 8, 64))
        x, w = special.roots_legendre(max(4, n_phi // 2))
        phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
        ring = np.sqrt(1.0 - x**2)
        dirs = np.stack(
            [
                (ring[:, None] * np.cos(phi)[None, :]).ravel(),
                (ring[:, None] * np.sin(phi)[None, :]).ravel(),
                np.repeat(x, n_phi),
            ],
            axis=-1,
        )
        dir_w = np.outer(w, np.full(n_phi, 2.0 * math.pi / n_phi)).ravel()
    points = r[:, None, None] * dirs[None, :, :]
    jac = (b - a) * r ** (d - 1)
    weights = (jac * tw)[:, None] * dir_w[None, :]
    mid = (jac * tm)[:, None] * dir_w[None, :]
    return points.reshape(-1, d), weights.ravel(), mid.ravel()


def _forward_shell_term(
    f: GridDistribution,
    g: Evaluator,
    gv: float,
    v: np.ndarray,
    p: KernelParams,
    a: float,
    b: float,
    star_mask: Mask,
    *,
    theta_min: float,
    rule: PlaneRule,
) -> OperatorValue:
    """2^(d-1) int over a <= |v'| < b of K_f restricted to star_mask, times [g(v') - g(v)]."""
    if b <= a:
        return OperatorValue(0.0, 0.0)
    points, weights, mid = _polar_rule(p.d, a, b, f.grid.h, rule.panel_order)
    kern = kernel_Kf_many(f, v, points - v, p, theta_min=theta_min, rule=rule, mask=star_mask)
    diff = g(points) - gv
    fine = float(np.sum(weights * kern.values * diff))
    coarse = float(np.sum(mid * kern.values * diff))
    kernel_error = float(np.sum(weights * kern.errors * np.abs(diff)))
    factor = carleman_jacobian(p.d)
    return OperatorValue(factor * fine, factor * (abs(fine - coarse) + kernel_error))


def split_operator(
    f: GridDistribution,
    g,
    v,
    q: float,
    p: KernelParams,
    pv: PVPolicy | None = None,
    *,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    t: float | None = None,
    forward_bad: bool = True,
) -> SplitResult:
    """
    Evaluates the good term, the three bad terms and Q_ns at v.

    good integrates over |v'_*| <= c1(q)|v| in the reverse representation; bad1 over
    |v'_*| > c1(q)|v| with |v'| > |v|/2; bad2 and bad3 restrict v' to |v'| < c3(q)|v| and
    c3(q)|v| <= |v'| < |v|/2. With q = 0 the good region is everything and the bad terms
    vanish.

    Args:
        forward_bad (bool): Recompute bad2 and bad3 in the forward representation.

    Raises:
        DomainError: For v = 0 or 0 < q < 1.
    """
    pv = pv or PVPolicy()
    pv.check(p)
    rule = rule or PlaneRule()
    g = as_evaluator(g, t)
    v = np.asarray(v, dtype=float)
    v_norm = float(np.linalg.norm(v))
    if v_norm == 0:
        raise DomainError("the good/bad split is defined for v != 0")
    require_evaluation_dimension(p.d)

    if q == 0:
        c1v, c3v = math.inf, 0.0
        masks: list[Mask | None] = [None]
    else:
        consts = splitting_constants(q)
        c1v, c3v = consts.c1 * v_norm, consts.c3 * v_norm
        masks = [
            _norm_mask(lower=0.5 * v_norm, strict_lower=True),
            _norm_mask(upper=c3v),
            _norm_mask(lower=c3v, upper=0.5 * v_norm),
        ]

    terms = _reverse_terms(f, g, v, p, pv, masks, theta_min=theta_min, rule=rule)
    good_sel = terms.star_norms <= c1v
    good = terms.total(good_sel)
    if q == 0:
        zero = OperatorValue(0.0, 0.0)
        bad1 = bad2_rev = bad3_rev = zero
    else:
        bad1 = terms.total(~good_sel, row=0)
        bad2_rev = terms.total(~good_sel, row=1)
        bad3_rev = terms.total(~good_sel, row=2)
    q_s = good.value + bad1.value + bad2_rev.value + bad3_rev.value
    q_s_error = good.error + bad1.error + bad2_rev.error + bad3_rev.error

    bad2, bad3 = bad2_rev, bad3_rev
    bad2_error, bad3_error = bad2_rev.error, bad3_rev.error
    gaps = {}
    if q != 0 and forward_bad:
        gv = _scalar(g, v)
        star_mask = _norm_mask(lower=c1v)
        kw = dict(theta_min=theta_min, rule=rule)
        fwd2 = _forward_shell_term(f, g, gv, v, p, 0.0, c3v, star_mask, **kw)
        fwd3 = _forward_shell_term(f, g, gv, v, p, c3v, 0.5 * v_norm, star_mask, **kw)
        bad2_error = fwd2.error + bad2_rev.error
        bad3_error = fwd3.error + bad3_rev.error
        gaps = {"bad2": fwd2.value - bad2_rev.value, "bad3": fwd3.value - bad3_rev.value}
        bad2, bad3 = fwd2, fwd3

    non_singular = q_ns(f, v, p, theta_min=theta_min)
    result = SplitResult(
        good=good.value,
        bad1=bad1.value,
        bad2=bad2.value,
        bad3=bad3.value,
        q_ns=non_singular.value,
        total=q_s + non_singular.value,
        q_s=q_s,
        errors={
            "good": good.error,
            "bad1": bad1.error,
            "bad2": bad2_error,
            "bad3": bad3_error,
            "q_ns": non_singular.error,
            "q_s": q_s_error,
            "total": q_s_error + non_singular.error,
        },
        gaps=gaps,
    )
    logging.debug(f"Operator: split at |v|={v_norm:.4g}, q={q}: {result.to_dict()}")
    return result


# --- Sigma-representation oracle ---


@dataclass(frozen=True)
class SigmaRule:
    """
    Angular quadrature of the sigma oracle: Gauss-Legendre in log(theta) on
    [theta_min, pi/2], and n_phi azimuths around v - v_* for d = 3.

    max_points caps the working array of one parallel block, counted in
    (pair, stencil node) entries for the conservative grid operator.
    """

    n_theta: int = 16
    n_phi: int = 16
    max_points: int = 2_000_000


def _sigma_angles(kernel: AngularKernel, rule: SigmaRule):
    d = kernel.params.d
    x, w = special.roots_legendre(rule.n_theta)
    lo, hi = math.log(kernel.theta_min), math.log(math.pi / 2)
    theta = np.exp(lo + 0.5 * (hi - lo) * (x + 1.0))
    d_theta = 0.5 * (hi - lo) * w * theta
    weights = kernel(theta) * np.sin(theta) ** (d - 2) * d_theta
    if d == 2:
        return theta, weights, np.array([1.0, -1.0]), np.ones(2)
    phi = 2.0 * math.pi * np.arange(rule.n_phi) / rule.n_phi
    return theta, weights, phi, np.full(rule.n_phi, 2.0 * math.pi / rule.n_phi)


def _sigma_gain_loss(
    f: GridDistribution,
    v: np.ndarray,
    fv: float,
    p: KernelParams,
    kernel: AngularKernel,
    rule: SigmaRule,
) -> tuple[float, float]:
    grid = f.grid
    d = p.d
    rel = v - grid.nodes
    rel_norm = np.linalg.norm(rel, axis=1)
    keep = rel_norm > DEGENERATE_FACTOR * grid.h
    rel, rel_norm = rel[keep], rel_norm[keep]
    nodes, f_star = grid.nodes[keep], f.flat[keep]
    speed = rel_norm**p.gamma * grid.cell_volume

    theta, theta_w, phi, phi_w = _sigma_angles(kernel, rule)
    angular_mass = float(theta_w.sum() * phi_w.sum())
    loss = fv * float(f_star @ speed) * angular_mass

    k = rel / rel_norm[:, None]
    basis = orthonormal_complement(k)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    if d == 2:
        perp = phi[None, :, None] * basis[:, 0:1, :]  # the two branches +/- k_perp
    else:
        perp = np.cos(phi)[None, :, None] * basis[:, 0:1, :] + np.sin(phi)[None, :, None] * basis[:, 1:2, :]

    gain = 0.0
    chunk = max(1, rule.max_points // (2 * len(theta) * len(phi)))
    for start in range(0, len(rel), chunk):
        sl = slice(start, start + chunk)
        sigma = cos_t[None, :, None, None] * k[sl, None, None, :] + sin_t[None, :, None, None] * perp[sl, None, :, :]
        centre = 0.5 * (v + nodes[sl])[:, None, None, :]
        half = 0.5 * rel_norm[sl, None, None, None]
        post = f(centre + half * sigma)
        post_star = f(centre - half * sigma)
        gain += float(np.einsum("ntp,n,t,p->", post * post_star, speed[sl], theta_w, phi_w))
    return gain, loss


def q_sigma_oracle(
    f: GridDistribution,
    v,
    p: KernelParams,
    theta_min: float,
    *,
    rule: SigmaRule | None = None,
    estimate_error: bool = True,
) -> OperatorValue:
    """
    Direct quadrature of int int [f(v'_*) f(v') - f(v_*) f(v)] B dv_* dsigma with theta >= theta_min.

    v_* runs over the grid nodes; the error estimate is the change obtained by switching the
    off-grid interpolation rule.
    """
    if theta_min <= 0:
        raise OutOfRange("theta_min", "the sigma oracle needs an angular cutoff theta_min > 0")
    require_evaluation_dimension(p.d)
    rule = rule or SigmaRule()
    kernel = AngularKernel(p, theta_min)
    v = np.asarray(v, dtype=float)
    fv = _scalar(f, v)
    gain, loss = _sigma_gain_loss(f, v, fv, p, kernel, rule)
    value = gain - loss
    error = 1e-13 * (abs(gain) + abs(loss))
    if estimate_error:
        other = next(name for name in INTERPOLATION_RULES if name != f.interpolation)
        alt = f.with_interpolation(other)
        alt_gain, alt_loss = _sigma_gain_loss(alt, v, _scalar(alt, v), p, kernel, rule)
        error += abs((alt_gain - alt_loss) - value)
    return OperatorValue(value, error)


def quadratic_deposit(grid: VelocityGrid, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Spreads a unit mass at each point over the 3^d nodes around its nearest node, with
    tensor-product quadratic Lagrange weights. The weights reproduce 1, v and |v|^2 exactly,
    so a deposit carries the mass, momentum and energy of the point it replaces.

    Returns:
        tuple: Linear node indices (m, 3^d), weights (m, 3^d) and the mask of points whose
            stencil lies inside the grid. Rows outside the grid carry zero weights.
    """
    d, n = grid.d, grid.n_per_axis
    coords = grid.index_coordinates(points)
    centre = np.rint(coords)
    delta = coords - centre
    inside = np.all((centre >= 1) & (centre <= n - 2), axis=0)
    per_axis = np.stack([0.5 * delta * (delta - 1.0), 1.0 - delta**2, 0.5 * delta * (delta + 1.0)], axis=-1)
    offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)))
    weights = np.ones((coords.shape[1], len(offsets)))
    for a in range(d):
        weights *= per_axis[a][:, offsets[:, a] + 1]
    weights *= inside[:, None]
    idx = np.clip(centre.T.astype(np.int64)[:, None, :] + offsets[None, :, :], 0, n - 1)
    flat = np.ravel_multi_index(tuple(idx[..., a] for a in range(d)), grid.shape)
    return flat, weights, inside


def _conservative_block(
    f: GridDistribution,
    block: np.ndarray,
    support: np.ndarray,
    p: KernelParams,
    angles: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> np.ndarray:
    grid = f.grid
    nodes, values, size = grid.nodes, f.flat, grid.size
    i = np.repeat(block, len(support))
    j = np.tile(support, len(block))
    rel = nodes[i] - nodes[j]
    rel_norm = np.linalg.norm(rel, axis=1)
    keep = rel_norm > DEGENERATE_FACTOR * grid.h
    i, j, rel, rel_norm = i[keep], j[keep], rel[keep], rel_norm[keep]
    out = np.zeros(size)
    if len(i) == 0:
        return out

    weight = values[i] * values[j] * rel_norm**p.gamma * grid.cell_volume
    k = rel / rel_norm[:, None]
    basis = orthonormal_complement(k)
    centre = 0.5 * (nodes[i] + nodes[j])
    half = 0.5 * rel_norm[:, None]
    theta, theta_w, phi, phi_w = angles
    for ct, st, tw in zip(np.cos(theta), np.sin(theta), theta_w):
        for b in range(len(phi)):
            if p.d == 2:
                perp = phi[b] * basis[:, 0, :]
            else:
                perp = math.cos(phi[b]) * basis[:, 0, :] + math.sin(phi[b]) * basis[:, 1, :]
            sigma = ct * k + st * perp
            idx, w, inside = quadratic_deposit(grid, centre + half * sigma)
            idx_star, w_star, inside_star = quadratic_deposit(grid, centre - half * sigma)
            # Reason: a collision whose outgoing pair leaves the box is dropped whole, loss included
            c = 0.5 * weight * (tw * phi_w[b]) * (inside & inside_star)
            out += np.bincount(idx.ravel(), weights=(w * c[:, None]).ravel(), minlength=size)
            out += np.bincount(idx_star.ravel(), weights=(w_star * c[:, None]).ravel(), minlength=size)
            out -= np.bincount(i, weights=c, minlength=size)
            out -= np.bincount(j, weights=c, minlength=size)
    return out


def q_sigma_grid(
    f: GridDistribution,
    p: KernelParams,
    theta_min: float,
    *,
    rule: SigmaRule | None = None,
    threads: int | None = None,
    conservative: bool = True,
) -> np.ndarray:
    """
    The truncated collision operator at every grid node, in linear node order.

    The conservative scheme works on the weak form: every pair of nodes and every sampled
    sigma removes half the collision weight from each incoming node and deposits it at the
    two outgoing velocities with quadratic_deposit. Mass, momentum and energy of the result
    vanish to rounding, whatever the resolution. Tails beyond the grid are not seen.
    conservative=False evaluates the pointwise oracle at each node instead.
    """
    if theta_min <= 0:
        raise OutOfRange("theta_min", "the sigma oracle needs an angular cutoff theta_min > 0")
    require_evaluation_dimension(p.d)
    rule = rule or SigmaRule()
    kernel = AngularKernel(p, theta_min)
    grid = f.grid
    nodes, values = grid.nodes, f.flat

    if not conservative:

        def at_node(i: int) -> float:
            gain, loss = _sigma_gain_loss(f, nodes[i], float(values[i]), p, kernel, rule)
            return gain - loss

        return np.asarray(parallel_map(at_node, range(grid.size), threads), dtype=float)

    support = np.flatnonzero(values > 0)
    if len(support) == 0:
        return np.zeros(grid.size)
    angles = _sigma_angles(kernel, rule)
    pairs_per_block = max(1, rule.max_points // (2 * 3**p.d))
    size = max(1, pairs_per_block // len(support))
    blocks = [support[k : k + size] for k in range(0, len(support), size)]
    parts = parallel_map(lambda block: _conservative_block(f, block, support, p, angles), blocks, threads)
    rate = np.sum(parts, axis=0)
    logging.debug(f"Operator: conservative sigma rate over {len(support)} nodes in {len(blocks)} blocks")
    return rate
