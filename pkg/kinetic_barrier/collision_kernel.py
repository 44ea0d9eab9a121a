"""
Collision kernel B(r, cos theta) = r^gamma b(cos theta), the cancellation constant C_S and
the Carleman kernel K_f.

The angular function is used in its symmetrized form: b is supported on theta in (0, pi/2],
which is the convention under which the sigma and Carleman representations coincide.
"""
from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, special

from kinetic_barrier.core_model import (
    GridDistribution,
    KernelParams,
    require_evaluation_dimension,
    sphere_area,
)
from kinetic_barrier.errors import (
    DegeneratePair,
    DomainError,
    OutOfRange,
    QuadratureNonConvergence,
    SingularAngle,
)

CS_RELATIVE_TARGET = 1e-8
DEGENERATE_FACTOR = 1e-12


def carleman_jacobian(d: int) -> float:
    """Factor relating dv_* dsigma to the Carleman measure |w|^-1 |v - v_*|^-(d-2) dw du."""
    return 2.0 ** (d - 1)


# --- Angular function ---


def angular_profile(theta, p: KernelParams) -> np.ndarray:
    """(sin theta/2)^-(d-2)+gamma (tan theta/2)^-(gamma+2s+1), without the smooth factor."""
    half = 0.5 * np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        return np.sin(half) ** (-(p.d - 2) + p.gamma) * np.tan(half) ** (-(p.gamma + 2.0 * p.s + 1.0))


def b_angular(cos_theta, p: KernelParams, *, allow_singular: bool = False):
    """
    Exact product form of the angular kernel b(cos theta).

    Args:
        cos_theta: Scalar or array in [-1, 1].
        p (KernelParams): Kernel parameters; b-tilde is taken from them.
        allow_singular (bool): Return +inf at theta = 0 instead of raising.

    Returns:
        float | np.ndarray: b(cos theta), same shape as the input.

    Raises:
        SingularAngle: At theta = 0 unless allow_singular is set.
        DomainError: For cos theta outside [-1, 1].
    """
    x = np.asarray(cos_theta, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise DomainError(f"cos theta must lie in [-1, 1], got range {x.min()}..{x.max()}")
    grazing = x >= 1.0
    if np.any(grazing) and not allow_singular:
        raise SingularAngle("b(cos theta) is not integrable at theta = 0")
    value = angular_profile(np.arccos(x), p) * p.angular_factor(x)
    value = np.where(grazing, np.inf, value)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class AngularKernel:
    """
    The symmetrized angular kernel, optionally truncated at theta_min.

    Calling it with an array of angles returns b on [theta_min, pi/2] and zero elsewhere.
    """

    params: KernelParams
    theta_min: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.theta_min < math.pi / 2):
            raise OutOfRange("theta_min", f"must lie in [0, pi/2), got {self.theta_min}")

    def __call__(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        support = (theta >= max(self.theta_min, 0.0)) & (theta <= math.pi / 2) & (theta > 0)
        safe = np.where(support, theta, math.pi / 2)
        value = angular_profile(safe, self.params) * self.params.angular_factor(np.cos(safe))
        return np.where(support, value, 0.0)

    @property
    def truncated(self) -> bool:
        return self.theta_min > 0

    @cached_property
    def angular_mass(self) -> float:
        """|S^(d-2)| times the integral of sin^(d-2) theta b over [theta_min, pi/2]."""
        if not self.truncated:
            raise DomainError("the untruncated angular kernel has infinite mass")
        d = self.params.d
        value, _ = integrate.quad(
            lambda t: math.sin(t) ** (d - 2) * float(self(t)), self.theta_min, math.pi / 2, limit=200
        )
        return sphere_area(d - 2) * value


# --- Cancellation constant ---


class CancellationConstant(NamedTuple):
    value: float
    quadrature_error: float


def _cancellation_integrand(p: KernelParams) -> Callable[[float], float]:
    d, gamma = p.d, p.gamma

    def integrand(theta: float) -> float:
        half = 0.5 * theta
        bracket = math.expm1(-(d + gamma) * math.log(math.cos(half)))
        b = float(angular_profile(theta, p)) * float(p.angular_factor(math.cos(theta)))
        return math.sin(theta) ** (d - 2) * bracket * b

    return integrand


def _quad_recorded(func, a, b, **kwargs) -> tuple[float, float, bool]:
    """Adaptive quadrature; the flag reports whether scipy warned about its own estimate."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        value, err = integrate.quad(func, a, b, epsabs=0.0, epsrel=1e-10, limit=400, **kwargs)
    warned = any(issubclass(c.category, integrate.IntegrationWarning) for c in caught)
    if warned:
        logging.debug(f"Kernel: adaptive quadrature warned: {caught[0].message}")
    return value, err, warned


@functools.lru_cache(maxsize=64)
def cancellation_constant(p: KernelParams, theta_min: float = 0.0) -> CancellationConstant:
    """
    C_S = |S^(d-2)| * int_theta_min^(pi/2) sin^(d-2) theta [(cos theta/2)^-(d+gamma) - 1] b dtheta.

    Near theta = 0 the integrand behaves like theta^(1-2s). The untruncated integral is
    computed with an algebraic endpoint weight theta^(1-2s) acting on the smooth quotient,
    and cross-checked with a Gauss-Jacobi rule on the same quotient.

    Raises:
        QuadratureNonConvergence: When the two estimates disagree beyond 1e-8 relative.
    """
    if not (0.0 <= theta_min < math.pi / 2):
        raise OutOfRange("theta_min", f"must lie in [0, pi/2), got {theta_min}")
    integrand = _cancellation_integrand(p)
    upper = math.pi / 2

    if theta_min > 0:
        value, err, warned = _quad_recorded(integrand, theta_min, upper)
        nodes, weights = special.roots_legendre(128)
        half_width = 0.5 * (upper - theta_min)
        check = half_width * sum(w * integrand(theta_min + half_width * (1 + x)) for x, w in zip(nodes, weights))
    else:
        alpha = 1.0 - 2.0 * p.s
        limit_at_zero = (p.d + p.gamma) / 8.0 * 2.0 ** (p.d - 1 + 2.0 * p.s) * float(p.angular_factor(1.0))

        def smooth(theta: float) -> float:
            if theta <= 0.0:
                return limit_at_zero
            return integrand(theta) / theta**alpha

        value, err, warned = _quad_recorded(smooth, 0.0, upper, weight="alg", wvar=(alpha, 0.0))
        # theta = (pi/4)(1 + x) maps [-1, 1] onto [0, pi/2]; the weight (1+x)^alpha carries theta^alpha
        nodes, weights = special.roots_jacobi(96, 0.0, alpha)
        scale = (math.pi / 4) ** (alpha + 1.0)
        check = scale * sum(w * smooth(math.pi / 4 * (1 + x)) for x, w in zip(nodes, weights))

    area = sphere_area(p.d - 2)
    error = max(err, abs(value - check)) if warned else abs(value - check)
    if not math.isfinite(value) or error > CS_RELATIVE_TARGET * abs(value):
        raise QuadratureNonConvergence(
            f"C_S estimate {value} has error {error}, above the {CS_RELATIVE_TARGET:g} relative target"
        )
    logging.debug(f"Kernel: C_S(d={p.d}, gamma={p.gamma}, s={p.s}, theta_min={theta_min}) = {area * value}")
    return CancellationConstant(value=area * value, quadrature_error=area * error)


# --- Hyperplane quadrature shared by the Carleman kernel and the split operator ---


@dataclass(frozen=True)
class PlaneRule:
    """
    Discretization of integrals over a hyperplane through v.

    Attributes:
        panel_order (int): Gauss-Legendre nodes per radial panel.
        n_phi (int): In-plane angular nodes (d = 3 only), even.
        plane_factor (float): R_plane = plane_factor * r_max for inputs with a power-law tail.
        max_panels (int): Cap on radial panels per integral.
        max_points (int): Cap on evaluation points held in memory at once.
    """

    panel_order: int = 3
    n_phi: int = 48
    plane_factor: float = 4.0
    max_panels: int = 2048
    max_points: int = 2_000_000


def composite_legendre(n_panels: int, order: int = 3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Composite Gauss-Legendre rule on [0, 1].

    Returns:
        tuple: nodes, weights, and midpoint-rule weights on the same nodes (nonzero only at
        each panel centre, which requires an odd order). The difference of the two rules is
        the radial error estimate.
    """
    x, w = special.roots_legendre(order)
    edges = np.arange(n_panels, dtype=float)
    nodes = ((edges[:, None] + 0.5 * (x[None, :] + 1.0)) / n_panels).ravel()
    weights = np.tile(0.5 * w / n_panels, n_panels)
    mid = np.zeros((n_panels, order))
    mid[:, order // 2] = 1.0 / n_panels
    return nodes, weights, mid.ravel()


def log_legendre(lo: np.ndarray, hi: np.ndarray, n_panels: int, order: int = 3):
    """
    Composite Gauss-Legendre rule in log(rho) on [lo_i, hi_i] for each row i.

    Returns:
        tuple: radii (m, K), weights (m, K) in d(rho), midpoint weights (m, K).
    """
    t, w, w_mid = composite_legendre(n_panels, order)
    log_lo = np.log(lo)[:, None]
    span = (np.log(hi) - np.log(lo))[:, None]
    radii = np.exp(log_lo + span * t[None, :])
    return radii, span * w[None, :] * radii, span * w_mid[None, :] * radii


def orthonormal_complement(normals: np.ndarray) -> np.ndarray:
    """Orthonormal bases of the hyperplanes orthogonal to unit normals (m, d) -> (m, d-1, d)."""
    n = np.asarray(normals, dtype=float)
    d = n.shape[1]
    require_evaluation_dimension(d)
    if d == 2:
        return np.stack([-n[:, 1], n[:, 0]], axis=-1)[:, None, :]
    helper = np.zeros_like(n)
    helper[np.arange(len(n)), np.argmin(np.abs(n), axis=1)] = 1.0
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    return np.stack([e1, e2], axis=1)


def plane_directions(basis: np.ndarray, n_phi: int, half: bool = False):
    """
    Unit directions spanning the planes and their angular weights.

    With half=True only one direction of each antipodal pair is returned, with the weight of
    the pair, for integrands that are already symmetrized.

    Returns:
        tuple: directions (m, J, d), weights (J,), and the weights of the nested rule that
        uses every other node (J,).
    """
    m, k, d = basis.shape
    if k == 1:
        if half:
            return basis, np.ones(1), np.ones(1)
        dirs = np.concatenate([basis, -basis], axis=1)
        return dirs, np.ones(2), np.ones(2)
    span = math.pi if half else 2.0 * math.pi
    count = n_phi // 2 if half else n_phi
    phi = span * np.arange(count) / count
    dirs = np.cos(phi)[None, :, None] * basis[:, 0:1, :] + np.sin(phi)[None, :, None] * basis[:, 1:2, :]
    weights = np.full(count, span / count)
    coarse = np.zeros(count)
    coarse[::2] = 2.0 * span / count
    return dirs, weights, coarse


class KernelValues(NamedTuple):
    values: np.ndarray
    errors: np.ndarray


def collision_cos_theta(w: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    cos theta of the collision with v' = v + w and v'_* = v + u, via v_* = v + w + u.

    Returns:
        tuple: cos theta and the mask of non-degenerate configurations (|v - v_*| >= 1e-12).
    """
    v_rel = -(w + u)  # v - v_*
    post = w - u  # v' - v'_*
    pre = -u  # v' - v_*
    rel_norm = np.linalg.norm(v_rel, axis=-1)
    valid = rel_norm >= DEGENERATE_FACTOR
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_half = np.sum(pre * post, axis=-1) / (np.linalg.norm(pre, axis=-1) * np.linalg.norm(post, axis=-1))
    cos_half = np.where(valid, np.clip(cos_half, -1.0, 1.0), 1.0)
    return 2.0 * cos_half**2 - 1.0, valid


def plane_outer_radius(f: GridDistribution, v: np.ndarray, rule: PlaneRule) -> float:
    """Largest |u| at which v + u can still see a nonzero f."""
    if f.tail.kind == "zero" or f.tail.amplitude == 0.0:
        return f.grid.r_max * math.sqrt(f.grid.d) + float(np.linalg.norm(v))
    return rule.plane_factor * f.grid.r_max


def plane_tail_remainder(f: GridDistribution, p: KernelParams, radius: float) -> float:
    """Bound on the part of the hyperplane integral beyond radius carried by a power-law tail."""
    if f.tail.kind == "zero" or f.tail.amplitude == 0.0:
        return 0.0
    exponent = p.d + p.gamma + 2.0 * p.s - f.tail.q_tail
    if exponent >= 0:
        return math.inf
    return f.tail.amplitude * sphere_area(p.d - 2) * p.btilde_hi * radius**exponent / (-exponent)


def kernel_Kf_many(
    f: GridDistribution,
    v,
    w: np.ndarray,
    p: KernelParams,
    *,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
    mask: Callable[[np.ndarray], np.ndarray] | None = None,
) -> KernelValues:
    """
    K_f(v, v + w_i) for a batch of offsets w_i.

    K_f(v, v+w) = |w|^(-d-2s) * int over u orthogonal to w, |u| >= |w| of
    f(v+u) |u|^(gamma+2s+1) btilde(cos theta) du. The lower limit |u| >= |w| is the
    symmetrized support theta <= pi/2; with theta_min > 0 the plane is further cut at
    |u| <= |w| / tan(theta_min/2).

    Args:
        mask: Optional indicator on v + u restricting the plane integral.

    Returns:
        KernelValues: Values and error estimates, shape (m,).
    """
    rule = rule or PlaneRule()
    v = np.asarray(v, dtype=float)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    d = p.d
    require_evaluation_dimension(d)
    m = len(w)
    values = np.zeros(m)
    errors = np.zeros(m)
    if m == 0 or not np.any(f.values) and f.tail.amplitude == 0.0:
        return KernelValues(values, errors)

    w_norm = np.linalg.norm(w, axis=1)
    outer = plane_outer_radius(f, v, rule)
    lo = w_norm
    hi = np.full(m, outer)
    if theta_min > 0:
        hi = np.minimum(hi, w_norm / math.tan(0.5 * theta_min))
    active = (hi > lo) & (w_norm > 0)
    if not np.any(active):
        return KernelValues(values, errors)

    h = f.grid.h
    n_panels = int(np.clip(math.ceil(float(np.max((hi - lo)[active])) / h), 1, rule.max_panels))
    t, tw, tw_mid = composite_legendre(n_panels, rule.panel_order)
    n_dirs = 2 if d == 2 else rule.n_phi
    chunk = max(1, rule.max_points // (len(t) * n_dirs))
    remainder_at = plane_tail_remainder(f, p, outer)

    idx_all = np.flatnonzero(active)
    for start in range(0, len(idx_all), chunk):
        idx = idx_all[start : start + chunk]
        normals = w[idx] / w_norm[idx, None]
        dirs, dir_w, dir_w_coarse = plane_directions(orthonormal_complement(normals), rule.n_phi)
        span = (hi[idx] - lo[idx])[:, None]
        rho = lo[idx, None] + span * t[None, :]  # (k, K)

        u_rep = rho[:, :, None] * dirs[:, None, 0, :]
        cos_theta, valid = collision_cos_theta(w[idx, None, :], u_rep)
        radial = rho ** (p.gamma + 2.0 * p.s + 1.0 + (d - 2)) * p.angular_factor(cos_theta) * valid

        points = v + rho[:, :, None, None] * dirs[:, None, :, :]  # (k, K, J, d)
        fv = f(points.reshape(-1, d)).reshape(points.shape[:-1])
        if mask is not None:
            fv = fv * mask(points.reshape(-1, d)).reshape(fv.shape)
        ring = np.einsum("kij,j->ki", fv, dir_w)
        ring_coarse = np.einsum("kij,j->ki", fv, dir_w_coarse)

        scale = w_norm[idx] ** (-d - 2.0 * p.s)
        full = np.sum(radial * ring * span * tw[None, :], axis=1)
        mid = np.sum(radial * ring * span * tw_mid[None, :], axis=1)
        coarse = np.sum(radial * ring_coarse * span * tw[None, :], axis=1)
        values[idx] = scale * full
        err = np.abs(full - mid) + (np.abs(full - coarse) if d == 3 else 0.0)
        err = err + np.where(np.isclose(hi[idx], outer), remainder_at, 0.0)
        errors[idx] = scale * err
    return KernelValues(values, errors)


def kernel_Kf(
    f: GridDistribution,
    v,
    v_prime,
    p: KernelParams,
    *,
    theta_min: float = 0.0,
    rule: PlaneRule | None = None,
) -> float:
    """
    Carleman kernel K_f(v, v') by quadrature on the hyperplane through v orthogonal to v' - v.

    Raises:
        DegeneratePair: When |v' - v| < 1e-12 h.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(v_prime, dtype=float) - v
    if np.linalg.norm(w) < DEGENERATE_FACTOR * f.grid.h:
        raise DegeneratePair(f"|v' - v| = {np.linalg.norm(w)} is below 1e-12 h")
    result = kernel_Kf_many(f, v, w[None, :], p, theta_min=theta_min, rule=rule)
    logging.debug(f"Kernel: K_f at |w|={np.linalg.norm(w):.4g} = {result.values[0]:.6g} +/- {result.errors[0]:.2g}")
    return float(result.values[0])


class RadialRule(NamedTuple):
    radii: np.ndarray
    weights: np.ndarray
    mid_weights: np.ndarray
    n_log: int


def hybrid_radial(lo, hi, knee: float, width: float, log_panels: int, order: int = 3, max_panels: int = 4096) -> RadialRule:
    """
    Radial rule per row on [lo_i, hi_i]: log-spaced panels up to the knee, then uniform
    panels no wider than width. The first n_log columns belong to the log part, innermost first.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    knee_row = np.clip(knee, lo, hi)
    r_log, w_log, m_log = log_legendre(lo, knee_row, log_panels, order)
    n_uniform = int(np.clip(math.ceil(float(np.max(hi - knee_row, initial=0.0)) / width), 1, max_panels))
    t, tw, tm = composite_legendre(n_uniform, order)
    span = (hi - knee_row)[:, None]
    return RadialRule(
        radii=np.concatenate([r_log, knee_row[:, None] + span * t[None, :]], axis=1),
        weights=np.concatenate([w_log, span * tw[None, :]], axis=1),
        mid_weights=np.concatenate([m_log, span * tm[None, :]], axis=1),
        n_log=log_panels * order,
    )
