"""
Shared domain types: kernel parameters, the velocity grid, sampled distributions,
hydrodynamic bounds and barrier functions.

Every type here is immutable after construction so instances can be handed to
worker threads without copying.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Callable, NamedTuple, Protocol

import numpy as np
from scipy import ndimage, special

from kinetic_barrier.errors import (
    DomainError,
    OutOfRange,
    SingularTime,
    UnsupportedDimension,
)

EVALUATION_DIMENSIONS = (2, 3)
INTERPOLATION_RULES = {"multilinear": 1, "tricubic": 3}


class Evaluator(Protocol):
    """Anything that maps an (..., d) array of velocities to an (...) array of values."""

    def __call__(self, points: np.ndarray) -> np.ndarray: ...


def sphere_area(k: int) -> float:
    """Surface measure of the unit sphere S^k in R^(k+1)."""
    return 2.0 * math.pi ** ((k + 1) / 2) / special.gamma((k + 1) / 2)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / special.gamma(d / 2 + 1)


def require_evaluation_dimension(d: int) -> None:
    if d not in EVALUATION_DIMENSIONS:
        raise UnsupportedDimension(f"quadrature is implemented for d in {EVALUATION_DIMENSIONS}, got d={d}")


# --- Kernel parameters ---


class Regime(str, Enum):
    HARD = "hard"
    MAXWELLIAN = "maxwellian"
    MODERATELY_SOFT = "moderately_soft"
    VERY_SOFT = "very_soft"


@dataclass(frozen=True)
class KernelParams:
    """
    Physics configuration of the collision kernel B(r, cos theta) = r^gamma b(cos theta).

    Attributes:
        d (int): Velocity dimension.
        gamma (float): Kinetic exponent, in (-d, 2].
        s (float): Order of the angular singularity, in (0, 1).
        btilde_lo (float): Lower bound of the smooth angular factor.
        btilde_hi (float): Upper bound of the smooth angular factor.
        btilde (callable | None): The smooth angular factor as a function of cos theta.
            None means the constant 1.
    """

    d: int
    gamma: float
    s: float
    btilde_lo: float = 1.0
    btilde_hi: float = 1.0
    btilde: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def moderately_soft(self) -> bool:
        return 0.0 <= self.gamma + 2.0 * self.s <= 2.0

    def angular_factor(self, cos_theta) -> np.ndarray:
        x = np.asarray(cos_theta, dtype=float)
        if self.btilde is None:
            return np.ones_like(x)
        return np.broadcast_to(np.asarray(self.btilde(x), dtype=float), x.shape).copy()


@dataclass(frozen=True)
class ValidatedParams:
    params: KernelParams
    regime: Regime


def validate_params(p: KernelParams) -> ValidatedParams:
    """
    Checks the admissible ranges of the kernel parameters and classifies the regime.

    Returns:
        ValidatedParams: The parameters annotated with their regime.

    Raises:
        OutOfRange: Naming the first violated bound.
    """
    if int(p.d) != p.d or p.d < 2:
        raise OutOfRange("d", f"dimension must be an integer >= 2, got {p.d}")
    if not (-p.d < p.gamma <= 2.0):
        raise OutOfRange("gamma", f"gamma must lie in (-{p.d}, 2], got {p.gamma}")
    if not (0.0 < p.s < 1.0):
        raise OutOfRange("s", f"s must lie in (0, 1), got {p.s}")
    if not (0.0 < p.btilde_lo <= p.btilde_hi):
        raise OutOfRange("btilde_lo", f"need 0 < btilde_lo <= btilde_hi, got {p.btilde_lo}, {p.btilde_hi}")

    samples = p.angular_factor(np.linspace(-1.0, 1.0, 401))
    slack = 1e-12 * p.btilde_hi
    if np.any(samples < p.btilde_lo - slack) or np.any(samples > p.btilde_hi + slack):
        raise OutOfRange(
            "btilde",
            f"angular factor leaves [{p.btilde_lo}, {p.btilde_hi}] (range {samples.min()}..{samples.max()})",
        )

    if p.gamma > 0:
        regime = Regime.HARD
    elif p.gamma == 0:
        regime = Regime.MAXWELLIAN
    elif p.gamma + 2.0 * p.s >= 0:
        regime = Regime.MODERATELY_SOFT
    else:
        regime = Regime.VERY_SOFT
    logging.debug(f"Kernel: validated d={p.d}, gamma={p.gamma}, s={p.s} as {regime.value}")
    return ValidatedParams(params=p, regime=regime)


# --- Velocity grid and sampled distributions ---


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform cell-centred grid on [-r_max, r_max]^d."""

    d: int
    r_max: float
    n_per_axis: int

    def __post_init__(self):
        if self.d < 2:
            raise OutOfRange("d", f"dimension must be >= 2, got {self.d}")
        if self.r_max <= 0:
            raise OutOfRange("r_max", f"must be positive, got {self.r_max}")
        if self.n_per_axis < 8:
            raise OutOfRange("n_per_axis", f"need at least 8 points per axis, got {self.n_per_axis}")

    @property
    def h(self) -> float:
        return 2.0 * self.r_max / self.n_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_per_axis,) * self.d

    @property
    def size(self) -> int:
        return self.n_per_axis**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @cached_property
    def axis(self) -> np.ndarray:
        axis = -self.r_max + self.h * (np.arange(self.n_per_axis) + 0.5)
        axis.setflags(write=False)
        return axis

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, d), in C (row-major) linear index order."""
        mesh = np.meshgrid(*([self.axis] * self.d), indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def norms(self) -> np.ndarray:
        norms = np.linalg.norm(self.nodes, axis=1)
        norms.setflags(write=False)
        return norms

    def index_coordinates(self, points: np.ndarray) -> np.ndarray:
        """Fractional array indices of the points, shape (d, n), as map_coordinates expects."""
        return ((np.asarray(points, dtype=float) + self.r_max) / self.h - 0.5).T

    def nearest_index(self, point) -> int:
        idx = np.clip(np.rint(self.index_coordinates(np.atleast_2d(point))[:, 0]), 0, self.n_per_axis - 1)
        return int(np.ravel_multi_index(tuple(idx.astype(int)), self.shape))


@dataclass(frozen=True)
class TailModel:
    """Extension of a grid distribution beyond |v| = r_max."""

    kind: str = "zero"
    q_tail: float = 0.0
    amplitude: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "power_law"):
            raise OutOfRange("tail", f"unknown tail model {self.kind!r}")
        if self.kind == "power_law" and (self.q_tail <= 0 or self.amplitude < 0):
            raise OutOfRange("tail", "power_law tail needs q_tail > 0 and amplitude >= 0")

    @classmethod
    def zero(cls) -> TailModel:
        return cls()

    @classmethod
    def power_law(cls, q_tail: float, amplitude: float) -> TailModel:
        return cls(kind="power_law", q_tail=q_tail, amplitude=amplitude)

    def evaluate(self, norms: np.ndarray) -> np.ndarray:
        norms = np.asarray(norms, dtype=float)
        if self.kind == "zero" or self.amplitude == 0.0:
            return np.zeros_like(norms)
        return self.amplitude * np.maximum(norms, 1e-300) ** (-self.q_tail)

    def exterior_moment(self, radius: float, d: int, k: float = 0.0) -> float:
        """
        Integral of tail(|x|) |x|^k over |x| > radius.

        Returns:
            float: The moment, +inf when it diverges.
        """
        if self.kind == "zero" or self.amplitude == 0.0:
            return 0.0
        exponent = d + k - self.q_tail
        if exponent >= 0:
            return math.inf
        return self.amplitude * sphere_area(d - 1) * radius**exponent / (-exponent)


@dataclass(frozen=True, eq=False)
class GridDistribution:
    """
    A nonnegative function f(v) sampled at the nodes of a VelocityGrid.

    Off-grid values come from the configured interpolation rule inside the ball of
    radius r_max and from the tail model outside it; the two are blended linearly
    over the last cell width so the result is continuous.
    """

    grid: VelocityGrid
    values: np.ndarray
    interpolation: str = "multilinear"
    tail: TailModel = dataclasses.field(default_factory=TailModel)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise OutOfRange("values", "distribution contains non-finite values")
        if np.any(values < 0):
            raise OutOfRange("values", f"distribution must be nonnegative (min {values.min()})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.interpolation not in INTERPOLATION_RULES:
            raise OutOfRange("interpolation", f"expected one of {sorted(INTERPOLATION_RULES)}, got {self.interpolation!r}")

    @classmethod
    def from_function(cls, grid: VelocityGrid, func: Callable[[np.ndarray], np.ndarray], **kwargs) -> GridDistribution:
        return cls(grid=grid, values=np.asarray(func(grid.nodes), dtype=float).reshape(grid.shape), **kwargs)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @cached_property
    def _coefficients(self) -> np.ndarray:
        if self.interpolation == "tricubic":
            return ndimage.spline_filter(self.values, order=3, mode="nearest")
        return self.values

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        out_shape = pts.shape[:-1]
        pts = pts.reshape(-1, self.grid.d)
        norms = np.linalg.norm(pts, axis=1)
        out = np.empty(len(pts))

        inside = norms <= self.grid.r_max
        if np.any(inside):
            coords = self.grid.index_coordinates(pts[inside])
            vals = ndimage.map_coordinates(
                self._coefficients,
                coords,
                order=INTERPOLATION_RULES[self.interpolation],
                mode="nearest",
                prefilter=False,
            )
            vals = np.maximum(vals, 0.0)
            r_in = norms[inside]
            weight = np.clip((r_in - (self.grid.r_max - self.grid.h)) / self.grid.h, 0.0, 1.0)
            out[inside] = (1.0 - weight) * vals + weight * self.tail.evaluate(r_in)
        if not np.all(inside):
            out[~inside] = self.tail.evaluate(norms[~inside])
        return out.reshape(out_shape)

    def with_values(self, values: np.ndarray) -> GridDistribution:
        return dataclasses.replace(self, values=values)

    def with_interpolation(self, interpolation: str) -> GridDistribution:
        return dataclasses.replace(self, interpolation=interpolation)

    def minimum(self, g: Evaluator) -> CappedDistribution:
        """The contact configuration f := min(f_raw, g), on the nodes and between them."""
        return CappedDistribution(
            grid=self.grid, values=self.values, interpolation=self.interpolation, tail=self.tail, cap=g
        )

    def with_power_tail(self, q_tail: float) -> GridDistribution:
        """Attach a power-law tail matched to the mean nodal value on the outermost shell."""
        shell = (self.grid.norms > self.grid.r_max - self.grid.h) & (self.grid.norms <= self.grid.r_max)
        level = float(self.flat[shell].mean()) if np.any(shell) else 0.0
        return dataclasses.replace(self, tail=TailModel.power_law(q_tail, level * self.grid.r_max**q_tail))


@dataclass(frozen=True, eq=False)
class CappedDistribution(GridDistribution):
    """
    A grid distribution clipped from above by an evaluator g.

    Node values are min(f_raw, g) and off-grid values are min(interpolant, g), so
    f <= g holds everywhere and f(v) = g(v) wherever the raw interpolant reaches g.
    """

    cap: Evaluator | None = None

    def __post_init__(self):
        super().__post_init__()
        if self.cap is not None:
            bound = np.asarray(self.cap(self.grid.nodes), dtype=float).reshape(self.grid.shape)
            capped = np.minimum(self.values, bound)
            capped.setflags(write=False)
            object.__setattr__(self, "values", capped)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        base = super().evaluate(points)
        if self.cap is None:
            return base
        return np.minimum(base, np.asarray(self.cap(np.asarray(points, dtype=float)), dtype=float))


# --- Hydrodynamic bounds ---


@dataclass(frozen=True)
class HydroBounds:
    m0: float
    M0: float
    E0: float
    H0: float

    def __post_init__(self):
        if not (0.0 < self.m0 <= self.M0):
            raise OutOfRange("m0", f"need 0 < m0 <= M0, got m0={self.m0}, M0={self.M0}")
        if self.E0 <= 0:
            raise OutOfRange("E0", f"must be positive, got {self.E0}")


@dataclass(frozen=True)
class HydroState:
    mass: float
    energy: float
    entropy: float
    bounds: HydroBounds | None = None

    @property
    def within_bounds(self) -> bool:
        """True iff mass, energy and entropy respect the configured hydrodynamic bounds."""
        if self.bounds is None:
            return False
        b = self.bounds
        return b.m0 <= self.mass <= b.M0 and self.energy <= b.E0 and self.entropy <= b.H0


# --- Barriers ---


@dataclass(frozen=True)
class TimeSchedule:
    """N(t) = n0 * (shift + t^-beta) for beta > 0, and n0 for beta = 0."""

    n0: float
    beta: float = 0.0
    shift: float = 0.0

    def __post_init__(self):
        if self.n0 <= 0:
            raise OutOfRange("n0", f"barrier amplitude must be positive, got {self.n0}")
        if self.beta < 0:
            raise OutOfRange("beta", f"must be nonnegative, got {self.beta}")

    @classmethod
    def constant(cls, n0: float) -> TimeSchedule:
        return cls(n0=n0)

    @classmethod
    def power(cls, n0: float, beta: float) -> TimeSchedule:
        return cls(n0=n0, beta=beta)

    @classmethod
    def linfty(cls, n0: float, d: int, s: float) -> TimeSchedule:
        return cls(n0=n0, beta=d / (2.0 * s), shift=1.0)

    @property
    def singular(self) -> bool:
        return self.beta > 0

    def value(self, t: float) -> float:
        if not self.singular:
            return self.n0
        if t <= 0:
            raise SingularTime(f"schedule n0*t^-{self.beta} evaluated at t={t}")
        return self.n0 * (self.shift + t ** (-self.beta))

    def derivative(self, t: float) -> float:
        if not self.singular:
            return 0.0
        if t <= 0:
            raise SingularTime(f"schedule n0*t^-{self.beta} differentiated at t={t}")
        return -self.beta * self.n0 * t ** (-self.beta - 1.0)


@dataclass(frozen=True)
class EpsSchedule:
    """Corrector amplitude: eps0, eps0*exp(rate*t) or eps0*t^-rate."""

    eps0: float = 0.0
    kind: str = "constant"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "exponential", "power"):
            raise OutOfRange("eps_kind", f"unknown corrector schedule {self.kind!r}")
        if self.eps0 < 0:
            raise OutOfRange("eps0", f"must be nonnegative, got {self.eps0}")

    def value(self, t: float) -> float:
        if self.kind == "exponential":
            return self.eps0 * math.exp(self.rate * t)
        if self.kind == "power" and self.rate > 0:
            if t <= 0:
                raise SingularTime(f"corrector eps0*t^-{self.rate} evaluated at t={t}")
            return self.eps0 * t ** (-self.rate)
        return self.eps0

    def derivative(self, t: float) -> float:
        if self.kind == "exponential":
            return self.rate * self.eps0 * math.exp(self.rate * t)
        if self.kind == "power" and self.rate > 0:
            if t <= 0:
                raise SingularTime(f"corrector eps0*t^-{self.rate} differentiated at t={t}")
            return -self.rate * self.eps0 * t ** (-self.rate - 1.0)
        return 0.0


class BarrierForm(str, Enum):
    PLAIN = "plain"
    CONST_CORRECTOR = "const_corrector"
    POWER_CORRECTOR = "power_corrector"
    Q0_CORRECTOR = "q0_corrector"


def min_power(norms, q: float) -> np.ndarray:
    """min(1, |v|^-q) for q >= 0, finite at the origin."""
    return np.maximum(np.asarray(norms, dtype=float), 1.0) ** (-q)


@dataclass(frozen=True)
class Barrier:
    """
    Comparison function g(t, v) = N(t) min(1, |v|^-q) + corrector(t, v).

    The corrector is eps(t) for const_corrector, eps(t) min(1, |v|^-(d+1-eta)) for
    power_corrector and eps(t) min(1, |v|^-q0) for q0_corrector.
    """

    q: float
    n_schedule: TimeSchedule = dataclasses.field(default_factory=lambda: TimeSchedule.constant(1.0))
    form: BarrierForm = BarrierForm.PLAIN
    eps_schedule: EpsSchedule = dataclasses.field(default_factory=EpsSchedule)
    eta: float = 0.5
    q0: float = 0.0
    d: int = 2

    def __post_init__(self):
        object.__setattr__(self, "form", BarrierForm(self.form))
        if self.q < 0:
            raise OutOfRange("q", f"decay exponent must be nonnegative, got {self.q}")
        if self.form is BarrierForm.POWER_CORRECTOR and not (0 < self.eta <= self.d + 1):
            # a negative corrector exponent would make g grow in |v|
            raise OutOfRange("eta", f"must lie in (0, d+1] = (0, {self.d + 1}], got {self.eta}")
        if self.form is BarrierForm.Q0_CORRECTOR and self.q0 <= 0:
            raise OutOfRange("q0", f"must be positive, got {self.q0}")

    @property
    def corrector_exponent(self) -> float | None:
        match self.form:
            case BarrierForm.PLAIN:
                return None
            case BarrierForm.CONST_CORRECTOR:
                return 0.0
            case BarrierForm.POWER_CORRECTOR:
                return self.d + 1.0 - self.eta
            case BarrierForm.Q0_CORRECTOR:
                return self.q0

    def n(self, t: float) -> float:
        return self.n_schedule.value(t)

    def eps(self, t: float) -> float:
        if self.form is BarrierForm.PLAIN:
            return 0.0
        return self.eps_schedule.value(t)

    def radial(self, t: float, norms) -> np.ndarray:
        value = self.n(t) * min_power(norms, self.q)
        exponent = self.corrector_exponent
        if exponent is not None:
            value = value + self.eps(t) * min_power(norms, exponent)
        return value

    def radial_time_derivative(self, t: float, norms) -> np.ndarray:
        value = self.n_schedule.derivative(t) * min_power(norms, self.q)
        exponent = self.corrector_exponent
        if exponent is not None:
            value = value + self.eps_schedule.derivative(t) * min_power(norms, exponent)
        return value

    def value(self, t: float, v) -> np.ndarray:
        return self.radial(t, np.linalg.norm(np.asarray(v, dtype=float), axis=-1))

    def time_derivative(self, t: float, v) -> np.ndarray:
        return self.radial_time_derivative(t, np.linalg.norm(np.asarray(v, dtype=float), axis=-1))

    def at(self, t: float) -> BarrierSlice:
        self.n(t)  # surfaces SingularTime before any quadrature starts
        return BarrierSlice(barrier=self, t=t)


@dataclass(frozen=True)
class BarrierSlice:
    """The barrier frozen at a time t, usable wherever an Evaluator is expected."""

    barrier: Barrier
    t: float

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.barrier.value(self.t, points)

    def radial(self, norms) -> np.ndarray:
        return self.barrier.radial(self.t, norms)


def barrier_value(b: Barrier, t: float, v) -> np.ndarray | float:
    """
    Closed-form evaluation of the barrier, correctors included.

    Raises:
        SingularTime: When t <= 0 and the schedule blows up at the origin of time.
    """
    value = b.value(t, v)
    return float(value) if np.ndim(value) == 0 else value


def one_plus_value(b: Barrier, t: float, v) -> np.ndarray | float:
    """The (1+|v|)^-q normalization of the barrier's principal part, corrector unchanged."""
    norms = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
    value = b.n(t) * (1.0 + norms) ** (-b.q)
    exponent = b.corrector_exponent
    if exponent is not None:
        value = value + b.eps(t) * min_power(norms, exponent)
    return float(value) if np.ndim(value) == 0 else value


def normalization_factor(q: float) -> float:
    """(1+r)^-q <= min(1, r^-q) <= 2^q (1+r)^-q."""
    return 2.0**q


# --- Splitting constants ---


# c1(q) <= c2(q) reduces to q^2 - q - 1 >= 0, so the ordering starts at the golden ratio
ORDERED_FROM_Q = 0.5 * (1.0 + math.sqrt(5.0))


class SplittingConstants(NamedTuple):
    c1: float
    c2: float
    c3: float

    @property
    def ordered(self) -> bool:
        """c1 <= c2; false for 1 <= q < ORDERED_FROM_Q."""
        return self.c1 <= self.c2


def c1(q: float) -> float:
    return 1.0 / (20.0 * q)


def c2(q: float) -> float:
    return (1.0 + q) ** -0.5 / 20.0


def c3(q: float) -> float:
    return 0.5 / (1.0 + q)


def splitting_constants(q: float) -> SplittingConstants:
    """
    Radii factors of the good/bad decomposition.

    Raises:
        DomainError: For q < 1.
    """
    if q < 1:
        raise DomainError(f"splitting constants are defined for q >= 1, got q={q}")
    return SplittingConstants(c1(q), c2(q), c3(q))
