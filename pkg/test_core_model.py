import math

import numpy as np
import pytest

from kinetic_barrier.core_model import (
    ORDERED_FROM_Q,
    Barrier,
    BarrierForm,
    EpsSchedule,
    GridDistribution,
    HydroBounds,
    KernelParams,
    Regime,
    TailModel,
    TimeSchedule,
    VelocityGrid,
    barrier_value,
    c1,
    c3,
    min_power,
    normalization_factor,
    one_plus_value,
    sphere_area,
    splitting_constants,
    validate_params,
)
from kinetic_barrier.errors import ConfigError, DomainError, OutOfRange, SingularTime
from kinetic_barrier.fixtures import FIXTURES, build_fixture, cold_core


# --- Kernel parameters ---


@pytest.mark.parametrize(
    "gamma, s, regime",
    [(0.5, 0.3, Regime.HARD), (0.0, 0.5, Regime.MAXWELLIAN), (-0.5, 0.5, Regime.MODERATELY_SOFT), (-1.5, 0.5, Regime.VERY_SOFT)],
)
def test_validate_params_classifies_regime(gamma, s, regime):
    assert validate_params(KernelParams(d=2, gamma=gamma, s=s)).regime is regime


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"d": 2, "gamma": 2.5, "s": 0.3}, "gamma"),
        ({"d": 2, "gamma": -2.0, "s": 0.3}, "gamma"),
        ({"d": 3, "gamma": 0.0, "s": 1.0}, "s"),
        ({"d": 3, "gamma": 0.0, "s": 0.0}, "s"),
        ({"d": 1, "gamma": 0.0, "s": 0.5}, "d"),
        ({"d": 2, "gamma": 0.0, "s": 0.5, "btilde_lo": 2.0, "btilde_hi": 1.0}, "btilde_lo"),
    ],
)
def test_validate_params_names_the_offending_field(kwargs, field):
    with pytest.raises(OutOfRange) as exc:
        validate_params(KernelParams(**kwargs))
    assert exc.value.field == field


def test_validate_params_checks_the_angular_factor():
    p = KernelParams(d=2, gamma=0.0, s=0.5, btilde_lo=1.0, btilde_hi=1.5, btilde=lambda x: 1.0 + x**2)
    with pytest.raises(OutOfRange):
        validate_params(p)


def test_sphere_area_low_dimensions():
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


# --- Grid and distributions ---


def test_grid_is_cell_centred(small_grid):
    assert small_grid.h == pytest.approx(0.5)
    assert small_grid.axis[0] == pytest.approx(-3.75)
    assert small_grid.nodes.shape == (256, 2)
    idx = small_grid.nearest_index([0.2, -0.2])
    assert np.allclose(small_grid.nodes[idx], [0.25, -0.25])


def test_grid_rejects_coarse_axes():
    with pytest.raises(OutOfRange):
        VelocityGrid(d=2, r_max=4.0, n_per_axis=4)


def test_distribution_rejects_negative_values(small_grid):
    with pytest.raises(OutOfRange):
        GridDistribution(grid=small_grid, values=-np.ones(small_grid.shape))


def test_interpolation_reproduces_nodes(small_maxwellian):
    nodes = small_maxwellian.grid.nodes
    inner = np.linalg.norm(nodes, axis=1) < 3.0
    assert np.allclose(small_maxwellian(nodes[inner]), small_maxwellian.flat[inner])


def test_zero_tail_outside_the_box(small_maxwellian):
    assert small_maxwellian(np.array([[10.0, 0.0]]))[0] == 0.0


def test_power_tail_matches_outer_shell(small_maxwellian):
    f = small_maxwellian.with_power_tail(5.0)
    assert f.tail.kind == "power_law"
    assert f(np.array([[8.0, 0.0]]))[0] == pytest.approx(f.tail.amplitude * 8.0**-5)


def test_exterior_moment_diverges_for_slow_tails():
    tail = TailModel.power_law(3.0, 1.0)
    assert tail.exterior_moment(2.0, d=2, k=1.0) == math.inf
    assert tail.exterior_moment(2.0, d=2) == pytest.approx(2 * math.pi * 2.0**-1)


def test_minimum_caps_nodes_and_off_grid_points(small_maxwellian):
    cap = lambda v: np.full(np.asarray(v).shape[:-1], 0.05)
    capped = small_maxwellian.minimum(cap)
    assert capped.flat.max() <= 0.05
    points = np.array([[0.1, 0.1], [0.3, -0.2], [5.0, 0.0]])
    assert np.all(capped(points) <= 0.05)


def test_maxwellian_carries_unit_mass(f_maxwellian):
    mass = f_maxwellian.flat.sum() * f_maxwellian.grid.cell_volume
    assert mass == pytest.approx(1.0, rel=1e-3)


def test_cold_core_mass_is_exact(small_grid):
    f = cold_core(small_grid, mass=0.7)
    assert f.flat.sum() * small_grid.cell_volume == pytest.approx(0.7)


def test_every_fixture_builds(small_grid):
    for name in FIXTURES:
        f = build_fixture(name, small_grid)
        assert f.flat.min() >= 0


def test_unknown_fixture_is_a_config_error(small_grid):
    with pytest.raises(ConfigError):
        build_fixture("plasma", small_grid)


def test_hydro_bounds_require_ordered_masses():
    with pytest.raises(OutOfRange):
        HydroBounds(m0=2.0, M0=1.0, E0=1.0, H0=1.0)


# --- Barriers ---


def test_plain_barrier_value():
    b = Barrier(q=3.0, n_schedule=TimeSchedule.constant(2.0))
    assert barrier_value(b, 1.0, [0.5, 0.0]) == pytest.approx(2.0)
    assert barrier_value(b, 1.0, [4.0, 0.0]) == pytest.approx(2.0 / 64)


def test_power_corrector_barrier():
    b = Barrier(
        q=6.0,
        form=BarrierForm.POWER_CORRECTOR,
        eps_schedule=EpsSchedule(0.1, "exponential", 1.0),
        eta=0.5,
        d=2,
    )
    v = np.array([2.0, 0.0])
    expected = 2.0**-6 + 0.1 * math.e * 2.0**-2.5
    assert barrier_value(b, 1.0, v) == pytest.approx(expected)
    assert float(b.time_derivative(1.0, v)) == pytest.approx(0.1 * math.e * 2.0**-2.5)


def test_singular_schedule_at_time_zero():
    b = Barrier(q=2.0, n_schedule=TimeSchedule.power(1.0, 2.0))
    with pytest.raises(SingularTime):
        barrier_value(b, 0.0, [1.0, 0.0])
    assert barrier_value(b, 0.5, [0.0, 0.0]) == pytest.approx(4.0)


def test_linfty_schedule_has_unit_shift():
    schedule = TimeSchedule.linfty(2.0, d=2, s=0.5)
    assert schedule.beta == pytest.approx(2.0)
    assert schedule.value(1.0) == pytest.approx(4.0)


def test_one_plus_normalization_brackets_min_power():
    b = Barrier(q=4.0)
    r = np.linspace(0.0, 50.0, 101)
    v = np.stack([r, np.zeros_like(r)], axis=-1)
    lower = one_plus_value(b, 1.0, v)
    upper = normalization_factor(4.0) * lower
    exact = min_power(r, 4.0)
    assert np.all(lower <= exact + 1e-15)
    assert np.all(exact <= upper + 1e-15)


def test_splitting_constants():
    consts = splitting_constants(4.0)
    assert consts.c1 == pytest.approx(1 / 80)
    assert consts.c3 == pytest.approx(0.1)
    assert c1(4.0) < c3(4.0)
    with pytest.raises(DomainError):
        splitting_constants(0.5)


def test_c1_below_c2_from_the_golden_ratio():
    rng = np.random.default_rng(7)
    for q in ORDERED_FROM_Q * (1 + 1e-9) * 10.0 ** rng.uniform(0.0, 5.5, size=200):
        assert splitting_constants(q).ordered
    assert not splitting_constants(1.0).ordered
    assert not splitting_constants(1.5).ordered
    assert splitting_constants(2.0).ordered


@pytest.mark.parametrize(
    "form, extra",
    [
        (BarrierForm.PLAIN, {}),
        (BarrierForm.CONST_CORRECTOR, {"eps_schedule": EpsSchedule(0.1)}),
        (BarrierForm.POWER_CORRECTOR, {"eps_schedule": EpsSchedule(0.1), "eta": 0.5}),
        (BarrierForm.POWER_CORRECTOR, {"eps_schedule": EpsSchedule(0.1), "eta": 3.0}),
        (BarrierForm.Q0_CORRECTOR, {"eps_schedule": EpsSchedule(0.1), "q0": 4.0}),
    ],
)
def test_barrier_is_positive_and_radially_nonincreasing(form, extra):
    b = Barrier(q=5.0, n_schedule=TimeSchedule.constant(2.0), form=form, d=2, **extra)
    r = np.linspace(0.0, 200.0, 2001)
    values = b.value(1.0, np.stack([r, np.zeros_like(r)], axis=-1))
    assert np.all(values > 0)
    assert np.all(np.diff(values) <= 0)
    turned = b.value(1.0, np.stack([np.zeros_like(r), r], axis=-1))
    assert np.allclose(turned, values, rtol=1e-14, atol=0.0)


def test_power_corrector_exponent_range():
    with pytest.raises(OutOfRange) as exc:
        Barrier(q=5.0, form=BarrierForm.POWER_CORRECTOR, eta=3.5, d=2)
    assert exc.value.field == "eta"
    with pytest.raises(OutOfRange):
        Barrier(q=5.0, form=BarrierForm.POWER_CORRECTOR, eta=0.0, d=2)
    edge = Barrier(q=5.0, form=BarrierForm.POWER_CORRECTOR, eta=3.0, d=2)
    assert edge.corrector_exponent == 0.0
