import math

import numpy as np
import pytest

from kinetic_barrier.errors import EmptyCone, NoCore
from kinetic_barrier.fixtures import vacuum
from kinetic_barrier.hydro_geometry import (
    CERTIFICATE_RADII,
    MassCore,
    antipodal_directions,
    concentration_modulus,
    core_target,
    hydro_fields,
    mass_core,
    non_concentration_profile,
    nondegeneracy_cone,
)


def test_hydro_fields_of_a_maxwellian(f_maxwellian, bounds):
    state = hydro_fields(f_maxwellian, bounds)
    assert state.mass == pytest.approx(1.0, rel=1e-3)
    assert state.energy == pytest.approx(2.0, rel=1e-2)
    assert state.entropy == pytest.approx(-math.log(2 * math.pi) - 1, rel=1e-2)
    assert state.within_bounds


def test_hydro_fields_without_bounds_are_never_within(f_maxwellian):
    assert not hydro_fields(f_maxwellian).within_bounds


# --- Mass core ---


def test_mass_core_of_a_maxwellian(f_maxwellian, bounds):
    core = mass_core(f_maxwellian, hydro_fields(f_maxwellian, bounds))
    assert core.measure >= core.mu_target == pytest.approx(core_target(bounds))
    assert np.all(f_maxwellian.flat[core.node_set] >= core.c0)
    assert np.all(np.linalg.norm(core.points, axis=1) <= core.R0)
    assert core.contains(core.points[0])


def test_vacuum_has_no_core(grid, bounds):
    f = vacuum(grid)
    with pytest.raises(NoCore):
        mass_core(f, hydro_fields(f, bounds))


# --- Cone of non-degeneracy ---


def test_antipodal_directions():
    for d in (2, 3):
        dirs = antipodal_directions(d, 64)
        assert dirs.shape == (64, d)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
        assert np.allclose(dirs[32:], -dirs[:32])


def test_cone_around_a_maxwellian_core(hard_params, f_maxwellian, bounds):
    core = mass_core(f_maxwellian, hydro_fields(f_maxwellian, bounds))
    v = np.array([3.0, 0.1])
    cone = nondegeneracy_cone(f_maxwellian, core, v, hard_params, n_dir=64)
    assert 0 < cone.fraction <= 1
    assert 0 <= cone.C0 <= np.linalg.norm(v)
    assert set(cone.certificates) == set(CERTIFICATE_RADII)
    assert all(np.isfinite(value) for value in cone.certificates.values())
    assert cone.measure_profile(2.0) == pytest.approx(4 * cone.measure_profile(1.0))


def test_cone_measure_scales_inversely_with_the_speed(hard_params, f_maxwellian, bounds):
    core = mass_core(f_maxwellian, hydro_fields(f_maxwellian, bounds))
    measures = [
        nondegeneracy_cone(f_maxwellian, core, [speed, 0.0], hard_params, n_dir=256).scaled_measure(1.0)
        for speed in (4.0, 8.0, 16.0, 32.0)
    ]
    assert min(measures) > 0
    assert max(measures) / min(measures) <= 20.0


def test_empty_core_gives_an_empty_cone(hard_params, f_maxwellian):
    grid = f_maxwellian.grid
    empty = MassCore(grid, 0.1, 1.0, np.array([], dtype=int), 0.0, 0.01)
    with pytest.raises(EmptyCone):
        nondegeneracy_cone(f_maxwellian, empty, [1.0, 0.0], hard_params, n_dir=16)


# --- Non-concentration ---


def test_concentration_modulus():
    assert concentration_modulus(1.0) == pytest.approx(math.log(2))
    assert concentration_modulus(0.5) == pytest.approx(math.log(1.5) + 1 / math.log(2))
    assert concentration_modulus(4.0) == pytest.approx(math.log(5))


def test_non_concentration_profile(f_maxwellian, bounds):
    areas = [0.01, 0.1, 1.0, 1e4]
    frame = non_concentration_profile(f_maxwellian, areas, bounds)
    assert list(frame.columns) == ["area", "max_mass", "modulus", "implied_constant", "mass_bound"]
    assert frame["max_mass"].is_monotonic_increasing
    total = f_maxwellian.flat.sum() * f_maxwellian.grid.cell_volume
    assert frame["max_mass"].iloc[-1] == pytest.approx(total)
    assert (frame["mass_bound"] == bounds.M0).all()
