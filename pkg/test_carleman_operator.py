import numpy as np
import pytest

from kinetic_barrier.carleman_operator import (
    PVPolicy,
    SplitResult,
    coarse_lattice,
    half_sphere_directions,
    inner_hyperplane_integral,
    q_ns,
    q_ns_pieces,
    q_s_carleman,
    q_s_reverse,
    q_sigma_grid,
    q_sigma_oracle,
    quadratic_deposit,
    singular_cell_weights,
    split_operator,
)
from kinetic_barrier.collision_kernel import AngularKernel, cancellation_constant
from kinetic_barrier.core_model import Barrier, KernelParams, TimeSchedule, VelocityGrid
from kinetic_barrier.errors import DomainError, OutOfRange
from kinetic_barrier.fixtures import displaced_bump, maxwellian
from kinetic_barrier.homogeneous_solver import collision_frequency, moment_basis


def constant(level):
    return lambda points: np.full(np.asarray(points).shape[:-1], level)


# --- Quadrature building blocks ---


def test_half_sphere_weights():
    _, weights2, coarse2 = half_sphere_directions(2, 16)
    assert weights2.sum() == pytest.approx(np.pi)
    assert coarse2.sum() == pytest.approx(np.pi)
    dirs3, weights3, _ = half_sphere_directions(3, 16)
    assert weights3.sum() == pytest.approx(2 * np.pi)
    assert np.allclose(np.linalg.norm(dirs3, axis=1), 1.0)
    assert np.all(dirs3[:, 2] >= 0)


def test_coarse_lattice_preserves_total_weight(small_grid):
    assert coarse_lattice(small_grid).sum() == small_grid.size


def test_singular_cell_weights_are_finite_on_a_node(small_grid):
    v = small_grid.nodes[small_grid.nearest_index([0.0, 0.0])]
    weights = singular_cell_weights(small_grid, v, -1.2)
    assert np.all(np.isfinite(weights))
    assert np.all(weights > 0)


def test_singular_cell_weights_for_hard_potentials(small_grid):
    v = np.array([0.1, 0.2])
    weights = singular_cell_weights(small_grid, v, 0.5)
    expected = small_grid.cell_volume * np.linalg.norm(small_grid.nodes - v, axis=1) ** 0.5
    assert np.allclose(weights, expected)


def test_pv_policy_validation(maxwell_params):
    with pytest.raises(OutOfRange):
        PVPolicy(n_directions=7)
    with pytest.raises(OutOfRange):
        PVPolicy(mode="radius_exclusion").check(maxwell_params)


# --- Non-singular part ---


def test_q_ns_maxwell_molecules(maxwell_params, small_maxwellian):
    v = np.zeros(2)
    grid = small_maxwellian.grid
    expected = small_maxwellian(v[None, :])[0] * np.pi * small_maxwellian.flat.sum() * grid.cell_volume
    assert q_ns(small_maxwellian, v, maxwell_params).value == pytest.approx(expected, rel=1e-7)


def test_q_ns_vanishes_where_f_does(hard_params, small_maxwellian):
    result = q_ns(small_maxwellian, [20.0, 0.0], hard_params)
    assert result.value == 0.0
    assert result.error == 0.0


def test_q_ns_pieces_sum_to_q_ns(hard_params, small_maxwellian):
    v = np.array([0.7, -0.4])
    pieces = q_ns_pieces(small_maxwellian, v, hard_params, [0.5, 1.5, 3.0])
    assert len(pieces) == 4
    assert pieces.sum() == pytest.approx(q_ns(small_maxwellian, v, hard_params).value, rel=1e-12)


# --- Singular part ---


def test_q_s_of_a_constant_vanishes(hard_params, small_maxwellian):
    v = np.array([1.0, 0.5])
    assert q_s_carleman(small_maxwellian, constant(0.25), v, hard_params).value == 0.0
    assert q_s_reverse(small_maxwellian, constant(0.25), v, hard_params).value == 0.0


def test_inner_integral_is_negative_below_a_decaying_barrier(hard_params):
    barrier = Barrier(q=8.0, n_schedule=TimeSchedule.constant(1.0))
    result = inner_hyperplane_integral(barrier, [10.0, 0.0], [0.0, 0.0], hard_params, h=0.25)
    assert result.value < 0
    assert result.error < abs(result.value)


def test_inner_integral_of_a_degenerate_pair(hard_params):
    barrier = Barrier(q=4.0)
    result = inner_hyperplane_integral(barrier, [3.0, 0.0], [3.0, 0.0], hard_params)
    assert result.value == 0.0


def test_radius_exclusion_needs_small_s(maxwell_params, small_maxwellian):
    with pytest.raises(OutOfRange):
        q_s_carleman(small_maxwellian, small_maxwellian, [1.0, 0.0], maxwell_params, PVPolicy(mode="radius_exclusion"))


@pytest.mark.slow
def test_forward_and_reverse_representations_agree(hard_params, f_maxwellian):
    v = np.array([1.0, 0.5])
    forward = q_s_carleman(f_maxwellian, f_maxwellian, v, hard_params)
    reverse = q_s_reverse(f_maxwellian, f_maxwellian, v, hard_params)
    assert forward.value == pytest.approx(reverse.value, rel=0.1, abs=forward.error + reverse.error)


# --- Good / bad split ---


def test_split_without_decay_is_all_good(hard_params, small_maxwellian):
    v = np.array([1.5, 0.5])
    split = split_operator(small_maxwellian, small_maxwellian, v, 0.0, hard_params)
    assert split.bad1 == split.bad2 == split.bad3 == 0.0
    reverse = q_s_reverse(small_maxwellian, small_maxwellian, v, hard_params)
    assert split.good == pytest.approx(reverse.value, rel=1e-12)


def test_split_rejects_fractional_q_and_the_origin(hard_params, small_maxwellian):
    with pytest.raises(DomainError):
        split_operator(small_maxwellian, small_maxwellian, [1.0, 0.0], 0.5, hard_params)
    with pytest.raises(DomainError):
        split_operator(small_maxwellian, small_maxwellian, [0.0, 0.0], 4.0, hard_params)


def test_split_recombines(hard_params, small_maxwellian):
    split = split_operator(small_maxwellian, small_maxwellian, [2.0, 0.0], 4.0, hard_params, forward_bad=False)
    assert split.recombines
    assert split.gaps == {}
    assert split.total == pytest.approx(split.q_s + split.q_ns)
    row = split.to_dict()
    assert {"good", "bad1", "bad2", "bad3", "q_ns", "total", "good_error"} <= row.keys()


def test_forward_bad_terms_keep_their_gap_apart(hard_params, small_maxwellian):
    v = np.array([2.0, 0.0])
    split = split_operator(small_maxwellian, small_maxwellian, v, 4.0, hard_params)
    reverse = split_operator(small_maxwellian, small_maxwellian, v, 4.0, hard_params, forward_bad=False)
    assert set(split.gaps) == {"bad2", "bad3"}
    assert split.gaps["bad2"] == pytest.approx(split.bad2 - reverse.bad2, rel=1e-12, abs=1e-300)
    assert split.gaps["bad3"] == pytest.approx(split.bad3 - reverse.bad3, rel=1e-12, abs=1e-300)
    assert split.errors["bad2"] >= reverse.errors["bad2"]
    assert "bad3_gap" in split.to_dict()


def test_recombines_can_fail():
    errors = {"good": 0.01, "bad1": 0.01, "bad2": 0.01, "bad3": 0.01, "q_ns": 0.01}
    parts = dict(good=-1.0, bad1=0.1, bad2=0.2, bad3=0.05, q_ns=0.3)
    consistent = SplitResult(**parts, total=-0.35, q_s=-0.65, errors=errors)
    assert consistent.recombines
    off = SplitResult(**parts, total=-0.2, q_s=-0.5, errors=errors)
    assert off.combined_error == pytest.approx(0.05)
    assert not off.recombines


@pytest.mark.slow
def test_split_partitions_the_reverse_operator(hard_params, small_grid):
    f = displaced_bump(small_grid, bump_mass=0.1, offset=1.5)
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = rng.uniform(1.0, 3.0) * np.array([1.0, 0.0]) + rng.uniform(-0.5, 0.5, 2)
        split = split_operator(f, f, v, 4.0, hard_params, forward_bad=False)
        reverse = q_s_reverse(f, f, v, hard_params)
        parts = split.good + split.bad1 + split.bad2 + split.bad3
        scale = abs(split.good) + abs(split.bad1) + abs(split.bad2) + abs(split.bad3)
        assert parts == pytest.approx(reverse.value, rel=1e-9, abs=1e-9 * scale)
        assert split.recombines


def test_split_against_a_barrier(hard_params, small_maxwellian):
    barrier = Barrier(q=4.0, n_schedule=TimeSchedule.constant(1.0))
    split = split_operator(small_maxwellian, barrier, [3.0, 1.0], 4.0, hard_params, t=1.0, forward_bad=False)
    assert split.recombines
    assert np.isfinite(split.good)


# --- Sigma oracle ---


def test_sigma_oracle_needs_a_cutoff(hard_params, small_maxwellian):
    with pytest.raises(OutOfRange):
        q_sigma_oracle(small_maxwellian, [0.0, 0.0], hard_params, 0.0)


def test_sigma_oracle_nearly_vanishes_on_a_maxwellian(hard_params, f_maxwellian):
    theta_min = 0.1
    grid = f_maxwellian.grid
    v = grid.nodes[grid.nearest_index([0.2, 0.2])]
    value = q_sigma_oracle(f_maxwellian, v, hard_params, theta_min).value
    rel = np.linalg.norm(v - grid.nodes, axis=1)
    keep = rel > 0
    loss = (
        f_maxwellian.flat[grid.nearest_index(v)]
        * float(f_maxwellian.flat[keep] @ rel[keep] ** hard_params.gamma * grid.cell_volume)
        * AngularKernel(hard_params, theta_min).angular_mass
    )
    assert abs(value) < 0.15 * loss


def test_sigma_grid_matches_pointwise_oracle(hard_params):
    grid = VelocityGrid(d=2, r_max=4.0, n_per_axis=8)
    f = maxwellian(grid)
    values = q_sigma_grid(f, hard_params, 0.2, threads=2, conservative=False)
    i = grid.nearest_index([0.5, -0.5])
    expected = q_sigma_oracle(f, grid.nodes[i], hard_params, 0.2, estimate_error=False).value
    assert values.shape == (grid.size,)
    assert values[i] == pytest.approx(expected, rel=1e-9, abs=1e-14)


def test_quadratic_deposit_reproduces_the_invariants(small_grid):
    rng = np.random.default_rng(11)
    points = np.vstack([rng.uniform(-2.5, 2.5, size=(50, 2)), [[3.9, 0.0]]])
    idx, weights, inside = quadratic_deposit(small_grid, points)
    assert idx.shape == weights.shape == (51, 9)
    assert np.all(inside[:-1])
    assert not inside[-1]
    assert np.all(weights[-1] == 0.0)

    nodes = small_grid.nodes[idx[:-1]]
    w = weights[:-1]
    assert np.allclose(w.sum(axis=1), 1.0, rtol=0.0, atol=1e-13)
    assert np.allclose(np.einsum("mk,mkd->md", w, nodes), points[:-1], rtol=0.0, atol=1e-12)
    energy = np.einsum("mk,mk->m", w, np.sum(nodes**2, axis=-1))
    assert np.allclose(energy, np.sum(points[:-1] ** 2, axis=1), rtol=0.0, atol=1e-11)


def test_sigma_grid_conserves_mass_momentum_and_energy(hard_params):
    grid = VelocityGrid(d=2, r_max=4.0, n_per_axis=12)
    f = displaced_bump(grid, bump_mass=0.1, offset=1.0)
    theta_min = 0.2
    rate = q_sigma_grid(f, hard_params, theta_min)
    phi = moment_basis(grid)
    moments = phi @ rate * grid.cell_volume
    loss = f.flat * collision_frequency(f, hard_params, theta_min)
    scale = np.abs(phi) @ loss * grid.cell_volume
    assert np.all(scale > 0)
    assert np.all(np.abs(moments) <= 1e-3 * scale)
    assert np.abs(rate).max() > 1e-6 * loss.max()


def test_sigma_grid_is_near_zero_on_a_maxwellian(hard_params):
    grid = VelocityGrid(d=2, r_max=5.0, n_per_axis=20)
    f = maxwellian(grid)
    theta_min = 0.2
    rate = q_sigma_grid(f, hard_params, theta_min)
    loss = f.flat * collision_frequency(f, hard_params, theta_min)
    centre = grid.norms < 1.5
    assert np.all(np.abs(rate[centre]) < 0.2 * loss[centre])


@pytest.mark.slow
def test_carleman_and_sigma_representations_agree(hard_params, grid):
    theta_min = 0.1
    f = displaced_bump(grid, bump_mass=0.1, offset=1.0)
    kernel = AngularKernel(hard_params, theta_min)
    rng = np.random.default_rng(5)
    for v in rng.uniform(-1.5, 1.5, size=(10, 2)):
        singular = q_s_reverse(f, f, v, hard_params, theta_min=theta_min)
        non_singular = q_ns(f, v, hard_params, theta_min=theta_min)
        oracle = q_sigma_oracle(f, v, hard_params, theta_min)
        rel = np.linalg.norm(v - grid.nodes, axis=1)
        loss = f(v[None, :])[0] * float(f.flat @ rel**hard_params.gamma * grid.cell_volume) * kernel.angular_mass
        carleman = singular.value + non_singular.value
        allowed = 0.02 * loss + singular.error + non_singular.error + oracle.error
        assert abs(carleman - oracle.value) <= allowed


def test_cancellation_constant_is_shared(maxwell_params):
    cs = cancellation_constant(maxwell_params)
    assert cs is cancellation_constant(KernelParams(d=2, gamma=0.0, s=0.5))
