import math

import numpy as np
import pytest
from scipy import special

from kinetic_barrier.collision_kernel import (
    AngularKernel,
    b_angular,
    cancellation_constant,
    carleman_jacobian,
    composite_legendre,
    hybrid_radial,
    kernel_Kf,
    orthonormal_complement,
)
from kinetic_barrier.core_model import KernelParams
from kinetic_barrier.errors import DegeneratePair, DomainError, OutOfRange, SingularAngle


# --- Angular function ---


def test_b_at_right_angle_in_three_dimensions():
    p = KernelParams(d=3, gamma=0.0, s=0.25)
    assert b_angular(0.0, p) == pytest.approx(math.sqrt(2))


def test_b_small_angle_asymptotics():
    p = KernelParams(d=2, gamma=0.5, s=0.75)
    theta = 1e-4
    scaled = theta ** (p.d - 1 + 2 * p.s) * b_angular(math.cos(theta), p)
    assert scaled == pytest.approx(2**2.5, rel=1e-6)


def test_b_rejects_grazing_and_invalid_cosines(hard_params):
    with pytest.raises(SingularAngle):
        b_angular(1.0, hard_params)
    assert b_angular(1.0, hard_params, allow_singular=True) == math.inf
    with pytest.raises(DomainError):
        b_angular(1.5, hard_params)


def test_angular_kernel_support(hard_params):
    kernel = AngularKernel(hard_params, theta_min=0.2)
    values = kernel(np.array([0.1, 0.5, 2.0]))
    assert values[0] == 0.0
    assert values[1] > 0.0
    assert values[2] == 0.0


def test_angular_mass_closed_form(maxwell_params):
    theta_min = 0.2
    kernel = AngularKernel(maxwell_params, theta_min)
    half = theta_min / 2
    expected = 4 * (1 / math.tan(half) + half - 1 - math.pi / 4)
    assert kernel.angular_mass == pytest.approx(expected, rel=1e-7)


def test_untruncated_angular_mass_is_infinite(hard_params):
    with pytest.raises(DomainError):
        AngularKernel(hard_params).angular_mass


def test_angular_kernel_rejects_large_cutoff(hard_params):
    with pytest.raises(OutOfRange):
        AngularKernel(hard_params, theta_min=2.0)


# --- Cancellation constant ---


@pytest.mark.parametrize("s", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_cancellation_constant_closed_form_in_two_dimensions(s):
    p = KernelParams(d=2, gamma=0.0, s=s)
    expected = special.digamma(1 - s / 2) - special.digamma(0.5 - s / 2)
    cs = cancellation_constant(p)
    assert cs.value == pytest.approx(expected, rel=1e-7)
    assert cs.quadrature_error <= 1e-8 * cs.value


def test_truncated_cancellation_constant(maxwell_params):
    # d = 2, gamma = 0, s = 1/2: the integrand is identically 1
    cs = cancellation_constant(maxwell_params, 0.3)
    assert cs.value == pytest.approx(math.pi - 0.6, rel=1e-10)


def test_cancellation_constant_grows_as_cutoff_shrinks(hard_params):
    values = [cancellation_constant(hard_params, t).value for t in (0.5, 0.1, 0.01)]
    full = cancellation_constant(hard_params).value
    assert values[0] < values[1] < values[2] < full


def test_carleman_jacobian():
    assert carleman_jacobian(2) == 2.0
    assert carleman_jacobian(3) == 4.0


# --- Quadrature helpers ---


def test_composite_legendre_weights():
    nodes, weights, mid = composite_legendre(5, 3)
    assert weights.sum() == pytest.approx(1.0)
    assert mid.sum() == pytest.approx(1.0)
    assert weights @ nodes**2 == pytest.approx(1 / 3)


def test_hybrid_radial_covers_the_interval():
    rule = hybrid_radial([0.01], [3.0], knee=0.5, width=0.1, log_panels=8)
    assert rule.weights[0].sum() == pytest.approx(2.99, rel=1e-6)
    assert rule.radii[0, 0] > 0.01
    assert np.all(np.diff(rule.radii[0]) > 0)


def test_orthonormal_complement_in_three_dimensions():
    normals = np.array([[0.0, 0.0, 1.0], [0.6, 0.8, 0.0]])
    basis = orthonormal_complement(normals)
    assert basis.shape == (2, 2, 3)
    assert np.allclose(np.einsum("mkd,md->mk", basis, normals), 0.0)
    assert np.allclose(np.einsum("mkd,mjd->mkj", basis, basis), np.eye(2))


# --- Carleman kernel ---


def test_kernel_is_even_in_the_offset(hard_params, small_maxwellian):
    v = np.array([0.3, -0.2])
    w = np.array([0.7, 0.4])
    forward = kernel_Kf(small_maxwellian, v, v + w, hard_params)
    backward = kernel_Kf(small_maxwellian, v, v - w, hard_params)
    assert forward > 0
    assert forward == pytest.approx(backward, rel=1e-10)


def test_kernel_is_linear_in_f(hard_params, small_maxwellian):
    v, v_prime = np.array([0.5, 0.0]), np.array([1.5, 0.5])
    doubled = small_maxwellian.with_values(2 * small_maxwellian.values)
    assert kernel_Kf(doubled, v, v_prime, hard_params) == pytest.approx(
        2 * kernel_Kf(small_maxwellian, v, v_prime, hard_params), rel=1e-12
    )


def test_angular_cutoff_lowers_the_kernel(hard_params, small_maxwellian):
    v, v_prime = np.zeros(2), np.array([1.0, 0.0])
    full = kernel_Kf(small_maxwellian, v, v_prime, hard_params)
    truncated = kernel_Kf(small_maxwellian, v, v_prime, hard_params, theta_min=1.0)
    assert 0 < truncated < full


def test_kernel_rejects_coincident_velocities(hard_params, small_maxwellian):
    with pytest.raises(DegeneratePair):
        kernel_Kf(small_maxwellian, [0.5, 0.5], [0.5, 0.5], hard_params)


def test_kernel_scales_with_the_offset(hard_params, small_maxwellian):
    v = np.array([16.0, 0.0])
    e2 = np.array([0.0, 1.0])
    d, s = hard_params.d, hard_params.s
    scaled = [kernel_Kf(small_maxwellian, v, v + r * e2, hard_params) * r ** (d + 2 * s) for r in (0.25, 0.5, 1.0)]
    assert scaled[0] > 0
    assert scaled == pytest.approx([scaled[0]] * 3, rel=0.05)


def test_kernel_grows_with_the_speed(hard_params, small_maxwellian):
    e2 = np.array([0.0, 1.0])
    p = hard_params
    ratios = []
    for speed in (8.0, 16.0, 32.0):
        v = np.array([speed, 0.0])
        kern = kernel_Kf(small_maxwellian, v, v + 0.5 * e2, p)
        ratios.append(kern * 0.5 ** (p.d + 2 * p.s) / (1 + speed) ** (p.gamma + 2 * p.s + 1))
    assert min(ratios) > 0
    assert max(ratios) / min(ratios) < 2.0
