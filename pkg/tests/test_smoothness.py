import math

import numpy as np
import pytest

from dipnet.network import DipNet, ModelConfig
from dipnet.projection import ProjectionParams
from dipnet.smoothness import (
    ConstantProfile,
    GaussianNoise,
    PointMass,
    SpikeFunction,
    UniformNoise,
    adaptive_integral,
    default_zeta,
    empirical_lipschitz,
    gradient_norms,
    hessian_spectral_norm,
    smoothed_gradient_norm,
    smoothness_report,
    verify_theorem_1,
    verify_theorem_2,
    window_average,
)
from conftest import central_diff, max_rel_err
from dipnet.network import forward_array


def linear(theta):
    theta = np.asarray(theta, dtype=np.float64)
    return DipNet([theta.reshape(-1, 1)], [np.zeros(1)], [ProjectionParams.disabled(len(theta))], "identity")


def tanh_1d():
    off = ProjectionParams.disabled(1)
    return DipNet([np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)], [off, off], "tanh")


def test_linear_lipschitz_is_theta_norm(rng):
    theta = np.array([3.0, -4.0, 12.0])
    probes = rng.standard_normal((10, 3))
    np.testing.assert_allclose(gradient_norms(linear(theta), probes), 13.0, rtol=1e-15)
    assert empirical_lipschitz(linear(theta), probes) == pytest.approx(13.0, rel=1e-15)


def test_tanh_lipschitz_reaches_one():
    assert empirical_lipschitz(tanh_1d(), np.linspace(-3, 3, 61).reshape(-1, 1)) == 1.0


def test_relu_gradient_norms_match_finite_differences(rng):
    net = DipNet.from_config(ModelConfig(input_dim=4, hidden=[12], projection="disabled"), 2)
    probes = rng.uniform(-2, 2, (5, 4))
    fd = np.array([np.linalg.norm(central_diff(lambda z: forward_array(net, z[None])[0, 0], p))
                   for p in probes])
    assert max_rel_err(gradient_norms(net, probes), fd) < 1e-4


def test_per_output_lipschitz(rng):
    net = DipNet([np.array([[1.0, 0.0], [0.0, 2.0]])], [np.zeros(2)], [ProjectionParams.disabled(2)], "identity")
    np.testing.assert_allclose(empirical_lipschitz(net, rng.standard_normal((3, 2)), per_output=True), [1.0, 2.0])


def test_point_mass_smoothing_equals_lipschitz(rng):
    net = DipNet.from_config(ModelConfig(input_dim=3, hidden=[8], activation="tanh", projection="disabled"), 0)
    probes = rng.standard_normal((6, 3))
    est = smoothed_gradient_norm(net, probes, PointMass(), 3, rng)
    assert est.value == pytest.approx(empirical_lipschitz(net, probes), rel=1e-14)


@pytest.mark.parametrize("dist", [GaussianNoise(0.7), UniformNoise(2.0)])
def test_linear_smoothing_is_theta_norm(dist, rng):
    est = smoothed_gradient_norm(linear([1.0, 2.0]), np.zeros((2, 2)), dist, 1000, rng)
    assert est.value == pytest.approx(math.sqrt(5.0), rel=1e-12)


def test_smoothed_norm_matches_quadrature(rng):
    spike = SpikeFunction.for_bound(0.5, 0.1, 1.0)
    width, x0 = 0.3, 0.12
    exact, _ = window_average(spike, x0, width)
    est = smoothed_gradient_norm(lambda X: spike(X), np.array([[x0]]), UniformNoise(width), 100_000, rng)
    assert abs(est.value - exact) < 3 * est.stderr


def test_hessian_quadratic_form():
    A = np.diag([3.0, 1.0])
    est = hessian_spectral_norm(lambda X: X @ A, np.array([0.4, -0.2]))
    assert est.converged
    assert abs(est.value - 3.0) < 1e-3
    assert abs(est.rayleigh - 3.0) < 1e-3


def test_hessian_linear_is_zero():
    assert hessian_spectral_norm(linear([1.0, -2.0]), np.array([0.3, 0.1])).value < 1e-6


def test_hessian_tanh_peak():
    net = tanh_1d()
    grid = np.linspace(-2, 2, 401)
    s = max(hessian_spectral_norm(net, np.array([x]), iters=5).value for x in grid)
    assert abs(s - 4 / (3 * math.sqrt(3))) < 1e-2


def test_smoothness_report_fields(rng):
    net = DipNet.from_config(ModelConfig(input_dim=2, hidden=[5], activation="tanh"), 0)
    rep = smoothness_report(net, rng.standard_normal((4, 2)), GaussianNoise(0.1), 200, rng, hessian_iters=10)
    assert rep.probe_count == 4 and rep.s_hat is not None and rep.b_hat > 0


def test_quadrature_closed_forms():
    value, _ = adaptive_integral(np.exp, 0.0, 1.0)
    assert abs(value - (math.e - 1)) < 1e-12
    # the smooth step is antisymmetric about 1/2, so the bump integrates to 2*half_width - ramp
    spike = SpikeFunction(0.0, 1.0, 0.05, 0.01)
    total, _ = adaptive_integral(spike.profile, -0.2, 0.2, spike.breakpoints())
    assert abs(total - (2 * 0.05 - 0.01)) < 1e-10


def test_window_average_over_whole_spike():
    spike = SpikeFunction.for_bound(0.5, 0.1, 2.0)
    width = 0.6
    expected = spike.base + (spike.peak - spike.base) * (2 * spike.half_width - spike.ramp) / width
    assert window_average(spike, 0.0, width)[0] == pytest.approx(expected, abs=1e-10)


def test_spike_has_small_measure():
    spike = SpikeFunction.for_bound(0.5, 0.1, 1.0)
    assert spike.spike_measure() < 0.1
    assert spike.profile(0.0) == 1.0 and spike.profile(0.2) == 0.5


def test_theorem_1_default_case():
    check = verify_theorem_1(0.5, 0.2, 0.1, 1.0, zeta=6)
    assert check.passed and check.measured < 0.7
    assert check.measured <= 0.5 + 1 / 6 + 1e-6
    assert check.proof_bound == pytest.approx(0.5 + 1 / 6)


def test_theorem_1_needs_wide_window():
    assert not verify_theorem_1(0.5, 0.2, 0.1, 1.0, zeta=1).passed


def test_theorem_1_loosest_epsilon_passes():
    check = verify_theorem_1(0.5, 0.5, 0.1, 1.0)
    assert check.passed and check.measured <= 1.0


def test_theorem_2_bump():
    check = verify_theorem_2(0.5, 0.2, 0.1, 1.0)
    assert check.passed and check.zeta == default_zeta(0.2) == 6.0


def test_theorem_2_quadratic_constant_profile():
    assert window_average(ConstantProfile(1.0), 0.37, 0.2)[0] == pytest.approx(1.0, abs=1e-14)
    assert not verify_theorem_2(0.5, 0.2, 0.1, 1.0, construction="quadratic").passed
    assert verify_theorem_2(0.5, 0.6, 0.1, 1.0, construction="quadratic").passed


def test_theorem_huge_epsilon_passes():
    assert verify_theorem_1(0.5, 1e6, 0.1, 1.0).passed
    assert verify_theorem_2(0.5, 1e6, 0.1, 1.0).passed


@pytest.mark.parametrize("c,C,zeta", [(0.3, 0.05, 2.0), (0.5, 0.1, 1.0), (0.8, 0.2, 4.0)])
def test_smoothing_never_worse(c, C, zeta):
    check = verify_theorem_1(c, 0.2, C, 1.0, zeta=zeta)
    assert check.measured <= 1.0 + 3e-8


def test_theorem_rejects_bad_inputs():
    with pytest.raises(ValueError):
        verify_theorem_1(1.5, 0.2, 0.1, 1.0)
    with pytest.raises(ValueError):
        verify_theorem_2(0.5, 0.2, 0.1, 1.0, construction="cubic")
