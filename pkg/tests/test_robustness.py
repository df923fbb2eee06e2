import numpy as np
import pytest

from dipnet.data import split, synth_regression
from dipnet.network import DipNet, ModelConfig, forward_array, predict_averaged
from dipnet.objective import Hyperparams
from dipnet.projection import ProjectionParams
from dipnet.robustness import (
    AttackSpec,
    fgsm_attack,
    gaussian_attack,
    input_gradient,
    randomized_smoothing_mode,
)
from dipnet.training import train
from conftest import central_diff, max_rel_err


def linear(theta):
    theta = np.asarray(theta, dtype=np.float64)
    return DipNet([theta.reshape(-1, 1)], [np.zeros(1)], [ProjectionParams.disabled(len(theta))], "identity")


def test_input_gradient_linear_closed_form():
    g = input_gradient(linear([1.0, 2.0]), np.array([[0.0, 0.0]]), np.array([[1.0]]))
    np.testing.assert_array_equal(g, [[-2.0, -4.0]])


def test_input_gradient_constant_model_is_zero():
    net = DipNet([np.zeros((2, 1))], [np.array([3.0])], [ProjectionParams.disabled(2)], "identity")
    assert np.all(input_gradient(net, np.ones((3, 2)), np.zeros((3, 1))) == 0.0)


def test_input_gradient_tanh_net_finite_differences(rng):
    net = DipNet.from_config(ModelConfig(input_dim=3, hidden=[6], activation="tanh", projection="disabled"), 1)
    x, y = rng.uniform(-2, 2, (1, 3)), np.array([[0.3]])
    fd = central_diff(lambda z: float(np.sum((forward_array(net, z) - y) ** 2)), x)
    assert max_rel_err(input_gradient(net, x, y), fd) < 1e-4


def test_gaussian_attack_small_sigma(rng):
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(gaussian_attack(x, 1e-12, rng), x, rtol=0, atol=1e-10)


def test_gaussian_attack_variance_band(rng):
    n, sigma = 100_000, 0.3
    d = gaussian_attack(np.zeros((n, 2)), sigma, rng)
    var = d.var(axis=0, ddof=1)
    # 99% chi-square band via the normal approximation
    half = 2.576 * sigma**2 * np.sqrt(2 / (n - 1))
    assert np.all(np.abs(var - sigma**2) < half)


def test_gaussian_attack_seeded():
    x = np.zeros((3, 2))
    a = gaussian_attack(x, 0.5, np.random.default_rng(4))
    b = gaussian_attack(x, 0.5, np.random.default_rng(4))
    assert a.tobytes() == b.tobytes()


def test_fgsm_linear_closed_form():
    eps = 0.1
    out = fgsm_attack(linear([1.0, -2.0]), np.array([[0.0, 0.0]]), np.array([[-1.0]]), eps)
    np.testing.assert_array_equal(out, [[eps, -eps]])


def test_fgsm_zero_gradient_leaves_input():
    net = DipNet([np.zeros((2, 1))], [np.zeros(1)], [ProjectionParams.disabled(2)], "identity")
    x = np.array([[0.3, -0.4]])
    np.testing.assert_array_equal(fgsm_attack(net, x, np.zeros((1, 1)), 0.2), x)


def test_fgsm_linf_equals_epsilon(rng):
    net = DipNet.from_config(ModelConfig(input_dim=5, hidden=[20], activation="tanh"), 0)
    x = rng.standard_normal((200, 5))
    y = rng.standard_normal((200, 1))
    assert np.all(input_gradient(net, x, y) != 0)
    x_adv = fgsm_attack(net, x, y, 0.1)
    delta = 0.1 * np.sign(input_gradient(net, x, y))
    # the step itself has norm exactly epsilon; recovering it as x' - x costs one rounding
    np.testing.assert_array_equal(np.max(np.abs(delta), axis=1), np.full(200, 0.1))
    assert x_adv.tobytes() == (x + delta).tobytes()
    np.testing.assert_allclose(np.max(np.abs(x_adv - x), axis=1), 0.1, rtol=0, atol=4 * np.spacing(4.0))


def test_fgsm_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        fgsm_attack(linear([1.0]), np.zeros((1, 1)), np.zeros((1, 1)), 0.0)


def test_attack_spec_validation():
    with pytest.raises(ValueError):
        AttackSpec(kind="pgd")
    with pytest.raises(ValueError):
        AttackSpec(kind="fgsm", epsilon=0.0)
    spec = AttackSpec(kind="gaussian", sigma=0.1, phase="train")
    assert spec.applies_to_training and not spec.applies_to_eval
    assert not AttackSpec().active


def test_randomized_smoothing_single_input_projection():
    cfg, hp = randomized_smoothing_mode(ModelConfig(input_dim=3, hidden=[4, 4]), Hyperparams(), 0.2)
    net = DipNet.from_config(cfg)
    assert [p.enabled for p in net.projections] == [True, False, False]
    assert not net.projections[0].trainable
    np.testing.assert_allclose(net.projections[0].variances(), 0.04)
    assert (hp.alpha, hp.beta, hp.lambda_stab, hp.m, hp.k) == (0.0, 0.0, 0.0, 1, 1)


def test_randomized_smoothing_zero_sigma_matches_standard():
    data = split(synth_regression(300, 3, 0.1, seed=2), 0.3, seed=0)
    base_cfg = ModelConfig(input_dim=3, hidden=[8], projection="disabled")
    base_hp = Hyperparams(alpha=0, beta=0, lambda_stab=0, m=1, k=1, epochs=2, batch_size=32, lr=1e-3)
    rs_cfg, rs_hp = randomized_smoothing_mode(ModelConfig(input_dim=3, hidden=[8]),
                                              Hyperparams(epochs=2, batch_size=32, lr=1e-3), 0.0)
    a, b = DipNet.from_config(base_cfg, 1), DipNet.from_config(rs_cfg, 1)
    la = [h["loss"]["total"] for h in train(a, data, base_hp, 0).history]
    lb = [h["loss"]["total"] for h in train(b, data, rs_hp, 0).history]
    assert la == lb


def test_randomized_smoothing_output_variance_matches_input_noise(rng):
    cfg, _ = randomized_smoothing_mode(ModelConfig(input_dim=2, hidden=[6], activation="tanh"), Hyperparams(), 0.5)
    rs = DipNet.from_config(cfg, 3)
    plain = DipNet(rs.weights, rs.biases, [ProjectionParams.disabled(2), ProjectionParams.disabled(6)], "tanh")
    x = np.array([[0.2, -0.3]])
    n = 50_000
    rs_out = np.array([predict_averaged(rs, x, 1, rng).value[0, 0] for _ in range(n // 10)] * 1)
    noisy = forward_array(plain, x + 0.5 * rng.standard_normal((n, 2)))[:, 0]
    v_rs, v_mc = rs_out.var(ddof=1), noisy.var(ddof=1)
    se = np.hypot(v_rs * np.sqrt(2 / len(rs_out)), v_mc * np.sqrt(2 / n))
    assert abs(v_rs - v_mc) < 4 * se
