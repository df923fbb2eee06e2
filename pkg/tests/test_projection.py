import numpy as np
import pytest

from dipnet import autodiff as ad
from dipnet.projection import (
    LOG_LAMBDA_MAX,
    LOG_LAMBDA_MIN,
    Mode,
    ProjectionParams,
    draw_noise_trajectory,
    project_and_sample,
)


def test_disabled_is_identity(rng):
    v = np.array([1.5, -2.0])
    u = project_and_sample(v, ProjectionParams.disabled(2), rng)
    np.testing.assert_array_equal(u, v)


def test_disabled_consumes_no_randomness():
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    project_and_sample(np.zeros(4), ProjectionParams.disabled(4), a)
    assert a.standard_normal() == b.standard_normal()


def test_clamped_zero_variance_limit(rng):
    p = ProjectionParams(2, Mode.LEARNABLE, np.array([-np.inf, -1e9]))
    assert np.all(p.log_lambda == LOG_LAMBDA_MIN)
    v = np.array([0.3, -0.7])
    np.testing.assert_allclose(project_and_sample(v, p, rng), v, atol=1e-6)


def test_clamp_upper():
    p = ProjectionParams.learnable(3, init=10.0)
    assert np.all(p.log_lambda == LOG_LAMBDA_MAX)


def test_sample_variances_match_lambda(rng):
    p = ProjectionParams(2, Mode.FIXED, np.log([4.0, 1.0]))
    u = project_and_sample(np.zeros((100_000, 2)), p, rng)
    var = u.var(axis=0, ddof=1)
    assert 3.9 <= var[0] <= 4.1
    assert 0.97 <= var[1] <= 1.03


def test_sample_mean_is_v(rng):
    lam = np.array([0.25, 2.0, 1e-3])
    v = np.array([1.0, -3.0, 0.5])
    p = ProjectionParams(3, Mode.LEARNABLE, np.log(lam))
    n = 100_000
    u = project_and_sample(np.broadcast_to(v, (n, 3)).copy(), p, rng)
    assert np.all(np.abs((u - v).mean(axis=0)) < 4 * np.sqrt(lam / n))


def test_tied_shares_one_variance(rng):
    p = ProjectionParams.learnable(5, init=np.log(0.5), tied=True)
    assert p.log_lambda.shape == (1,)
    np.testing.assert_allclose(p.variances(), np.full(5, 0.5))


def test_wrong_dim_raises(rng):
    with pytest.raises(ad.ShapeError):
        project_and_sample(np.zeros(3), ProjectionParams.learnable(2), rng)


def test_fixed_rejects_nonpositive():
    with pytest.raises(ValueError):
        ProjectionParams.fixed(2, 0.0)


def test_gradient_through_log_lambda(rng):
    v = ad.Value(np.array([0.2, -0.4]), requires_grad=True)
    s = ad.Value(np.array([0.1, -0.3]), requires_grad=True)
    p = ProjectionParams(2, Mode.LEARNABLE, s.data)
    eps_rng = np.random.default_rng(5)
    u = project_and_sample(v, p, np.random.default_rng(5), log_lambda=s)
    ad.backward(ad.sum(u))
    eps = eps_rng.standard_normal(2)
    np.testing.assert_allclose(s.grad, 0.5 * np.exp(0.5 * s.data) * eps, rtol=1e-14)
    np.testing.assert_array_equal(v.grad, np.ones(2))


def test_trajectory_all_disabled_is_empty(rng):
    assert draw_noise_trajectory([ProjectionParams.disabled(3), ProjectionParams.disabled(4)], rng) == {}


def test_trajectory_same_seed_identical():
    projs = [ProjectionParams.learnable(3), ProjectionParams.disabled(4), ProjectionParams.fixed(2, 0.5)]
    a = draw_noise_trajectory(projs, np.random.default_rng(9), (6,))
    b = draw_noise_trajectory(projs, np.random.default_rng(9), (6,))
    assert sorted(a) == [0, 2]
    for key in a:
        assert a[key].shape == (6, projs[key].dim)
        assert a[key].tobytes() == b[key].tobytes()


def test_trajectories_from_split_seeds_uncorrelated():
    a = draw_noise_trajectory([10_000], np.random.default_rng([1, 0]))[0]
    b = draw_noise_trajectory([10_000], np.random.default_rng([1, 1]))[0]
    corr = np.corrcoef(a, b)[0, 1]
    assert -0.03 < corr < 0.03
