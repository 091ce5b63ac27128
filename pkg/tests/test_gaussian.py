import numpy as np
import pytest

from biflow import gaussian, linalg
from biflow.sampling import Rng


def test_joint_covariance_identity_example():
    p = gaussian.GaussianLinearProblem(np.eye(2), np.eye(2), np.eye(2))
    expected = np.block([[np.eye(2), np.eye(2)], [np.eye(2), 2 * np.eye(2)]])
    np.testing.assert_array_equal(gaussian.joint_covariance(p), expected)


def test_joint_covariance_matches_monte_carlo():
    p = gaussian.GaussianLinearProblem(np.array([[1.0, -0.5]]), np.diag([1.0, 4.0]), np.array([[0.3]]))
    r = np.random.default_rng(0)
    u = r.normal(size=(200_000, 2)) * [1.0, 2.0]
    f = u @ p.K.T + np.sqrt(0.3) * r.normal(size=(200_000, 1))
    np.testing.assert_allclose(np.cov(np.hstack([u, f]).T), gaussian.joint_covariance(p), atol=0.05)


def test_problem_validation():
    with pytest.raises(ValueError):
        gaussian.GaussianLinearProblem(np.eye(2), np.eye(3), np.eye(2))


def test_posterior_moments_scalar():
    p = gaussian.GaussianLinearProblem([[1.0]], [[1.0]], [[1.0]])
    mean, cov = gaussian.posterior_moments(p, [2.0])
    assert mean[0] == pytest.approx(1.0)
    assert cov[0, 0] == pytest.approx(0.5)


def test_posterior_tends_to_prior_for_huge_noise():
    p = gaussian.benchmark_problem(1e4)
    mean, cov = gaussian.posterior_moments(p, [1.0, 1.0])
    np.testing.assert_allclose(mean, 0.0, atol=1e-7)
    np.testing.assert_allclose(cov, np.eye(2), atol=1e-7)


def test_posterior_moments_against_importance_sampling():
    p = gaussian.benchmark_problem(1.0)
    f = np.array([1.0, -0.5])
    u = np.random.default_rng(3).normal(size=(400_000, 2))
    resid = f - u @ p.K.T
    w = np.exp(-0.5 * np.sum(resid**2, axis=1))
    w /= w.sum()
    mc_mean = w @ u
    mc_cov = (u - mc_mean).T @ ((u - mc_mean) * w[:, None])
    mean, cov = gaussian.posterior_moments(p, f)
    np.testing.assert_allclose(mean, mc_mean, atol=0.02)
    np.testing.assert_allclose(cov, mc_cov, atol=0.02)


def test_lower_map_for_identity_operator():
    p = gaussian.GaussianLinearProblem(np.eye(2), np.eye(2), np.eye(2))
    maps = gaussian.build_maps(p)
    expected = np.block([[np.eye(2), np.zeros((2, 2))], [np.eye(2), np.eye(2)]])
    np.testing.assert_allclose(maps.f_check, expected, atol=1e-15)


@pytest.mark.parametrize("sigma", [1e-3, 0.1, 0.5, 1.0, 3.0])
def test_factor_maps_are_square_roots_of_joint_covariance(sigma):
    p = gaussian.benchmark_problem(sigma)
    maps = gaussian.build_maps(p)
    joint = gaussian.joint_covariance(p)
    assert linalg.is_lower_triangular(maps.f_check) and linalg.is_upper_triangular(maps.f_hat)
    scale = np.linalg.norm(joint)
    assert np.linalg.norm(maps.f_check @ maps.f_check.T - joint) < 1e-12 * scale
    assert np.linalg.norm(maps.f_hat @ maps.f_hat.T - joint) < 1e-12 * scale


@pytest.mark.parametrize("sigma", [1e-4, 0.05, 0.5, 2.0])
def test_s_times_r_is_identity(sigma):
    maps = gaussian.build_maps(gaussian.benchmark_problem(sigma))
    np.testing.assert_allclose(maps.s @ maps.r, np.eye(4), atol=1e-9)
    np.testing.assert_allclose(maps.r @ maps.s, np.eye(4), atol=1e-9)


def test_non_square_problem():
    K = np.array([[1.0, 0.5, 0.0]])
    p = gaussian.GaussianLinearProblem(K, np.diag([1.0, 2.0, 0.5]), np.array([[0.2]]))
    maps = gaussian.build_maps(p)
    np.testing.assert_allclose(maps.s @ maps.r, np.eye(4), atol=1e-10)
    S = maps.bidirectional()
    z = np.random.default_rng(0).normal(size=(10, 4))
    np.testing.assert_allclose(S.forward(z), z @ maps.s.T, atol=1e-12)


def test_sweep_lower_and_upper_condition_numbers_agree():
    table = gaussian.condition_sweep(gaussian.benchmark_problem(), np.logspace(-6, 0, 25))
    rel = np.abs(table[:, 1] - table[:, 2]) / table[:, 1]
    assert np.all(rel < 1e-8)


def test_sweep_rejects_nonpositive_noise():
    with pytest.raises(ValueError):
        gaussian.condition_sweep(gaussian.benchmark_problem(), [0.1, 0.0])


def test_small_noise_limit_diagonal_operator():
    p = gaussian.GaussianLinearProblem(np.diag([2.0, 0.5]), np.eye(2), 1e-16 * np.eye(2))
    s = gaussian.build_maps(p).s
    np.testing.assert_allclose(s[:2, :2], 0.0, atol=1e-6)
    np.testing.assert_allclose(s[:2, 2:], -np.eye(2), atol=1e-6)
    np.testing.assert_allclose(s[2:, :2], p.K, atol=1e-12)


def test_small_noise_limit_symmetric_operator():
    p = gaussian.benchmark_problem(1e-8)
    s = gaussian.build_maps(p).s
    q = -s[:2, 2:]
    np.testing.assert_allclose(s[:2, :2], 0.0, atol=1e-6)
    np.testing.assert_allclose(q @ q.T, np.eye(2), atol=1e-6)
    assert linalg.condition_number_2(s) == pytest.approx(3.0, abs=1e-6)


def test_pushforward_of_reference_has_joint_covariance():
    p = gaussian.benchmark_problem(0.5)
    maps = gaussian.build_maps(p)
    z = Rng(5).normal((200_000, 4))
    emp = np.cov((z @ maps.f_check.T).T)
    np.testing.assert_allclose(emp, gaussian.joint_covariance(p), atol=0.06)


def test_matrix_agrees_with_composed_conditionals():
    maps = gaussian.build_maps(gaussian.benchmark_problem(0.3))
    S = maps.bidirectional()
    z = Rng(2).normal((100, 4))
    np.testing.assert_allclose(S.forward(z), z @ maps.s.T, atol=1e-12)
    np.testing.assert_allclose(S.inverse(z), z @ maps.r.T, atol=1e-12)
