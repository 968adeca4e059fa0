import math

import numpy as np
import pytest

from ecgrad.errors import ConfigError, InputDomainError
from ecgrad.problems import (
    ErmProblem,
    OracleConfig,
    QuadraticProblem,
    default_probes,
    estimate_variances,
)
from ecgrad.verify import _fd_grad, _fd_hess, random_erm


def test_quadratic_identity_hessian_example():
    p = QuadraticProblem(np.eye(2), [1.0, 0.0])
    np.testing.assert_array_equal(p.grad([0.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(p.x_star, [-1.0, 0.0])
    assert np.linalg.norm(p.grad(p.x_star)) <= 1e-8


def test_quadratic_constants():
    c = QuadraticProblem(np.diag([1.0, 10.0]), [0.0, 0.0]).constants()
    assert (c.mu, c.L, c.kappa) == (1.0, 10.0, 10.0)


def test_quadratic_rejects_bad_matrices():
    with pytest.raises(ConfigError):
        QuadraticProblem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])
    with pytest.raises(ConfigError):
        QuadraticProblem([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0])
    with pytest.raises(InputDomainError):
        QuadraticProblem([[math.inf]], [0.0])
    with pytest.raises(ConfigError):
        QuadraticProblem(np.eye(2), [0.0, 0.0]).grad([1.0, 2.0, 3.0])


def test_quadratic_stationarity_random():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.standard_normal((6, 6))
        b = rng.standard_normal(6)
        p = QuadraticProblem(A @ A.T + np.eye(6), b)
        assert np.linalg.norm(p.H @ p.x_star + b) <= 1e-8 * (1 + np.linalg.norm(b))


def test_robust_gradient_and_hessian_examples():
    p = ErmProblem([(np.array([[1.0, 0.0]]), np.array([0.0]))], "robust", 0.0)
    np.testing.assert_allclose(p.grad([1.0, 0.0]), [0.5, 0.0])
    np.testing.assert_allclose(p.hessian([0.0, 0.0]), [[2.0, 0.0], [0.0, 0.0]])


def test_logistic_gradient_and_hessian_examples():
    p = ErmProblem([(np.array([[1.0, 1.0]]), np.array([1.0]))], "logistic", 0.0)
    np.testing.assert_allclose(p.grad([0.0, 0.0]), [-0.5, -0.5])
    lam = 0.3
    q = ErmProblem([(np.array([[1.0, 0.0]]), np.array([1.0]))], "logistic", lam)
    np.testing.assert_allclose(q.hessian([0.0, 0.0]), [[0.25 + lam, 0.0], [0.0, lam]])


def test_erm_constants_examples():
    ls = ErmProblem([(np.array([[1.0, 0.0]]), np.array([1.0]))], "least-squares", 0.0).constants()
    assert ls.L == pytest.approx(1.0)
    assert ls.mu == pytest.approx(0.0, abs=1e-15)
    rb = ErmProblem([(np.array([[0.6, 0.8]]), np.array([1.0]))], "robust", 0.0).constants()
    assert rb.L == pytest.approx(1 / (6 * math.sqrt(3)))
    assert rb.L == pytest.approx(0.09623, abs=1e-5)
    assert rb.L_curv == pytest.approx(2.0)


def test_erm_validation():
    with pytest.raises(ConfigError):
        ErmProblem([(np.ones((2, 2)), np.array([1.0, 0.0]))], "logistic")
    with pytest.raises(InputDomainError):
        ErmProblem([(np.zeros((0, 2)), np.zeros(0))], "least-squares")
    with pytest.raises(ConfigError):
        ErmProblem([(np.ones((1, 2)), [1.0])], "hinge")
    with pytest.raises(ConfigError):
        ErmProblem([(np.ones((1, 2)), [1.0]), (np.ones((1, 3)), [1.0])], "least-squares")


@pytest.mark.parametrize("loss", ["least-squares", "logistic", "robust"])
def test_derivatives_match_finite_differences(loss):
    rng = np.random.default_rng(hash(loss) % 2**32)
    for _ in range(34):
        p = random_erm(rng, loss)
        x = rng.standard_normal(p.dim)
        g, fd = p.grad(x), _fd_grad(p.value, x)
        assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))
        H, fdh = p.hessian(x), _fd_hess(p.grad, x)
        assert np.linalg.norm(H - fdh) <= 1e-5 * max(1.0, np.linalg.norm(fdh))
        assert np.max(np.abs(H - H.T)) <= 1e-10
        if loss != "robust" and p.lam > 0:
            assert np.linalg.eigvalsh(H)[0] >= p.lam - 1e-8


@pytest.mark.parametrize("loss", ["least-squares", "logistic", "robust"])
def test_full_gradient_is_mean_of_local(loss):
    rng = np.random.default_rng(8)
    p = random_erm(rng, loss, n_workers=4)
    x = rng.standard_normal(p.dim)
    local = sum(p.grad(x, worker=i) for i in range(p.n_workers)) / p.n_workers
    np.testing.assert_allclose(local, p.grad(x), rtol=1e-12, atol=1e-15)


def test_hvp_and_diag_consistent_with_hessian():
    rng = np.random.default_rng(4)
    for loss in ("least-squares", "logistic", "robust"):
        p = random_erm(rng, loss, n_workers=2, m=6, d=4)
        x, v = rng.standard_normal(4), rng.standard_normal(4)
        idx = np.array([0, 2, 2, 5])
        H = p.hessian_batch(1, x, idx)
        np.testing.assert_allclose(p.hvp_batch(1, x, v, idx), H @ v, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(p.hessian_diag_batch(1, x, idx), np.diag(H), rtol=1e-12, atol=1e-14)


def test_full_batch_without_replacement_equals_gradient():
    rng = np.random.default_rng(1)
    p = random_erm(rng, "logistic", n_workers=1, m=7, d=3)
    x = rng.standard_normal(3)
    oracle = OracleConfig(batch_size=7, replace=False)
    np.testing.assert_array_equal(p.stochastic_grad(0, x, oracle, 5), p.grad(x, worker=0))
    np.testing.assert_array_equal(p.stochastic_hessian(0, x, oracle, 5), p.hessian(x, worker=0))


def test_stochastic_oracles_are_seeded():
    rng = np.random.default_rng(2)
    p = random_erm(rng, "robust", n_workers=2, m=9, d=3)
    x = rng.standard_normal(3)
    o = OracleConfig(batch_size=3, seed=42)
    np.testing.assert_array_equal(p.stochastic_grad(1, x, o, 7), p.stochastic_grad(1, x, o, 7))
    np.testing.assert_array_equal(p.stochastic_hessian(1, x, o, 7), p.stochastic_hessian(1, x, o, 7))
    assert not np.array_equal(p.stochastic_grad(1, x, o, 7), p.stochastic_grad(1, x, o, 8))


def test_same_versus_independent_coupling():
    p = random_erm(np.random.default_rng(0), "least-squares", n_workers=1, m=50, d=2)
    same = p.draw(0, OracleConfig(batch_size=5, coupling="same", seed=1), 0)
    ind = p.draw(0, OracleConfig(batch_size=5, coupling="independent", seed=1), 0)
    np.testing.assert_array_equal(same.grad_idx, same.hess_idx)
    np.testing.assert_array_equal(ind.grad_idx, same.grad_idx)
    assert not np.array_equal(ind.hess_idx, ind.grad_idx)


def test_stochastic_hessian_unbiased():
    p = random_erm(np.random.default_rng(6), "logistic", n_workers=1, m=10, d=2, lam=0.1)
    x = np.array([0.4, -0.7])
    o = OracleConfig(batch_size=1)
    draws = 20_000
    S = np.array([p.stochastic_hessian(0, x, o, k) for k in range(draws)])
    se = S.std(axis=0, ddof=1) / math.sqrt(draws)
    diff = np.abs(S.mean(axis=0) - p.hessian(x))
    assert np.all(diff <= 3 * se + 1e-15)


def test_oracle_errors():
    p = random_erm(np.random.default_rng(0), "least-squares", n_workers=1, m=3, d=2)
    with pytest.raises(ConfigError):
        p.draw(0, OracleConfig(batch_size=4), 0)
    with pytest.raises(ConfigError):
        OracleConfig(batch_size=0)
    with pytest.raises(ConfigError):
        OracleConfig(batch_size=1, coupling="shared")


def test_variance_estimates():
    p = random_erm(np.random.default_rng(0), "least-squares", n_workers=2, m=5, d=2)
    assert estimate_variances(p, None, [np.zeros(2)]) == (0.0, 0.0)
    q = QuadraticProblem(np.eye(2), [1.0, 2.0])
    assert estimate_variances(q, OracleConfig(batch_size=3), [np.zeros(2)]) == (0.0, 0.0)
    with pytest.raises(ConfigError):
        estimate_variances(p, OracleConfig(batch_size=1), [np.zeros(2)], draws=1)


def test_two_sample_variance_closed_form():
    Z = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.array([0.5, -1.0])
    p = ErmProblem([(Z, y)], "least-squares", 0.0)
    x = np.array([0.3, 0.1])
    g1 = p.grad_batch(0, x, np.array([0]))
    g2 = p.grad_batch(0, x, np.array([1]))
    est, _ = estimate_variances(p, OracleConfig(batch_size=1, seed=3), [x], draws=20_000)
    assert est == pytest.approx(np.sum((g1 - g2) ** 2) / 4, rel=0.05)


def test_optima():
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((30, 3))
    ls = ErmProblem([(Z[:15], rng.standard_normal(15)), (Z[15:], rng.standard_normal(15))], "least-squares", 0.1)
    assert np.linalg.norm(ls.grad(ls.x_star)) <= 1e-10
    lg = ErmProblem([(Z, rng.choice([-1.0, 1.0], 30))], "logistic", 0.1)
    assert np.linalg.norm(lg.grad(lg.x_star)) <= 1e-8
    rb = ErmProblem([(Z, rng.standard_normal(30))], "robust", 0.0)
    assert rb.x_star is None and rb.f_star is None and rb.objective_gap(np.zeros(3)) is None


def test_default_probes():
    q = QuadraticProblem(np.eye(3), [1.0, 0.0, 0.0])
    probes = default_probes(q, np.zeros(3), seed=1)
    assert len(probes) == 5
    np.testing.assert_array_equal(probes[0], np.zeros(3))
    np.testing.assert_array_equal(default_probes(q, np.zeros(3), seed=1)[3], probes[3])
