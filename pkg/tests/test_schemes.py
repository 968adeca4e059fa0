import numpy as np
import pytest

from ecgrad.compressors import CompressorSpec, eps_bound
from ecgrad.data_io import build_erm, synth_least_squares, synth_quadratic
from ecgrad.errors import ConfigError
from ecgrad.problems import ErmProblem, OracleConfig, QuadraticProblem
from ecgrad.schemes import (
    BfgsState,
    SchemeConfig,
    accumulation_diagnostic,
    bfgs_update,
    direct_step,
    ec_step,
    init_workers,
    step,
)
from ecgrad.verify import _trajectory

SCALAR = QuadraticProblem([[1.0]], [0.0])


def test_direct_scalar_trace():
    w = init_workers(1, 1)
    comp = CompressorSpec("epsball", eps=0.3)
    rep = direct_step(np.array([1.0]), w, SCALAR, comp, 1.0)
    assert rep.x_next[0] == pytest.approx(0.3)
    rep = direct_step(rep.x_next, w, SCALAR, comp, 1.0)
    assert rep.x_next[0] == pytest.approx(0.3)
    assert w[0].error[0] == 0.0


def test_direct_exact_is_gradient_step():
    p = QuadraticProblem(np.eye(2), [0.0, 0.0])
    rep = direct_step(np.array([2.0, 0.0]), init_workers(1, 2), p, CompressorSpec("exact"), 0.5)
    np.testing.assert_array_equal(rep.x_next, [1.0, 0.0])


def test_ec_hessian_scalar_trace():
    w = init_workers(1, 1)
    comp = CompressorSpec("epsball", eps=0.3)
    sch = SchemeConfig("ec", "hessian", gamma=1.0)
    x1 = ec_step(np.array([1.0]), w, SCALAR, comp, sch).x_next
    assert x1[0] == pytest.approx(0.3) and w[0].error[0] == pytest.approx(0.3)
    x2 = ec_step(x1, w, SCALAR, comp, sch).x_next
    assert x2[0] == pytest.approx(0.3) and w[0].error[0] == pytest.approx(0.3)
    # A = 1 - gamma*H = 0, so x^2 - x* - gamma*e^2 = A^2 (x^0 - x*) = 0
    assert x2[0] - 1.0 * w[0].error[0] == pytest.approx(0.0, abs=1e-15)


def test_ec_identity_rounding_trace():
    w = init_workers(1, 1)
    rep = ec_step(np.array([0.6]), w, SCALAR, CompressorSpec("rounding", delta=1.0),
                  SchemeConfig("ec", "identity", gamma=0.25))
    assert rep.payloads[0][0] == 1.0
    assert rep.x_next[0] == pytest.approx(0.35)
    assert w[0].error[0] == pytest.approx(-0.4)


def test_error_memory_norm_matches_report():
    H, b = synth_quadratic(5, 20.0, seed=1)
    p = QuadraticProblem(H, b)
    comp = CompressorSpec("rounding", delta=0.4)
    w = init_workers(1, 5)
    x = np.ones(5)
    for k in range(20):
        rep = ec_step(x, w, p, comp, SchemeConfig("ec", "diag", gamma=0.5 / p.L), iteration=k)
        x = rep.x_next
        assert np.linalg.norm(w[0].error) == pytest.approx(rep.error_norms[0], rel=1e-12)
        assert np.linalg.norm(w[0].error) <= eps_bound(comp, 5) + 1e-12


def test_scheme_parsing():
    assert SchemeConfig.parse("direct") == SchemeConfig("direct")
    assert SchemeConfig.parse("ec:scaled:0.9").alpha == 0.9
    for text in ("direct", "ec:identity", "ec:scaled:0.9", "ec:hessian", "ec:diag", "ec:bfgs"):
        assert str(SchemeConfig.parse(text)) == text
    for bad in ("ec", "ec:newton", "ec:scaled:0", "ec:scaled:1.5", "ec:scaled:x", "direct:identity"):
        with pytest.raises(ConfigError):
            SchemeConfig.parse(bad)
    with pytest.raises(ConfigError):
        SchemeConfig("direct", gamma=-1.0)


def test_ec_step_requires_gamma_and_kind():
    w = init_workers(1, 1)
    with pytest.raises(ConfigError):
        ec_step(np.zeros(1), w, SCALAR, CompressorSpec("exact"), SchemeConfig("ec", "identity"))
    with pytest.raises(ConfigError):
        ec_step(np.zeros(1), w, SCALAR, CompressorSpec("exact"), SchemeConfig("direct", gamma=1.0))
    with pytest.raises(ConfigError):
        ec_step(np.zeros(1), init_workers(2, 1), SCALAR, CompressorSpec("exact"),
                SchemeConfig("ec", "identity", gamma=1.0))


def test_identity_on_random_quadratic_every_compressor():
    H, b = synth_quadratic(8, 50.0, seed=4)
    p = QuadraticProblem(H, b)
    x0 = np.full(8, 2.0)
    for comp in (CompressorSpec("rounding", delta=0.7), CompressorSpec("sign"),
                 CompressorSpec("topk", k=2), CompressorSpec("epsball", eps=0.2)):
        for gamma in (1 / p.L, 2 / (p.mu + p.L)):
            xs, es, _ = _trajectory(p, comp, SchemeConfig("ec", "hessian", gamma=gamma), x0, 200)
            r = accumulation_diagnostic(xs, es, p, gamma, "hessian")
            assert np.max(np.linalg.norm(r, axis=1)) <= 1e-9 * (1 + np.linalg.norm(x0 - p.x_star))


def test_scaled_accumulation_matches_direct_residual():
    # x^k - x* - A^k z0 - gamma*e^k equals the accumulated term
    p = QuadraticProblem([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0])
    gamma = 0.4
    x0 = np.array([3.0, -2.0])
    A = np.eye(2) - gamma * p.H
    for weighting, alpha in (("identity", 1.0), ("scaled", 0.7)):
        sch = SchemeConfig("ec", weighting, alpha=alpha, gamma=gamma)
        xs, es, _ = _trajectory(p, CompressorSpec("rounding", delta=1.0), sch, x0, 60)
        acc = accumulation_diagnostic(xs, es, p, gamma, weighting, alpha)
        P = x0 - p.x_star
        for k in range(len(xs)):
            direct = xs[k] - p.x_star - P - gamma * es[k]
            np.testing.assert_allclose(acc[k], direct, atol=1e-12)
            P = A @ P


def test_exact_compressor_diagnostic_is_zero():
    p = QuadraticProblem([[2.0, 0.5], [0.5, 1.0]], [1.0, -1.0])
    for weighting in ("hessian", "identity"):
        xs, es, _ = _trajectory(p, CompressorSpec("exact"), SchemeConfig("ec", weighting, gamma=0.3),
                                np.ones(2), 50)
        assert np.max(np.abs(accumulation_diagnostic(xs, es, p, 0.3, weighting))) <= 1e-12


def test_diagnostic_rejects_non_quadratic():
    p = ErmProblem([(np.eye(2), np.ones(2))], "least-squares")
    with pytest.raises(ConfigError):
        accumulation_diagnostic(np.zeros((2, 2)), np.zeros((2, 2)), p, 0.1)


def test_bfgs_first_call_and_skip():
    st = BfgsState(B=3.0 * np.eye(2))
    bfgs_update(st, np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(st.B, 3.0 * np.eye(2))
    bfgs_update(st, np.array([1.0, 0.0]), np.array([1.0, 2.0]))  # s'y = 0
    np.testing.assert_array_equal(st.B, 3.0 * np.eye(2))
    assert st.skipped == 1 and st.updates == 0


def test_bfgs_converges_on_quadratic():
    H, b = synth_quadratic(4, 10.0, seed=2)
    p = QuadraticProblem(H, b)
    st = BfgsState(B=p.L * np.eye(4))
    x = np.ones(4) * 3
    err = []
    for _ in range(50):
        g = p.grad(x)
        bfgs_update(st, x, g)
        err.append(np.linalg.norm(st.B - H))
        x = x - np.linalg.solve(st.B, g) * 0.5
    assert err[-1] < err[0]
    np.testing.assert_allclose(st.B, st.B.T)


def test_bfgs_weighting_initialises_to_L():
    p = QuadraticProblem(np.diag([1.0, 4.0]), [1.0, 1.0])
    w = init_workers(1, 2)
    ec_step(np.zeros(2), w, p, CompressorSpec("sign"), SchemeConfig("ec", "bfgs", gamma=0.2))
    np.testing.assert_array_equal(w[0].bfgs.B, 4.0 * np.eye(2))
    assert w[0].bfgs.prev_x is not None


def _ls_problem(workers=3, shared=False):
    Z, y, _ = synth_least_squares(60, 4, seed=3)
    if shared:
        return ErmProblem([(Z, y)] * workers, "least-squares")
    return build_erm(Z, y, workers, "least-squares")


def test_exact_compressor_all_schemes_identical():
    p = _ls_problem()
    oracle = OracleConfig(batch_size=5, seed=9)
    gamma = 0.3 / p.constants().L
    runs = []
    for text in ("direct", "ec:identity", "ec:scaled:0.3", "ec:hessian", "ec:diag", "ec:bfgs"):
        w = init_workers(3, 4)
        x = np.zeros(4)
        xs = []
        for k in range(30):
            x = step(x, w, p, CompressorSpec("exact"), SchemeConfig.parse(text, gamma), oracle, k).x_next
            xs.append(x)
        runs.append(np.array(xs))
    for r in runs[1:]:
        np.testing.assert_array_equal(r, runs[0])


def test_identical_shards_match_single_worker():
    p3 = _ls_problem(3, shared=True)
    Z, y = p3.Z[0], p3.y[0]
    p1 = ErmProblem([(Z, y)], "least-squares")
    comp = CompressorSpec("rounding", delta=0.05)
    gamma = 0.5 / p1.constants().L
    sch = SchemeConfig("ec", "hessian", gamma=gamma)
    w1, w3 = init_workers(1, 4), init_workers(3, 4)
    x1 = x3 = np.zeros(4)
    for k in range(40):
        x1 = ec_step(x1, w1, p1, comp, sch, iteration=k).x_next
        x3 = ec_step(x3, w3, p3, comp, sch, iteration=k).x_next
    np.testing.assert_allclose(x3, x1, atol=1e-12)


def test_thread_pool_is_bit_identical(monkeypatch):
    p = _ls_problem(5)
    oracle = OracleConfig(batch_size=4, seed=1)
    sch = SchemeConfig("ec", "hessian", gamma=0.5 / p.constants().L)
    out = []
    for threads in (1, 4):
        w = init_workers(5, 4)
        x = np.zeros(4)
        for k in range(25):
            x = ec_step(x, w, p, CompressorSpec("sign"), sch, oracle, k, threads=threads).x_next
        out.append(x)
    np.testing.assert_array_equal(out[0], out[1])
    monkeypatch.setenv("ECGRAD_THREADS", "3")
    w = init_workers(5, 4)
    x = np.zeros(4)
    for k in range(25):
        x = ec_step(x, w, p, CompressorSpec("sign"), sch, oracle, k).x_next
    np.testing.assert_array_equal(x, out[0])


def test_bits_reported():
    p = _ls_problem(2)
    rep = direct_step(np.zeros(4), init_workers(2, 4), p, CompressorSpec("sign"), 0.1)
    assert rep.bits == 2 * (4 + 64)
