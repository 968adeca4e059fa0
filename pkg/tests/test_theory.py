import math

import numpy as np
import pytest

from ecgrad.errors import ConfigError, StepSizeError
from ecgrad.problems import Constants
from ecgrad.theory import (
    BoundInputs,
    contraction,
    example3_trajectory,
    parse_gamma_rule,
    thm1_bound,
    thm3_bound,
    thm4_bounds,
    thm5_bound,
    thm6_bound,
    thm6_constant,
    thm7_alpha1,
    thm7_alpha2,
    thm7_bounds,
    validate_step,
)


def test_thm1_rate_and_floor():
    inp = BoundInputs(mu=1.0, L=10.0, gamma=0.1, eps=0.2, x0_dist=3.0, k=50)
    assert contraction(inp) == pytest.approx(0.9)
    c = thm1_bound(inp)
    assert c.floor == pytest.approx(0.2)
    assert c.values[0] == pytest.approx(3.2)
    assert c.values[10] == pytest.approx(0.9**10 * 3 + 0.2)


def test_thm1_perfect_conditioning():
    c = thm1_bound(BoundInputs(mu=2.0, L=2.0, gamma=0.5, eps=0.4, x0_dist=1.0, k=5))
    np.testing.assert_allclose(c.values[1:], 0.2)


def test_thm1_rejects_other_steps():
    with pytest.raises(StepSizeError):
        thm1_bound(BoundInputs(mu=1.0, L=10.0, gamma=0.05))


def test_thm5_floor_ratio():
    kappa = 1e3
    inp = BoundInputs(mu=1.0, L=kappa, gamma=1 / kappa, eps=0.1, x0_dist=1.0)
    assert thm1_bound(inp).floor / thm5_bound(inp).floor == pytest.approx(kappa)
    assert thm5_bound(inp).floor / thm1_bound(inp).floor == pytest.approx(inp.gamma * inp.mu)
    pure = thm5_bound(inp.replace(eps=0.0), ks=np.arange(4))
    np.testing.assert_allclose(pure.values, (1 - 1 / kappa) ** np.arange(4))


def test_thm3_requires_two_over_mu_plus_L():
    inp = BoundInputs(mu=1.0, L=3.0, gamma=0.5, eps=0.1, x0_dist=1.0, k=3)
    c = thm3_bound(inp)
    assert c.floor == pytest.approx(0.1)
    np.testing.assert_allclose(c.values, 0.5 ** np.arange(4) + 0.1)
    with pytest.raises(StepSizeError):
        thm3_bound(inp.replace(gamma=1 / 3))
    assert thm3_bound(BoundInputs(mu=1.0, L=1.0, gamma=1.0, eps=0.3, x0_dist=2.0, k=2)).values[1] == pytest.approx(0.3)


def test_thm6_constant_example():
    inp = BoundInputs(mu=1.0, L=3.0, gamma=0.5, eps=0.2, x0_dist=1.0, k=4)
    assert thm6_constant(inp) == pytest.approx(7.0)
    assert thm6_bound(inp).floor == pytest.approx(0.5 * 0.2 * 7.0)
    assert thm6_bound(inp.replace(eps=0.0)).floor == 0.0


def test_thm6_floor_vanishes_with_scaling():
    floors = []
    for s in (1.0, 10.0, 100.0):
        mu, L = s, 3 * s
        floors.append(thm6_bound(BoundInputs(mu=mu, L=L, gamma=2 / (mu + L), eps=0.1)).floor)
    assert floors[0] > floors[1] > floors[2]


def test_thm4_noiseless_limit():
    inp = BoundInputs(mu=0.5, L=2.0, gamma=0.1, x0_dist=2.0, f0_gap=3.0, k=20)
    b = thm4_bounds(inp)
    ks = np.arange(21)
    den = 1 - 3 * 2.0 * 0.1
    np.testing.assert_allclose(b["nonconvex"].values, 2 / (0.1 * den) * 3.0 / (ks + 1))
    np.testing.assert_allclose(b["strongly_convex"].values, 4.0 / (2 * 0.1 * den) / (ks + 1))
    assert b["nonconvex"].floor == 0.0


def test_thm4_floors_exceed_eps_squared():
    for gamma in np.linspace(0.01, 0.32, 12):
        inp = BoundInputs(mu=0.5, L=1.0, gamma=float(gamma), eps=0.3, sigma_sq=0.0)
        b = thm4_bounds(inp)
        assert b["nonconvex"].floor > 0.09
        assert b["strongly_convex"].floor > 0.09 / (2 * 0.5)


def test_thm4_range():
    with pytest.raises(StepSizeError):
        thm4_bounds(BoundInputs(mu=1.0, L=1.0, gamma=1 / 3))
    assert "strongly_convex" not in thm4_bounds(BoundInputs(mu=0.0, L=1.0, gamma=0.1))


def test_thm7_alpha_examples():
    inp = BoundInputs(mu=1.0, L=1.0, gamma=0.1, sigma_H_sq=0.0, beta=0.5)
    assert thm7_alpha2(inp) == pytest.approx(3.6)
    assert thm7_alpha1(inp) == pytest.approx(1 + 2 + 4.6)


def test_thm7_compression_term_quadratic_in_gamma():
    base = BoundInputs(mu=1.0, L=1.0, gamma=0.02, eps=0.5, beta=0.5)
    f1 = thm7_bounds(base)["nonconvex"].floor
    f2 = thm7_bounds(base.replace(gamma=0.01))["nonconvex"].floor
    assert f1 / f2 == pytest.approx(4.0, rel=0.1)
    t4 = thm4_bounds(base)["nonconvex"].floor
    assert f1 < t4


def test_thm7_beta_rules():
    with pytest.raises(StepSizeError):
        thm7_bounds(BoundInputs(mu=1.0, L=1.0, gamma=0.2, beta=0.5), parts=("strongly_convex",))
    with pytest.raises(ConfigError):
        thm7_bounds(BoundInputs(mu=1.0, L=1.0, gamma=0.01, beta=1.0), parts=("strongly_convex",))
    with pytest.raises(ConfigError):
        thm7_bounds(BoundInputs(mu=0.0, L=1.0, gamma=0.01), parts=("strongly_convex",))
    a = [thm7_alpha1(BoundInputs(mu=1.0, L=1.0, gamma=0.01, beta=b)) for b in (0.5, 0.1, 0.01)]
    assert a[0] < a[1] < a[2]


def test_bounds_nonnegative_and_decreasing():
    inp = BoundInputs(mu=0.3, L=2.0, gamma=0.05, eps=0.2, sigma_sq=0.4, sigma_H_sq=0.1,
                      x0_dist=2.0, f0_gap=1.0, k=100)
    curves = [*thm4_bounds(inp).values(), *thm7_bounds(inp).values(),
              thm1_bound(inp.replace(gamma=0.5)), thm5_bound(inp.replace(gamma=0.5)),
              thm6_bound(inp.replace(gamma=2 / 2.3))]
    for c in curves:
        assert np.all(c.values >= 0)
        assert np.all(np.diff(c.values) <= 1e-15)


def test_example_trajectory():
    r = example3_trajectory(1.0, 1.0, 0.5, 2.0, np.arange(1, 6))
    np.testing.assert_allclose(r.value, 0.5)
    assert example3_trajectory(1.0, 0.5, 0.5, 2.0, 1).value == pytest.approx(1.25)
    assert example3_trajectory(1.0, 0.5, 0.5, 2.0, 2).value == pytest.approx(0.875)
    r = example3_trajectory(2.0, 0.3, 0.1, 2.1, np.arange(200))
    assert np.all(r.value >= r.dist_floor)
    assert r.dist_floor == pytest.approx(0.05) and r.gap_floor == pytest.approx(0.01 / 4)


def test_example_trajectory_preconditions():
    with pytest.raises(StepSizeError):
        example3_trajectory(1.0, 1.5, 0.1, 1.0, 3)
    with pytest.raises(ConfigError):
        example3_trajectory(1.0, 0.5, 1.0, 0.5, 3)


def test_step_rules():
    c = Constants(mu=1.0, L=3.0, kappa=3.0)
    assert validate_step("1/L", Constants(1.0, 1.0, 1.0)) == 1.0
    assert validate_step("2/(mu+L)", c) == 0.5
    assert validate_step("0.1/L", c) == pytest.approx(0.1 / 3)
    assert validate_step("robust-sign", c) == pytest.approx(1 / (60 * math.sqrt(3) * 3))
    assert validate_step("thm4", c, require="thm4") < 1 / 9
    assert validate_step("thm7b:0.5", Constants(1.0, 1.0, 1.0)) < 1 / 6
    with pytest.raises(StepSizeError):
        validate_step("10/L", c, require="thm4")
    with pytest.raises(StepSizeError):
        validate_step("0.2", Constants(1.0, 1.0, 1.0), require="thm7b", beta=0.5)
    with pytest.raises(ConfigError):
        parse_gamma_rule("fast")
    with pytest.raises(ConfigError):
        parse_gamma_rule("thm7b")
