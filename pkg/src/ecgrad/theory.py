"""Closed-form convergence bounds, residual floors and step-size rules.

All functions are pure.  Bounds are returned on an explicit iteration grid
together with their ``k -> infinity`` floor.

Naming follows the algorithms rather than theorem numbers:

* ``thm1_bound``  direct compressed GD on a quadratic
* ``thm5_bound``  Hessian-compensated compressed GD on a quadratic
* ``thm3_bound``  distributed direct compression, deterministic gradients
* ``thm4_bounds`` distributed direct compression, stochastic gradients
* ``thm6_bound``  distributed Hessian compensation, deterministic gradients
* ``thm7_bounds`` distributed Hessian compensation, stochastic gradients/Hessians
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, StepSizeError

_REL = 1e-9


@dataclass(frozen=True)
class BoundInputs:
    mu: float
    L: float
    gamma: float
    eps: float = 0.0
    sigma_sq: float = 0.0
    sigma_H_sq: float = 0.0
    beta: float = 0.5
    x0_dist: float = 0.0
    f0_gap: float = 0.0
    k: int = 100

    @property
    def kappa(self):
        return self.L / self.mu if self.mu > 0 else math.inf

    def replace(self, **kw) -> "BoundInputs":
        return replace(self, **kw)


class BoundCurve(NamedTuple):
    ks: np.ndarray
    values: np.ndarray
    floor: float


def _grid(inputs, ks):
    if ks is None:
        return np.arange(inputs.k + 1)
    return np.asarray(ks)


def _close(a, b):
    return abs(a - b) <= _REL * max(abs(a), abs(b))


def contraction(inputs: BoundInputs) -> float:
    """Linear rate for the two step sizes covered by the quadratic results."""
    mu, L, g = inputs.mu, inputs.L, inputs.gamma
    if mu <= 0:
        raise ConfigError("linear-rate bounds need mu > 0")
    kappa = L / mu
    if _close(g, 1.0 / L):
        return 1.0 - 1.0 / kappa
    if _close(g, 2.0 / (mu + L)):
        return 1.0 - 2.0 / (kappa + 1.0)
    raise StepSizeError(f"step size {g} is neither 1/L = {1 / L} nor 2/(mu+L) = {2 / (mu + L)}")


def _linear(inputs, rho, floor, ks):
    ks = _grid(inputs, ks)
    return BoundCurve(ks, rho ** ks * inputs.x0_dist + floor, floor)


def thm1_bound(inputs: BoundInputs, ks=None) -> BoundCurve:
    """``rho^k ||x0 - x*|| + eps/mu`` for direct compressed GD on a quadratic."""
    return _linear(inputs, contraction(inputs), inputs.eps / inputs.mu, ks)


def thm5_bound(inputs: BoundInputs, ks=None) -> BoundCurve:
    """``rho^k ||x0 - x*|| + gamma*eps`` with Hessian compensation on a quadratic."""
    return _linear(inputs, contraction(inputs), inputs.gamma * inputs.eps, ks)


def _require_two_over(inputs):
    if inputs.mu <= 0:
        raise ConfigError("needs mu > 0")
    if not _close(inputs.gamma, 2.0 / (inputs.mu + inputs.L)):
        raise StepSizeError(f"requires gamma = 2/(mu+L) = {2 / (inputs.mu + inputs.L)}, got {inputs.gamma}")
    return 1.0 - 2.0 / (inputs.kappa + 1.0)


def thm3_bound(inputs: BoundInputs, ks=None) -> BoundCurve:
    rho = _require_two_over(inputs)
    return _linear(inputs, rho, inputs.eps / inputs.mu, ks)


def thm6_constant(inputs: BoundInputs) -> float:
    return 1.0 + inputs.gamma * inputs.L * (inputs.kappa + 1.0)


def thm6_bound(inputs: BoundInputs, ks=None) -> BoundCurve:
    rho = _require_two_over(inputs)
    return _linear(inputs, rho, inputs.gamma * inputs.eps * thm6_constant(inputs), ks)


def _check_thm4_gamma(inputs, beta=0.0):
    lim = (1.0 - beta) / (3.0 * inputs.L)
    if not (0 < inputs.gamma < lim):
        raise StepSizeError(f"requires 0 < gamma < {lim}, got {inputs.gamma}")


def thm4_bounds(inputs: BoundInputs, ks=None) -> dict[str, BoundCurve]:
    """Direct compression with stochastic gradients, ``gamma < 1/(3L)``.

    ``nonconvex`` bounds ``min_l E||grad f(x^l)||^2``; ``strongly_convex`` bounds
    ``E f(xbar^k) - f*`` and is only returned when ``mu > 0``.
    """
    _check_thm4_gamma(inputs)
    g, L, eps2, s2 = inputs.gamma, inputs.L, inputs.eps**2, inputs.sigma_sq
    ks = _grid(inputs, ks)
    den = 1.0 - 3.0 * L * g
    floor_nc = 3.0 * L * g * s2 / den + (1.0 + 3.0 * L * g) / den * eps2
    nc = 2.0 / (g * den) * inputs.f0_gap / (ks + 1) + floor_nc
    out = {"nonconvex": BoundCurve(ks, nc, floor_nc)}
    if inputs.mu > 0:
        floor_sc = 3.0 * g * s2 / den + 0.5 * (1.0 / inputs.mu + 3.0 * g) / den * eps2
        sc = inputs.x0_dist**2 / (2.0 * g * den) / (ks + 1) + floor_sc
        out["strongly_convex"] = BoundCurve(ks, sc, floor_sc)
    return out


def thm7_alpha2(inputs: BoundInputs) -> float:
    L, g = inputs.L, inputs.gamma
    return L**2 + (2.0 + 6.0 * L * g) * (inputs.sigma_H_sq + L**2)


def thm7_alpha1(inputs: BoundInputs) -> float:
    L, g, mu = inputs.L, inputs.gamma, inputs.mu
    return mu + L / inputs.beta + (4.0 / mu + 6.0 * g) * (inputs.sigma_H_sq + L**2)


def thm7_bounds(inputs: BoundInputs, ks=None, parts=("nonconvex", "strongly_convex")) -> dict[str, BoundCurve]:
    """Hessian compensation with stochastic gradients and Hessians.

    ``nonconvex`` needs ``gamma < 1/(3L)``; ``strongly_convex`` needs
    ``mu > 0``, ``0 < beta < 1`` and ``gamma < (1-beta)/(3L)``.
    """
    ks = _grid(inputs, ks)
    g, L, eps2, s2 = inputs.gamma, inputs.L, inputs.eps**2, inputs.sigma_sq
    out = {}
    if "nonconvex" in parts:
        _check_thm4_gamma(inputs)
        den = 1.0 - 3.0 * L * g
        floor = 3.0 * L * g * s2 / den + thm7_alpha2(inputs) * g**2 * eps2 / den
        vals = 2.0 / (g * den) * inputs.f0_gap / (ks + 1) + floor
        out["nonconvex"] = BoundCurve(ks, vals, floor)
    if "strongly_convex" in parts:
        if inputs.mu <= 0:
            raise ConfigError("strongly convex bound needs mu > 0")
        if not (0.0 < inputs.beta < 1.0):
            raise ConfigError(f"beta must lie in (0, 1), got {inputs.beta}")
        _check_thm4_gamma(inputs, inputs.beta)
        den = 1.0 - inputs.beta - 3.0 * L * g
        floor = 1.5 * g * s2 / den + 0.5 * thm7_alpha1(inputs) * g**2 * eps2 / den
        vals = inputs.x0_dist**2 / (2.0 * g * den) / (ks + 1) + floor
        out["strongly_convex"] = BoundCurve(ks, vals, floor)
    return out


class ScalarWorstCase(NamedTuple):
    value: float | np.ndarray
    dist_floor: float
    gap_floor: float


def example3_trajectory(mu: float, gamma: float, eps: float, x0_abs: float, k) -> ScalarWorstCase:
    """Exact ``|x^k|`` of compressed GD on ``(mu/2) x^2`` with the eps-shrink compressor.

    The recursion ``|x^{k+1}| = (1 - mu*gamma)|x^k| + gamma*eps`` has the
    closed form ``(1 - mu*gamma)^k (|x^0| - eps/mu) + eps/mu``.
    """
    if mu <= 0 or eps <= 0:
        raise ConfigError("mu and eps must be positive")
    if not (0.0 < gamma <= 1.0 / mu * (1 + 1e-15)):
        raise StepSizeError(f"gamma must lie in (0, 1/mu], got {gamma}")
    if not x0_abs > eps:
        raise ConfigError(f"|x0| must exceed eps, got {x0_abs} <= {eps}")
    floor = eps / mu
    r = max(1.0 - mu * gamma, 0.0)
    k = np.asarray(k)
    value = r ** k * (x0_abs - floor) + floor
    if value.ndim == 0:
        value = float(value)
    return ScalarWorstCase(value, floor, eps**2 / (2.0 * mu))


# step-size rules ---------------------------------------------------------

def parse_gamma_rule(text: str) -> tuple[str, float | None]:
    """Normalize a rule string to ``(name, parameter)``.

    Accepted: ``1/L``, ``2/(mu+L)``, ``c/L`` for numeric ``c``, ``thm4``,
    ``thm7b:beta``, ``ls-sign``, ``robust-sign`` and a bare number.
    """
    t = text.strip().lower().replace(" ", "")
    if t in ("1/l", "one-over-l"):
        return "c/L", 1.0
    if t in ("2/(mu+l)", "two-over-mu-plus-l"):
        return "2/(mu+L)", None
    if t == "thm4":
        return "thm4", None
    if t.startswith("thm7b"):
        _, _, b = t.partition(":")
        if not b:
            raise ConfigError("thm7b rule needs beta, e.g. thm7b:0.5")
        return "thm7b", float(b)
    if t in ("ls-sign", "robust-sign"):
        return t, None
    if t.endswith("/l"):
        try:
            return "c/L", float(t[:-2])
        except ValueError:
            raise ConfigError(f"bad step-size rule {text!r}") from None
    try:
        return "fixed", float(t)
    except ValueError:
        raise ConfigError(f"bad step-size rule {text!r}") from None


def validate_step(rule: str, constants, require: str | None = None, beta: float = 0.5) -> float:
    """Step size for ``rule`` given problem constants.

    ``thm4`` and ``thm7b:beta`` return half of the largest admissible step.
    ``require`` (``"thm4"`` or ``"thm7b"``) additionally checks the result
    against that theorem's admissible range and raises :class:`StepSizeError`.
    """
    name, par = parse_gamma_rule(rule)
    mu, L = constants.mu, constants.L
    if name == "c/L":
        gamma = par / L
    elif name == "2/(mu+L)":
        if mu <= 0:
            raise ConfigError("2/(mu+L) needs mu > 0")
        gamma = 2.0 / (mu + L)
    elif name == "thm4":
        gamma = 1.0 / (6.0 * L)
    elif name == "thm7b":
        beta = par
        if not 0 < beta < 1:
            raise ConfigError(f"beta must lie in (0, 1), got {beta}")
        gamma = (1.0 - beta) / (6.0 * L)
        require = require or "thm7b"
    elif name == "ls-sign":
        gamma = 0.1 / L
    elif name == "robust-sign":
        gamma = 1.0 / (60.0 * math.sqrt(3.0) * L)
    else:
        gamma = par
    if not gamma > 0:
        raise StepSizeError(f"step size must be positive, got {gamma}")
    if require == "thm4" and not gamma < 1.0 / (3.0 * L):
        raise StepSizeError(f"step size {gamma:.6g} violates gamma < 1/(3L) = {1 / (3 * L):.6g}")
    if require == "thm7b" and not gamma < (1.0 - beta) / (3.0 * L):
        raise StepSizeError(f"step size {gamma:.6g} violates gamma < (1-beta)/(3L) = {(1 - beta) / (3 * L):.6g}")
    return gamma
