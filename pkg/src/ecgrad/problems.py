"""Objectives with exact derivatives, optima and curvature constants.

Two families are provided: a convex quadratic ``0.5 x'Hx + b'x`` (optionally
replicated over several identical workers) and empirical-risk objectives whose
data is split over workers,

    f_i(x) = (1/m_i) sum_j loss(<z_ij, x>, y_ij) + (lam/2) ||x||^2,
    f(x)   = (1/n) sum_i f_i(x).

Both expose the same duck-typed interface, including mini-batch evaluation on
explicit index sets so that the optimization steps can share one batch between
the gradient and the Hessian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import expit

from .errors import ConfigError, InputDomainError

LOSSES = ("least-squares", "logistic", "robust")


@dataclass(frozen=True)
class Constants:
    mu: float
    L: float
    kappa: float
    # conservative curvature bound, only differs from L for the robust loss
    L_curv: float | None = None


@dataclass(frozen=True)
class OracleConfig:
    """Mini-batch sampling rule for stochastic gradients and Hessians.

    ``batch_size=None`` means full local batch.  ``coupling`` is ``"same"``
    (Hessian on the gradient's batch) or ``"independent"`` (fresh draw).
    """

    batch_size: int | None = None
    coupling: str = "same"
    seed: int = 0
    replace: bool = True

    def __post_init__(self):
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch size must be positive, got {self.batch_size}")
        if self.coupling not in ("same", "independent"):
            raise ConfigError(f"unknown Hessian coupling {self.coupling!r}")

    @property
    def deterministic(self):
        return self.batch_size is None


class Batch(NamedTuple):
    grad_idx: np.ndarray | None
    hess_idx: np.ndarray | None


def worker_rng(seed: int, worker: int, iteration: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, worker, iteration, stream)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, worker, iteration, stream])


def _check_x(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ConfigError(f"expected a vector of dimension {dim}, got shape {x.shape}")
    return x


class _Base:
    n_workers: int
    dim: int

    def shard_size(self, worker: int) -> int | None:
        return None

    def draw(self, worker: int, oracle: OracleConfig | None, iteration: int) -> Batch:
        """Index sets for one worker at one iteration (``None`` = full shard)."""
        if oracle is None or oracle.deterministic:
            return Batch(None, None)
        m = self.shard_size(worker)
        if m is None:
            return Batch(None, None)
        if m == 0:
            raise InputDomainError(f"worker {worker} has an empty shard")
        b = oracle.batch_size
        if b > m:
            raise ConfigError(f"batch size {b} exceeds shard size {m} of worker {worker}")
        if not oracle.replace and b == m:
            return Batch(None, None)
        rng = worker_rng(oracle.seed, worker, iteration)
        gidx = np.sort(rng.choice(m, size=b, replace=oracle.replace))
        if oracle.coupling == "same":
            return Batch(gidx, gidx)
        rng_h = worker_rng(oracle.seed, worker, iteration, stream=1)
        return Batch(gidx, np.sort(rng_h.choice(m, size=b, replace=oracle.replace)))

    def stochastic_grad(self, worker, x, oracle, iteration):
        return self.grad_batch(worker, x, self.draw(worker, oracle, iteration).grad_idx)

    def stochastic_hessian(self, worker, x, oracle, iteration):
        return self.hessian_batch(worker, x, self.draw(worker, oracle, iteration).hess_idx)

    def objective_gap(self, x):
        fs = self.f_star
        return None if fs is None else self.value(x) - fs


class QuadraticProblem(_Base):
    """``f(x) = 0.5 x'Hx + b'x``; every worker holds the same function."""

    def __init__(self, H, b, n_workers: int = 1):
        H = np.array(H, dtype=float)
        b = np.array(b, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or b.shape != (H.shape[0],):
            raise ConfigError("H must be square and b must match its size")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(b))):
            raise InputDomainError("quadratic data must be finite")
        scale = max(np.max(np.abs(H)), 1e-300)
        if np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise ConfigError("H is not symmetric")
        self.H = 0.5 * (H + H.T)
        self.b = b
        self.dim = H.shape[0]
        self.n_workers = int(n_workers)
        eig = np.linalg.eigvalsh(self.H)
        if eig[0] <= 0:
            raise ConfigError(f"H is not positive definite (min eigenvalue {eig[0]:.3g})")
        self.mu = float(eig[0])
        self.L = float(eig[-1])
        self.kappa = self.L / self.mu
        self._chol = scipy.linalg.cho_factor(self.H)
        # grad f = Hx + b vanishes at -H^{-1} b
        self.x_star = scipy.linalg.cho_solve(self._chol, -self.b)
        self.f_star = self.value(self.x_star)

    def constants(self) -> Constants:
        return Constants(self.mu, self.L, self.kappa)

    def value(self, x, worker=None):
        x = _check_x(x, self.dim)
        return float(0.5 * x @ (self.H @ x) + self.b @ x)

    def grad(self, x, worker=None):
        return self.H @ _check_x(x, self.dim) + self.b

    def hessian(self, x=None, worker=None):
        return self.H.copy()

    def grad_batch(self, worker, x, idx):
        return self.H @ x + self.b

    def hvp_batch(self, worker, x, v, idx):
        return self.H @ v

    def hessian_batch(self, worker, x, idx):
        return self.H

    def hessian_diag_batch(self, worker, x, idx):
        return np.diag(self.H).copy()


def _loss_derivs(loss, t, y, order):
    """Loss value / first / second derivative w.r.t. the linear predictor ``t``."""
    if loss == "least-squares":
        r = t - y
        if order == 0:
            return 0.5 * r * r
        return r if order == 1 else np.ones_like(r)
    if loss == "robust":
        r = t - y
        s = 1.0 + r * r
        if order == 0:
            return r * r / s
        if order == 1:
            return 2.0 * r / (s * s)
        return (2.0 - 6.0 * r * r) / (s * s * s)
    # logistic, labels in {-1, +1}
    yt = y * t
    if order == 0:
        return np.logaddexp(0.0, -yt)
    if order == 1:
        return -y * expit(-yt)
    p = expit(yt)
    return p * (1.0 - p)


class ErmProblem(_Base):
    """Empirical risk split over workers; each shard is ``(Z_i, y_i)``."""

    def __init__(self, shards: Sequence[tuple[np.ndarray, np.ndarray]], loss: str, lam: float = 0.0):
        if loss not in LOSSES:
            raise ConfigError(f"unknown loss {loss!r}; expected one of {LOSSES}")
        if lam < 0:
            raise ConfigError("regularizer must be non-negative")
        if not shards:
            raise ConfigError("need at least one shard")
        self.loss = loss
        self.lam = float(lam)
        self.Z = []
        self.y = []
        dim = None
        for i, (Z, y) in enumerate(shards):
            Z = np.atleast_2d(np.asarray(Z, dtype=float))
            y = np.asarray(y, dtype=float).reshape(-1)
            if Z.shape[0] != y.size:
                raise ConfigError(f"shard {i}: {Z.shape[0]} feature rows but {y.size} labels")
            if Z.shape[0] == 0:
                raise InputDomainError(f"shard {i} is empty")
            if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(y))):
                raise InputDomainError(f"shard {i} has non-finite data")
            if loss == "logistic" and not np.all(np.abs(y) == 1):
                raise ConfigError("logistic labels must be -1 or +1")
            if dim is None:
                dim = Z.shape[1]
            elif Z.shape[1] != dim:
                raise ConfigError("all shards must share one feature dimension")
            self.Z.append(Z)
            self.y.append(y)
        self.dim = dim
        self.n_workers = len(self.Z)
        self._gram = [None] * self.n_workers
        self._x_star = None
        self._f_star = None
        self._solved = False

    def shard_size(self, worker):
        return self.Z[worker].shape[0]

    def _rows(self, worker, idx):
        Z, y = self.Z[worker], self.y[worker]
        if idx is None:
            return Z, y
        return Z[idx], y[idx]

    def gram(self, worker):
        """``(1/m) sum_j z z'`` for one shard, cached."""
        if self._gram[worker] is None:
            Z = self.Z[worker]
            self._gram[worker] = Z.T @ Z / Z.shape[0]
        return self._gram[worker]

    # batch-level primitives

    def value_batch(self, worker, x, idx=None):
        Z, y = self._rows(worker, idx)
        t = Z @ x
        return float(np.mean(_loss_derivs(self.loss, t, y, 0)) + 0.5 * self.lam * (x @ x))

    def grad_batch(self, worker, x, idx=None):
        Z, y = self._rows(worker, idx)
        w = _loss_derivs(self.loss, Z @ x, y, 1)
        return Z.T @ w / Z.shape[0] + self.lam * x

    def _curv(self, worker, x, idx):
        Z, y = self._rows(worker, idx)
        return Z, _loss_derivs(self.loss, Z @ x, y, 2)

    def hessian_batch(self, worker, x, idx=None):
        if self.loss == "least-squares" and idx is None:
            H = self.gram(worker).copy()
        else:
            Z, c = self._curv(worker, x, idx)
            H = (Z.T * c) @ Z / Z.shape[0]
        H[np.diag_indices_from(H)] += self.lam
        return H

    def hvp_batch(self, worker, x, v, idx=None):
        if self.loss == "least-squares" and idx is None:
            return self.gram(worker) @ v + self.lam * v
        Z, c = self._curv(worker, x, idx)
        return Z.T @ (c * (Z @ v)) / Z.shape[0] + self.lam * v

    def hessian_diag_batch(self, worker, x, idx=None):
        Z, c = self._curv(worker, x, idx)
        return (c @ (Z * Z)) / Z.shape[0] + self.lam

    # full objective

    def value(self, x, worker=None):
        x = _check_x(x, self.dim)
        if worker is not None:
            return self.value_batch(worker, x)
        return sum(self.value_batch(i, x) for i in range(self.n_workers)) / self.n_workers

    def grad(self, x, worker=None):
        x = _check_x(x, self.dim)
        if worker is not None:
            return self.grad_batch(worker, x)
        g = np.zeros(self.dim)
        for i in range(self.n_workers):
            g += self.grad_batch(i, x)
        return g / self.n_workers

    def hessian(self, x, worker=None):
        x = _check_x(x, self.dim)
        if worker is not None:
            return self.hessian_batch(worker, x)
        H = np.zeros((self.dim, self.dim))
        for i in range(self.n_workers):
            H += self.hessian_batch(i, x)
        return H / self.n_workers

    def constants(self) -> Constants:
        mus, Ls = [], []
        for i in range(self.n_workers):
            eig = np.linalg.eigvalsh(self.gram(i))
            lo, hi = max(float(eig[0]), 0.0), float(eig[-1])
            if self.loss == "least-squares":
                mus.append(lo + self.lam)
                Ls.append(hi + self.lam)
            elif self.loss == "logistic":
                mus.append(self.lam)
                Ls.append(hi / 4 + self.lam)
            else:
                mus.append(self.lam)
                Ls.append(2 * hi + self.lam)
        mu = min(mus)
        if self.loss == "robust":
            L_bound = max(
                float(np.mean(np.sum(Z * Z, axis=1))) / (6 * math.sqrt(3)) + self.lam for Z in self.Z
            )
            L_curv = max(Ls)
            return Constants(mu, L_bound, L_bound / mu if mu > 0 else math.inf, L_curv)
        L = max(Ls)
        return Constants(mu, L, L / mu if mu > 0 else math.inf)

    def _solve(self):
        if self._solved:
            return
        self._solved = True
        if self.loss == "least-squares":
            A = sum(self.gram(i) for i in range(self.n_workers)) / self.n_workers
            A = A + self.lam * np.eye(self.dim)
            rhs = sum(self.Z[i].T @ self.y[i] / self.Z[i].shape[0] for i in range(self.n_workers))
            rhs = rhs / self.n_workers
            x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            self._x_star = x
            self._f_star = self.value(x)
        elif self.loss == "logistic":
            if self.lam <= 0:
                return
            res = scipy.optimize.minimize(
                self.value, np.zeros(self.dim), jac=self.grad, hess=self.hessian,
                method="trust-exact", options={"gtol": 1e-12},
            )
            # strongly convex: accept on the gradient test, the solver flag is too strict near 1e-12
            if np.linalg.norm(self.grad(res.x)) <= 1e-9 * max(1.0, np.linalg.norm(self.grad(np.zeros(self.dim)))):
                self._x_star = res.x
                self._f_star = self.value(res.x)
        # robust loss is non-convex: no certified optimum

    @property
    def x_star(self):
        self._solve()
        return self._x_star

    @property
    def f_star(self):
        self._solve()
        return self._f_star


def estimate_variances(problem, oracle: OracleConfig | None, probe_points, draws: int = 50):
    """Empirical ``(sigma^2, sigma_H^2)`` of the mini-batch oracles.

    Maximum over probe points and workers of the mean squared deviation of the
    stochastic gradient (Euclidean) and stochastic Hessian (Frobenius, an upper
    bound on the spectral deviation) from their exact local counterparts.
    """
    if draws < 2:
        raise ConfigError("need at least two draws")
    if oracle is None or oracle.deterministic:
        return 0.0, 0.0
    sig, sig_h = 0.0, 0.0
    for p, x in enumerate(probe_points):
        x = _check_x(x, problem.dim)
        for i in range(problem.n_workers):
            g_full = problem.grad_batch(i, x, None)
            H_full = problem.hessian_batch(i, x, None)
            acc_g = acc_h = 0.0
            for t in range(draws):
                batch = problem.draw(i, oracle, 1_000_000 + p * draws + t)
                acc_g += float(np.sum((problem.grad_batch(i, x, batch.grad_idx) - g_full) ** 2))
                acc_h += float(np.sum((problem.hessian_batch(i, x, batch.hess_idx) - H_full) ** 2))
            sig = max(sig, acc_g / draws)
            sig_h = max(sig_h, acc_h / draws)
    return sig, sig_h


def default_probes(problem, x0, seed: int = 0, count: int = 4):
    """``x0`` plus ``count`` random points between ``x0`` and the optimum.

    Without a known optimum the random points are Gaussian perturbations of
    ``x0`` with unit expected norm.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng([seed, 31337])
    xs = getattr(problem, "x_star", None)
    probes = [x0]
    for _ in range(count):
        if xs is not None:
            t = rng.uniform()
            probes.append(x0 + t * (xs - x0) + rng.normal(size=x0.size) * 0.1 / math.sqrt(x0.size))
        else:
            probes.append(x0 + rng.normal(size=x0.size) / math.sqrt(x0.size))
    return probes
