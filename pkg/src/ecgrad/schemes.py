"""Single optimization steps: direct compression and error compensation.

Every worker ``i`` holds an error memory ``e_i``.  One error-compensated round
is

    p_i = g_i + A_i e_i,   q_i = Q(p_i),   e_i <- p_i - q_i,
    x   <- x - gamma * mean_i(q_i),

where the weighting ``A_i`` is the identity, ``alpha * I``, ``I - gamma H_i``
(exact or mini-batch Hessian), its diagonal, or ``I - gamma B_i`` with ``B_i``
a per-worker BFGS model.  Direct compression sends ``Q(g_i)`` with no memory.

Per-worker work may be spread over a thread pool; the reduction is always
serial in ascending worker order so results do not depend on the pool.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import compressors as C
from .errors import ConfigError
from .problems import OracleConfig, QuadraticProblem

WEIGHTINGS = ("identity", "scaled", "hessian", "diag", "bfgs")


@dataclass(frozen=True)
class SchemeConfig:
    kind: str = "direct"
    weighting: str | None = None
    alpha: float = 1.0
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("direct", "ec"):
            raise ConfigError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "ec" and self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}")
        if self.kind == "direct" and self.weighting is not None:
            raise ConfigError("direct compression takes no weighting")
        if not (0.0 < self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigError(f"step size must be positive, got {self.gamma}")

    @classmethod
    def parse(cls, text: str, gamma: float | None = None) -> "SchemeConfig":
        """``direct``, ``ec:identity``, ``ec:scaled:0.9``, ``ec:hessian``, ``ec:diag``, ``ec:bfgs``."""
        parts = text.strip().lower().split(":")
        if parts == ["direct"]:
            return cls("direct", gamma=gamma)
        if len(parts) == 2 and parts[0] == "ec" and parts[1] in WEIGHTINGS:
            return cls("ec", parts[1], gamma=gamma)
        if len(parts) == 3 and parts[:2] == ["ec", "scaled"]:
            try:
                alpha = float(parts[2])
            except ValueError:
                raise ConfigError(f"bad alpha in {text!r}") from None
            return cls("ec", "scaled", alpha=alpha, gamma=gamma)
        raise ConfigError(f"cannot parse scheme {text!r}")

    def with_gamma(self, gamma: float) -> "SchemeConfig":
        return replace(self, gamma=gamma)

    def __str__(self):
        if self.kind == "direct":
            return "direct"
        if self.weighting == "scaled":
            return f"ec:scaled:{self.alpha!r}"
        return f"ec:{self.weighting}"


@dataclass
class BfgsState:
    B: np.ndarray
    prev_x: np.ndarray | None = None
    prev_grad: np.ndarray | None = None
    updates: int = 0
    skipped: int = 0


@dataclass
class WorkerState:
    index: int
    error: np.ndarray
    bfgs: BfgsState | None = None

    @classmethod
    def fresh(cls, index: int, dim: int) -> "WorkerState":
        return cls(index, np.zeros(dim))


def init_workers(n: int, dim: int) -> list[WorkerState]:
    return [WorkerState.fresh(i, dim) for i in range(n)]


@dataclass
class StepReport:
    x_next: np.ndarray
    payloads: list
    error_norms: list
    # mean true gradient minus mean transmitted vector
    grad_error: np.ndarray
    bits: int
    input_inf: float = 0.0
    grads: list = field(default_factory=list)


def bfgs_update(state: BfgsState, x_new, grad_new) -> BfgsState:
    """Secant update of the Hessian model, skipped on non-positive curvature."""
    x_new = np.asarray(x_new, dtype=float)
    grad_new = np.asarray(grad_new, dtype=float)
    if state.prev_x is not None:
        s = x_new - state.prev_x
        y = grad_new - state.prev_grad
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            Bs = state.B @ s
            B = state.B - np.outer(Bs, Bs) / float(s @ Bs) + np.outer(y, y) / sy
            state.B = 0.5 * (B + B.T)
            state.updates += 1
        else:
            state.skipped += 1
    state.prev_x = x_new.copy()
    state.prev_grad = grad_new.copy()
    return state


def _threads():
    try:
        return max(1, int(os.environ.get("ECGRAD_THREADS", "1")))
    except ValueError:
        return 1


def _map_workers(fn, workers, threads):
    if threads is None:
        threads = _threads()
    if threads <= 1 or len(workers) <= 1:
        return [fn(w) for w in workers]
    with ThreadPoolExecutor(max_workers=min(threads, len(workers))) as pool:
        return list(pool.map(fn, workers))


def _mean(vs):
    # serial sum in worker order keeps results independent of thread count
    if len(vs) == 1:
        return vs[0]
    total = vs[0].copy()
    for v in vs[1:]:
        total += v
    return total / len(vs)


def _norm(v):
    return math.sqrt(float(v @ v))


def _report(x, gamma, gs, qs, error_norms, bits, sent):
    q_mean = _mean(qs)
    return StepReport(
        x_next=x - gamma * q_mean,
        payloads=qs,
        error_norms=error_norms,
        grad_error=_mean(gs) - q_mean,
        bits=bits,
        input_inf=max(float(np.abs(v).max()) for v in sent),
        grads=gs,
    )


def direct_step(x, workers, problem, compressor: C.CompressorSpec, gamma: float,
                oracle: OracleConfig | None = None, iteration: int = 0, threads=None) -> StepReport:
    """x_next = x - gamma * mean_i Q(g_i(x)); error memories are left alone."""
    if len(workers) != problem.n_workers:
        raise ConfigError(f"{len(workers)} worker states for {problem.n_workers} workers")

    def work(w):
        batch = problem.draw(w.index, oracle, iteration)
        g = problem.grad_batch(w.index, x, batch.grad_idx)
        q = C.apply(compressor, g)
        return g, q

    out = _map_workers(work, workers, threads)
    gs = [g for g, _ in out]
    qs = [q for _, q in out]
    return _report(x, gamma, gs, qs, [_norm(q - g) for g, q in out],
                   sum(C.payload_bits(compressor, g) for g in gs), gs)


def _weighted_memory(w: WorkerState, problem, scheme, x, batch, L):
    e = w.error
    kind = scheme.weighting
    if kind == "identity":
        return e
    if kind == "scaled":
        return scheme.alpha * e
    if kind == "hessian":
        return e - scheme.gamma * problem.hvp_batch(w.index, x, e, batch.hess_idx)
    if kind == "diag":
        return e - scheme.gamma * problem.hessian_diag_batch(w.index, x, batch.hess_idx) * e
    if w.bfgs is None:
        w.bfgs = BfgsState(B=L * np.eye(problem.dim))
    return e - scheme.gamma * (w.bfgs.B @ e)


def ec_step(x, workers, problem, compressor: C.CompressorSpec, scheme: SchemeConfig,
            oracle: OracleConfig | None = None, iteration: int = 0, threads=None,
            L: float | None = None) -> StepReport:
    """One error-compensated round; mutates each worker's memory (and BFGS model)."""
    if scheme.kind != "ec":
        raise ConfigError("ec_step needs an error-compensated scheme")
    if scheme.gamma is None:
        raise ConfigError("scheme has no step size")
    if len(workers) != problem.n_workers:
        raise ConfigError(f"{len(workers)} worker states for {problem.n_workers} workers")
    if scheme.weighting == "bfgs" and L is None:
        L = problem.constants().L

    def work(w):
        batch = problem.draw(w.index, oracle, iteration)
        g = problem.grad_batch(w.index, x, batch.grad_idx)
        p = g + _weighted_memory(w, problem, scheme, x, batch, L)
        q = C.apply(compressor, p)
        w.error = p - q
        if w.bfgs is not None:
            bfgs_update(w.bfgs, x, g)
        return g, p, q

    out = _map_workers(work, workers, threads)
    gs = [g for g, _, _ in out]
    ps = [p for _, p, _ in out]
    qs = [q for _, _, q in out]
    return _report(x, scheme.gamma, gs, qs, [_norm(w.error) for w in workers],
                   sum(C.payload_bits(compressor, p) for p in ps), ps)


def step(x, workers, problem, compressor, scheme: SchemeConfig, oracle=None, iteration=0,
         threads=None, L=None) -> StepReport:
    if scheme.kind == "direct":
        return direct_step(x, workers, problem, compressor, scheme.gamma, oracle, iteration, threads)
    return ec_step(x, workers, problem, compressor, scheme, oracle, iteration, threads, L)


def accumulation_diagnostic(xs, errors, problem: QuadraticProblem, gamma: float,
                            weighting: str = "hessian", alpha: float = 1.0) -> np.ndarray:
    """Per-iteration residual vectors of a single-worker deterministic EC run.

    ``xs[k]`` and ``errors[k]`` are the iterate and error memory after ``k``
    steps (``errors[0] = 0``).  For Hessian weighting this returns

        (x^k - x*) - A^k (x^0 - x*) - gamma e^k,   A = I - gamma H,

    which vanishes identically.  For ``identity``/``scaled`` weighting it
    rebuilds, from the error memories alone, the term that the memory fails to
    cancel: ``gamma * sum_{l<k} A^{k-1-l} B e^l`` with
    ``B = (1 - alpha) I - gamma H``.
    """
    if not isinstance(problem, QuadraticProblem):
        raise ConfigError("accumulation diagnostic is defined for quadratic problems only")
    xs = np.asarray(xs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    H = problem.H
    A = np.eye(problem.dim) - gamma * H
    out = np.zeros_like(xs)
    if weighting == "hessian":
        z0 = xs[0] - problem.x_star
        P = z0.copy()
        for k in range(xs.shape[0]):
            out[k] = (xs[k] - problem.x_star) - P - gamma * errors[k]
            P = A @ P
        return out
    if weighting == "identity":
        alpha = 1.0
    elif weighting != "scaled":
        raise ConfigError(f"no accumulation formula for weighting {weighting!r}")
    B = (1.0 - alpha) * np.eye(problem.dim) - gamma * H
    acc = np.zeros(problem.dim)
    for k in range(xs.shape[0]):
        out[k] = acc
        acc = A @ acc + gamma * (B @ errors[k])
    return out
