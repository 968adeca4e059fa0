"""Multi-iteration runs of the synchronous master/worker loop.

A run records one row per ``metrics_every`` iterations (plus the last one):

    k, dist, gap, gradsq, mingradsq, avg_gap, errnorm, accres, bits

``dist`` and ``gap`` need a known optimum and are left empty otherwise.
``avg_gap`` is the gap of the running average iterate.  ``accres`` is the
norm of the accumulation residual and is only defined for single-worker,
deterministic, error-compensated runs on a quadratic.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from . import schemes as S
from .compressors import CompressorSpec
from .errors import ConfigError, DivergedError
from .problems import OracleConfig, QuadraticProblem

COLUMNS = ("k", "dist", "gap", "gradsq", "mingradsq", "avg_gap", "errnorm", "accres", "bits")
DIVERGENCE_NORM = 1e12


@dataclass
class RunConfig:
    problem: object
    compressor: CompressorSpec
    scheme: S.SchemeConfig
    iterations: int
    oracle: OracleConfig | None = None
    x0: np.ndarray | None = None
    seed: int = 0
    metrics_every: int = 1
    n_workers: int | None = None
    keep_history: bool = False
    threads: int | None = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.metrics_every < 1:
            raise ConfigError("metrics_every must be positive")
        if self.scheme.gamma is None:
            raise ConfigError("scheme has no step size")
        dim = self.problem.dim
        if self.x0 is None:
            self.x0 = np.zeros(dim)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.x0.shape != (dim,):
            raise ConfigError(f"x0 has shape {self.x0.shape}, problem dimension is {dim}")
        if self.n_workers is None:
            self.n_workers = self.problem.n_workers
        if self.n_workers != self.problem.n_workers:
            raise ConfigError(f"{self.n_workers} workers requested but the problem has {self.problem.n_workers} shards")


@dataclass
class RunTrace:
    columns: dict
    x_final: np.ndarray
    x_avg: np.ndarray
    max_input_inf: float
    xs: np.ndarray | None = None
    errors: np.ndarray | None = None
    config: RunConfig | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.columns["k"])

    def column(self, name) -> np.ndarray:
        """Column as floats, with missing entries as NaN."""
        return np.array([np.nan if v is None else v for v in self.columns[name]], dtype=float)

    def rows(self):
        for i in range(len(self)):
            yield {c: self.columns[c][i] for c in COLUMNS}

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows():
            w.writerow([format_value(row[c]) for c in COLUMNS])
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", encoding="utf-8") as fh:
                    fh.write(text)
        return text


def format_value(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def read_trace_csv(path) -> dict:
    """Parse a trace CSV back into float columns (empty fields become NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = {c: [] for c in reader.fieldnames}
        for row in reader:
            for c, v in row.items():
                out[c].append(float(v) if v != "" else math.nan)
    return {c: np.array(v) for c, v in out.items()}


class _Accumulation:
    """Online accumulation residual for single-worker deterministic quadratic runs."""

    def __init__(self, problem, scheme, x0):
        self.gamma = scheme.gamma
        self.A = np.eye(problem.dim) - self.gamma * problem.H
        self.x_star = problem.x_star
        self.hessian = scheme.weighting == "hessian"
        if self.hessian:
            self.P = x0 - self.x_star
        else:
            alpha = scheme.alpha if scheme.weighting == "scaled" else 1.0
            self.B = (1.0 - alpha) * np.eye(problem.dim) - self.gamma * problem.H
            self.acc = np.zeros(problem.dim)

    def value(self, x, e):
        if self.hessian:
            return float(np.linalg.norm((x - self.x_star) - self.P - self.gamma * e))
        return float(np.linalg.norm(self.acc))

    def advance(self, e):
        if self.hessian:
            self.P = self.A @ self.P
        else:
            self.acc = self.A @ self.acc + self.gamma * (self.B @ e)


def _accumulation_tracker(cfg):
    p, sch = cfg.problem, cfg.scheme
    if not isinstance(p, QuadraticProblem) or p.n_workers != 1:
        return None
    if sch.kind != "ec" or sch.weighting not in ("hessian", "identity", "scaled"):
        return None
    if cfg.oracle is not None and not cfg.oracle.deterministic:
        return None
    return _Accumulation(p, sch, cfg.x0)


def run(cfg: RunConfig) -> RunTrace:
    """Execute ``cfg.iterations`` synchronous rounds and collect metrics."""
    problem = cfg.problem
    oracle = cfg.oracle
    if oracle is not None:
        oracle = replace(oracle, seed=cfg.seed)
    deterministic = oracle is None or oracle.deterministic
    x_star = getattr(problem, "x_star", None)
    f_star = getattr(problem, "f_star", None)
    L = problem.constants().L if cfg.scheme.weighting == "bfgs" else None
    workers = S.init_workers(problem.n_workers, problem.dim)
    tracker = _accumulation_tracker(cfg)

    cols = {c: [] for c in COLUMNS}
    xs_hist, err_hist = [], []
    x = cfg.x0.copy()
    x_sum = np.zeros_like(x)
    min_gsq = math.inf
    bits = 0
    max_inf = 0.0
    last = cfg.iterations

    for k in range(last + 1):
        x_sum += x
        errs = [w.error for w in workers]
        rep = None
        if k < last:
            rep = S.step(x, workers, problem, cfg.compressor, cfg.scheme, oracle, k, cfg.threads, L)
        grad = sum(rep.grads) / len(rep.grads) if rep is not None and deterministic else problem.grad(x)
        gsq = float(grad @ grad)
        min_gsq = min(min_gsq, gsq)
        if k % cfg.metrics_every == 0 or k == last:
            cols["k"].append(k)
            cols["dist"].append(None if x_star is None else float(np.linalg.norm(x - x_star)))
            cols["gap"].append(None if f_star is None else problem.value(x) - f_star)
            cols["gradsq"].append(gsq)
            cols["mingradsq"].append(min_gsq)
            cols["avg_gap"].append(None if f_star is None else problem.value(x_sum / (k + 1)) - f_star)
            cols["errnorm"].append(float(np.mean([np.linalg.norm(e) for e in errs])))
            cols["accres"].append(None if tracker is None else tracker.value(x, errs[0]))
            cols["bits"].append(bits)
        if cfg.keep_history:
            xs_hist.append(x.copy())
            err_hist.append(errs[0].copy())
        if rep is None:
            break
        if tracker is not None:
            tracker.advance(errs[0])
        bits += rep.bits
        max_inf = max(max_inf, rep.input_inf)
        x = rep.x_next
        if not np.all(np.isfinite(x)):
            raise DivergedError(k + 1)
        if np.linalg.norm(x) > DIVERGENCE_NORM:
            raise DivergedError(k + 1, f"iterate norm exceeds {DIVERGENCE_NORM:g}")

    return RunTrace(
        columns=cols,
        x_final=x,
        x_avg=x_sum / (last + 1),
        max_input_inf=max_inf,
        xs=np.array(xs_hist) if cfg.keep_history else None,
        errors=np.array(err_hist) if cfg.keep_history else None,
        config=cfg,
    )


def empirical_floor(trace: RunTrace, tail_fraction: float = 0.1, metric: str = "dist") -> float:
    """Mean of ``metric`` over the last ``tail_fraction`` of recorded rows."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ConfigError(f"tail_fraction must lie in (0, 1], got {tail_fraction}")
    vals = trace.column(metric)
    n = max(1, math.ceil(tail_fraction * vals.size))
    tail = vals[-n:]
    if np.any(np.isnan(tail)):
        raise ConfigError(f"metric {metric!r} is not available for this run")
    return float(np.mean(tail))


@dataclass
class Comparison:
    labels: list
    traces: list
    floors: dict
    ratios: dict

    def table(self):
        """One row per run: label and tail floor of each available metric."""
        return [{"label": lab, **self.floors[lab]} for lab in self.labels]


def compare(configs, labels=None, tail_fraction: float = 0.1,
            metrics=("dist", "gap", "gradsq", "mingradsq")) -> Comparison:
    """Run every config with its own seed and report tail floors and pairwise ratios.

    ``ratios[(a, b)][metric]`` is ``floor_a / floor_b``.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("nothing to compare")
    dim = configs[0].problem.dim
    for c in configs:
        if c.problem.dim != dim or c.x0.shape != (dim,):
            raise ConfigError("compared runs must share one problem dimension")
    labels = list(labels) if labels is not None else [str(c.scheme) for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError("compared runs need distinct labels")
    traces = [run(c) for c in configs]
    floors = {}
    for lab, tr in zip(labels, traces):
        floors[lab] = {}
        for m in metrics:
            if not np.all(np.isnan(tr.column(m))):
                floors[lab][m] = empirical_floor(tr, tail_fraction, m)
    ratios = {}
    for a, b in combinations(labels, 2):
        common = set(floors[a]) & set(floors[b])
        ratios[(a, b)] = {m: _ratio(floors[a][m], floors[b][m]) for m in sorted(common)}
    return Comparison(labels, traces, floors, ratios)


def _ratio(a, b):
    if b == 0:
        return math.inf if a > 0 else math.nan
    return a / b
