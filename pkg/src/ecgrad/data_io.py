"""LIBSVM text input, synthetic generators, normalization and sharding."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import ortho_group

from .errors import ConfigError, LibsvmParseError
from .problems import ErmProblem

SHARD_POLICIES = ("contiguous", "roundrobin")


@dataclass(frozen=True)
class LibsvmRecord:
    label: float
    features: tuple[tuple[int, float], ...] = ()

    @property
    def max_index(self) -> int:
        return self.features[-1][0] if self.features else 0

    def norm(self) -> float:
        return math.sqrt(sum(v * v for _, v in self.features))


def _parse_line(line: str, lineno: int, dim_hint: int | None) -> LibsvmRecord | None:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    tokens = text.split()
    try:
        label = float(tokens[0])
    except ValueError:
        raise LibsvmParseError(lineno, f"malformed label {tokens[0]!r}") from None
    if not math.isfinite(label):
        raise LibsvmParseError(lineno, f"non-finite label {tokens[0]!r}")
    feats = []
    prev = 0
    for tok in tokens[1:]:
        idx_s, sep, val_s = tok.partition(":")
        if not sep or not idx_s or not val_s:
            raise LibsvmParseError(lineno, f"malformed token {tok!r}")
        if not idx_s.isdigit():
            raise LibsvmParseError(lineno, f"malformed index in {tok!r}")
        idx = int(idx_s)
        if idx < 1:
            raise LibsvmParseError(lineno, f"index must be positive in {tok!r}")
        try:
            val = float(val_s)
        except ValueError:
            raise LibsvmParseError(lineno, f"malformed value in {tok!r}") from None
        if not math.isfinite(val):
            raise LibsvmParseError(lineno, f"non-finite value in {tok!r}")
        if idx <= prev:
            raise LibsvmParseError(lineno, f"non-increasing index {idx} after {prev}")
        if dim_hint is not None and idx > dim_hint:
            raise LibsvmParseError(lineno, f"index {idx} exceeds dimension {dim_hint}")
        feats.append((idx, val))
        prev = idx
    return LibsvmRecord(label, tuple(feats))


def parse_libsvm(source, dim_hint: int | None = None) -> list[LibsvmRecord]:
    """Parse ``label idx:val ...`` lines from a string or text stream.

    ``#`` starts a comment and blank lines are skipped.  Indices are 1-based
    and must increase strictly within a line.
    """
    if dim_hint is not None and dim_hint < 1:
        raise ConfigError("dimension hint must be positive")
    if isinstance(source, str):
        source = io.StringIO(source)
    records = []
    for lineno, line in enumerate(source, start=1):
        rec = _parse_line(line, lineno, dim_hint)
        if rec is not None:
            records.append(rec)
    return records


def load_libsvm(path, dim_hint: int | None = None) -> list[LibsvmRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, dim_hint)


def infer_dim(records: Sequence[LibsvmRecord], dim_hint: int | None = None) -> int:
    seen = max((r.max_index for r in records), default=0)
    if dim_hint is not None:
        if dim_hint < seen:
            raise ConfigError(f"dimension hint {dim_hint} is below the largest index {seen}")
        return dim_hint
    return seen


def format_libsvm(records: Iterable[LibsvmRecord]) -> str:
    """Serialize with 17 significant digits so parsing restores values exactly."""
    lines = []
    for r in records:
        parts = [format(r.label, ".17g")]
        parts += [f"{i}:{v:.17g}" for i, v in r.features]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def write_libsvm(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_libsvm(records))


def normalize_samples(records: Sequence[LibsvmRecord]) -> list[LibsvmRecord]:
    """Scale every feature vector to unit Euclidean norm; zero vectors stay zero."""
    out = []
    for r in records:
        n = r.norm()
        if n == 0.0:
            out.append(r)
        else:
            out.append(LibsvmRecord(r.label, tuple((i, v / n) for i, v in r.features)))
    return out


def normalize_rows(Z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    return Z / np.where(norms == 0.0, 1.0, norms)


def shard(items: Sequence, n_workers: int, policy: str = "contiguous") -> list[list]:
    """Deterministic partition into ``n_workers`` parts whose sizes differ by at most one."""
    if n_workers < 1:
        raise ConfigError("need at least one worker")
    if policy not in SHARD_POLICIES:
        raise ConfigError(f"unknown shard policy {policy!r}; expected one of {SHARD_POLICIES}")
    items = list(items)
    if policy == "roundrobin":
        return [items[i::n_workers] for i in range(n_workers)]
    q, r = divmod(len(items), n_workers)
    out, start = [], 0
    for i in range(n_workers):
        size = q + (1 if i < r else 0)
        out.append(items[start:start + size])
        start += size
    return out


def to_dense(records: Sequence[LibsvmRecord], dim: int | None = None):
    """Feature matrix (rows padded to ``dim``) and label vector."""
    dim = infer_dim(records, dim)
    Z = np.zeros((len(records), dim))
    y = np.empty(len(records))
    for row, r in enumerate(records):
        y[row] = r.label
        for i, v in r.features:
            Z[row, i - 1] = v
    return Z, y


def coerce_binary(y: np.ndarray) -> np.ndarray:
    """Map labels ``> 0`` to ``+1`` and everything else to ``-1``."""
    return np.where(np.asarray(y) > 0, 1.0, -1.0)


def build_erm(Z, y, n_workers: int, loss: str, lam: float = 0.0,
              policy: str = "contiguous", normalize: bool = False) -> ErmProblem:
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    if normalize:
        Z = normalize_rows(Z)
    if loss == "logistic":
        y = coerce_binary(y)
    parts = shard(np.arange(Z.shape[0]), n_workers, policy)
    return ErmProblem([(Z[idx], y[idx]) for idx in map(np.asarray, parts)], loss, lam)


def erm_from_records(records, n_workers: int, loss: str, lam: float = 0.0,
                     policy: str = "contiguous", normalize: bool = False,
                     dim: int | None = None) -> ErmProblem:
    if normalize:
        records = normalize_samples(records)
    Z, y = to_dense(records, dim)
    return build_erm(Z, y, n_workers, loss, lam, policy)


# synthetic data

@dataclass(frozen=True)
class QuadraticKappa:
    d: int
    kappa: float
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("dimension must be positive")
        if not self.kappa >= 1:
            raise ConfigError("kappa must be at least 1")


@dataclass(frozen=True)
class LeastSquares:
    n_samples: int
    d: int
    noise: float = 0.1
    seed: int = 0
    normalize: bool = True
    signal: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.n_samples < 1:
            raise ConfigError("sizes must be positive")
        if self.noise < 0:
            raise ConfigError("noise level must be non-negative")


def synth_quadratic(d: int, kappa: float, seed: int = 0):
    """``(H, b)`` with ``H = Q diag(logspace(1, kappa)) Q'`` for a seeded random orthogonal ``Q``."""
    spec = QuadraticKappa(d, kappa, seed)
    rng = np.random.default_rng(spec.seed)
    lam = np.logspace(0.0, math.log10(spec.kappa), spec.d) if spec.d > 1 else np.ones(1)
    Q = ortho_group.rvs(spec.d, random_state=rng) if spec.d > 1 else np.ones((1, 1))
    H = (Q * lam) @ Q.T
    H = 0.5 * (H + H.T)
    b = rng.standard_normal(spec.d)
    return H, b


def synth_least_squares(n_samples: int, d: int, noise: float = 0.1, seed: int = 0,
                        normalize: bool = True, signal: float = 1.0):
    """``(Z, y, x_true)`` with Gaussian features and ``y = Z x_true + noise``.

    With ``normalize`` every row is scaled to unit norm before labels are
    formed.  ``x_true`` has i.i.d. normal entries with standard deviation ``signal``.
    """
    spec = LeastSquares(n_samples, d, noise, seed, normalize, signal)
    rng = np.random.default_rng(spec.seed)
    Z = rng.standard_normal((spec.n_samples, spec.d))
    if spec.normalize:
        Z = normalize_rows(Z)
    x_true = spec.signal * rng.standard_normal(spec.d)
    y = Z @ x_true + spec.noise * rng.standard_normal(spec.n_samples)
    return Z, y, x_true


def synth(spec):
    if isinstance(spec, QuadraticKappa):
        return synth_quadratic(spec.d, spec.kappa, spec.seed)
    if isinstance(spec, LeastSquares):
        return synth_least_squares(spec.n_samples, spec.d, spec.noise, spec.seed, spec.normalize, spec.signal)
    raise ConfigError(f"unknown synthetic spec {spec!r}")
