"""Deterministic epsilon-compressors.

An epsilon-compressor is any map ``Q`` with ``||Q(v) - v|| <= eps`` for every
input.  Rounding and the eps-ball shrink satisfy this globally; top-K and
scaled sign only on bounded sets, which is why :func:`eps_bound` takes an
optional infinity-norm cap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InputDomainError

KINDS = ("exact", "rounding", "sign", "topk", "epsball")


@dataclass(frozen=True)
class CompressorSpec:
    kind: str
    delta: float | None = None
    k: int | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown compressor kind {self.kind!r}")
        if self.kind == "rounding":
            if self.delta is None or not math.isfinite(self.delta) or self.delta <= 0:
                raise ConfigError(f"rounding resolution must be positive, got {self.delta}")
        if self.kind == "topk":
            if self.k is None or int(self.k) != self.k or self.k < 1:
                raise ConfigError(f"top-K needs a positive integer K, got {self.k}")
        if self.kind == "epsball":
            if self.eps is None or not math.isfinite(self.eps) or self.eps <= 0:
                raise ConfigError(f"eps-ball radius must be positive, got {self.eps}")

    @classmethod
    def parse(cls, text: str) -> "CompressorSpec":
        """Build a spec from ``exact``, ``sign``, ``rounding:0.5``, ``topk:8`` or ``epsball:0.25``."""
        name, _, arg = text.strip().lower().partition(":")
        try:
            if name == "exact" and not arg:
                return cls("exact")
            if name == "sign" and not arg:
                return cls("sign")
            if name == "rounding" and arg:
                return cls("rounding", delta=float(arg))
            if name == "topk" and arg:
                return cls("topk", k=int(arg))
            if name == "epsball" and arg:
                return cls("epsball", eps=float(arg))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad compressor parameter in {text!r}") from exc
        raise ConfigError(f"cannot parse compressor {text!r}")

    def __str__(self):
        if self.kind == "rounding":
            return f"rounding:{self.delta!r}"
        if self.kind == "topk":
            return f"topk:{self.k}"
        if self.kind == "epsball":
            return f"epsball:{self.eps!r}"
        return self.kind


class CompressionResult(NamedTuple):
    output: np.ndarray
    error_norm: float


def _rounding(v, delta):
    return np.sign(v) * delta * np.floor(np.abs(v) / delta + 0.5)


def _scaled_sign(v):
    scale = np.sum(np.abs(v)) / v.size
    return np.where(v >= 0, scale, -scale)


def _topk(v, k):
    out = np.zeros_like(v)
    # stable sort keeps the lower index first among equal magnitudes
    keep = np.argsort(-np.abs(v), kind="stable")[:k]
    out[keep] = v[keep]
    return out


def _epsball(v, eps):
    norm = np.linalg.norm(v)
    if norm == 0.0:
        out = np.zeros_like(v)
        out[0] = eps
        return out
    if v.size == 1:
        return v - eps * v / norm
    if norm <= eps:
        return np.zeros_like(v)
    return v * ((norm - eps) / norm)


def apply(spec: CompressorSpec, v: np.ndarray) -> np.ndarray:
    """Compressor output only; the hot path used by the optimization steps."""
    kind = spec.kind
    if kind == "exact":
        return v.copy()
    if kind == "rounding":
        return _rounding(v, spec.delta)
    if kind == "sign":
        return _scaled_sign(v)
    if kind == "topk":
        if spec.k > v.size:
            raise ConfigError(f"top-K with K={spec.k} exceeds dimension {v.size}")
        return _topk(v, spec.k)
    return _epsball(v, spec.eps)


def compress(spec: CompressorSpec, v) -> CompressionResult:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InputDomainError("compressor input must be a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise InputDomainError("compressor input has non-finite entries")
    out = apply(spec, v)
    return CompressionResult(out, float(np.linalg.norm(out - v)))


def eps_bound(spec: CompressorSpec, dim: int, v_inf_cap: float | None = None) -> float:
    """Worst-case ``||Q(v) - v||`` over inputs of dimension ``dim``.

    Returns ``math.inf`` when the compressor has no global bound and no cap
    on ``||v||_inf`` is given.
    """
    if spec.kind == "exact":
        return 0.0
    if spec.kind == "rounding":
        return math.sqrt(dim) * spec.delta / 2
    if spec.kind == "epsball":
        return float(spec.eps)
    if v_inf_cap is None:
        return math.inf
    if spec.kind == "topk":
        return math.sqrt(max(dim - spec.k, 0)) * v_inf_cap
    # scaled sign: the error vector is |v_i| minus their mean, up to sign; the
    # spread of values confined to [0, cap] is at most cap/2 per coordinate
    return math.sqrt(dim) * v_inf_cap / 2


def rounding_eps_squared(delta: float, dim: int) -> float:
    """Squared error bound ``d * delta**2 / 4`` of the rounding quantizer.

    Bound checks use :func:`eps_bound`, whose square this is.
    """
    return dim * delta**2 / 4


def payload_bits(spec: CompressorSpec, v: np.ndarray) -> int:
    """Nominal message size for reporting; no encoder stands behind it."""
    d = v.size
    if spec.kind == "rounding":
        levels = math.floor(float(np.max(np.abs(v))) / spec.delta)
        return d * (1 + math.ceil(math.log2(1 + levels)))
    if spec.kind == "sign":
        return d + 64
    if spec.kind == "topk":
        return spec.k * (64 + math.ceil(math.log2(d))) if d > 1 else spec.k * 64
    return 64 * d
