"""Compressed-gradient optimization with error compensation.

Modules: ``compressors`` (epsilon-compressors), ``problems`` (objectives and
oracles), ``schemes`` (single steps), ``theory`` (bounds and step sizes),
``simulation`` (runs and traces), ``data_io`` (LIBSVM and synthetic data) and
``cli``.
"""

from .compressors import CompressorSpec, compress, eps_bound
from .errors import ConfigError, DivergedError, EcgradError, InputDomainError, LibsvmParseError, StepSizeError
from .problems import ErmProblem, OracleConfig, QuadraticProblem, estimate_variances
from .schemes import SchemeConfig, direct_step, ec_step
from .simulation import RunConfig, RunTrace, compare, empirical_floor, run

__all__ = [
    "CompressorSpec", "compress", "eps_bound",
    "ConfigError", "DivergedError", "EcgradError", "InputDomainError", "LibsvmParseError", "StepSizeError",
    "ErmProblem", "OracleConfig", "QuadraticProblem", "estimate_variances",
    "SchemeConfig", "direct_step", "ec_step",
    "RunConfig", "RunTrace", "compare", "empirical_floor", "run",
]

__version__ = "0.1.0"
