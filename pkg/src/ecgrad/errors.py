"""Exception types shared across the package."""


class EcgradError(Exception):
    """Base class for all package errors."""


class ConfigError(EcgradError, ValueError):
    """Invalid configuration: bad compressor string, step size, scheme, dimensions."""


class InputDomainError(EcgradError, ValueError):
    """Input outside the domain of an operation (non-finite vector, empty shard)."""


class StepSizeError(ConfigError):
    """Step size outside the admissible range of the requested theorem."""


class DivergedError(EcgradError, RuntimeError):
    def __init__(self, iteration, reason="non-finite iterate"):
        self.iteration = iteration
        super().__init__(f"run diverged at iteration {iteration}: {reason}")


class LibsvmParseError(EcgradError, ValueError):
    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")
