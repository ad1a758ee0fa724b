"""Exception and warning types shared across the package."""


class EngineError(Exception):
    """Base class for every error raised by epigrid."""


class ConfigError(EngineError):
    """A pipeline configuration is missing, malformed, or inconsistent."""


class ParseError(EngineError):
    """An input file violates its declared format."""


class GeometryError(EngineError):
    """A geometry is structurally invalid (open ring, empty, zero area)."""


class ConstantFieldError(EngineError):
    """The analysis variable has zero variance, so autocorrelation is undefined."""


class InsufficientRegionsError(EngineError):
    """Too few usable (non-island) regions for autocorrelation."""


class SchemaMismatchError(EngineError):
    """Feature columns do not match what a model or table expects."""


class DependencyError(EngineError):
    """A pipeline stage ran before the stage that produces its inputs."""


class LockError(EngineError):
    """Another run owns the output directory."""


class EngineWarning(UserWarning):
    """Category for all warnings emitted by epigrid."""
