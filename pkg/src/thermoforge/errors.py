class ThermoforgeError(Exception):
    """Base class for all package errors."""


class DomainError(ThermoforgeError, ValueError):
    """Invalid building, schedule, weather or normalization input."""


class ConfigError(ThermoforgeError, ValueError):
    """Configuration file does not match the schema."""


class OracleError(ThermoforgeError, RuntimeError):
    """The reference simulator produced non-finite values or is unstable."""


class TrainingError(ThermoforgeError, RuntimeError):
    """Training diverged or gradients became non-finite."""


class ArtifactError(ThermoforgeError, FileNotFoundError):
    """A required upstream artifact is missing or malformed."""
