"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value or unparseable config file."""


class FreezeViolationError(RuntimeError):
    """A parameter update was attempted on a frozen network."""


class AdapterStateError(RuntimeError):
    """Adapter attached twice, or merged/queried when absent."""


class DivergenceError(ArithmeticError):
    """Training or sampling produced a non-finite state."""


class PrerequisiteError(RuntimeError):
    """A pipeline stage was run before the stage that produces its inputs."""


class CheckpointError(RuntimeError):
    """Malformed checkpoint file or unsupported checkpoint version."""
