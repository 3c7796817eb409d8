"""Exception types shared across modules; the CLI maps them to exit codes."""


class ConfigError(ValueError):
    """Invalid configuration or input data (exit code 1)."""


class NumericalFailure(FloatingPointError):
    """A non-finite value appeared during a forward or backward pass (exit code 2)."""

    def __init__(self, message, gate=None, step=None):
        super().__init__(message)
        self.gate = gate
        self.step = step
