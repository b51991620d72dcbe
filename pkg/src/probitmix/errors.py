"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input violates a documented precondition or invariant."""


class NumericError(RuntimeError):
    """A numerical routine failed to reach its accuracy or convergence target."""


class FilterAbort(RuntimeError):
    """The particle filter hit an unrecoverable state (e.g. all-zero weights).

    Carries (period, instance, observation) coordinates so the failure is
    reproducible from the run manifest.
    """

    def __init__(self, message, period=None, instance=None, observation=None):
        coords = f" [period={period} instance={instance} observation={observation}]"
        super().__init__(message + coords)
        self.period = period
        self.instance = instance
        self.observation = observation


class ConfigError(ValueError):
    """Configuration parsing/validation failure; aggregates all messages."""

    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class IntegrityError(RuntimeError):
    """A persisted artifact is truncated, corrupted, or version-incompatible."""
