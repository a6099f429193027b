"""Exception types shared across the package."""


class InputError(ValueError):
    """Invalid argument passed to a public operation."""


class DomainExitError(RuntimeError):
    """A stochastic iterate or a flow left the parameter domain."""

    def __init__(self, message, iteration=None, state=None):
        super().__init__(message)
        self.iteration = iteration
        self.state = state


class CertificateFailure(RuntimeError):
    """A convergence certificate could not be established."""

    def __init__(self, message, witnesses=None):
        super().__init__(message)
        self.witnesses = list(witnesses) if witnesses is not None else []


class ConfigurationError(ValueError):
    """Missing or inconsistent configuration."""
