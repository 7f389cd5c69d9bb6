"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class InfeasibleError(RuntimeError):
    """No admissible solution exists for the requested problem."""


class NumericalError(RuntimeError):
    """An iterative method failed to reach its tolerance."""
