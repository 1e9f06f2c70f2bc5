"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid experiment or sampler configuration."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""
