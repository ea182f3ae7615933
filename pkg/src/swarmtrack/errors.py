"""Exception classes shared across the package."""


class ConfigurationError(ValueError):
    """Invalid construction parameters or scenario configuration."""


class ModelError(ValueError):
    """A model-level contract is violated (reducible chain, singular system)."""


class StateSpaceCapError(ModelError):
    """A composite state space exceeds the configured size cap."""


class NumericError(ArithmeticError):
    """A numerical operation produced an invalid result (non-PD covariance,
    singular innovation). Surfaced instead of being silently clamped."""


class OrderingError(ValueError):
    """Events were recorded out of time order."""
