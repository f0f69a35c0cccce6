"""Exception types shared across the package."""


class RateCtlError(Exception):
    """Base class for all package errors."""


class InputDomainError(RateCtlError, ValueError):
    """An argument is outside the documented domain (bad QP, non-finite value, ...)."""


class StateError(RateCtlError, RuntimeError):
    """An operation was called in a state that does not permit it."""


class ConfigError(RateCtlError, ValueError):
    """A configuration object or file is invalid."""


class NoOverlapError(RateCtlError, ValueError):
    """Two RD curves share no quality range, so BD-rate is undefined."""
