class CtmdpError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigError(CtmdpError):
    """A config or model file could not be parsed or failed validation."""


class KernelError(CtmdpError):
    """The transition kernel is malformed (e.g. a uniformized row is not a probability row)."""


class ConditionError(CtmdpError):
    """A condition check was requested that cannot be evaluated."""


class PolicyError(CtmdpError):
    """A policy is invalid for the model or unsupported by the requested operation."""


class ConvergenceError(CtmdpError):
    """An iteration did not converge or its limit failed a consistency check."""


class InvariantError(CtmdpError):
    """A guaranteed property of value iteration was violated at runtime."""
