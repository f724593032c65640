"""Exception types shared across the toolkit."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond recoverable jitter."""


class DegenerateBeliefError(ValueError):
    """The gradient belief has an exactly-zero mean; no descent direction exists."""


class ConfigError(ValueError):
    """A configuration file or policy configuration is invalid."""


class DomainError(ValueError):
    """A point lies outside the objective's domain box."""


class EvaluationError(RuntimeError):
    """An objective evaluation failed (external process fault, timeout, bad reply)."""
