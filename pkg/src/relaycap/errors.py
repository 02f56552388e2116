"""Exception hierarchy shared by every module."""


class RelayCapError(Exception):
    """Base class for all package errors."""


class DomainError(RelayCapError, ValueError):
    """A range or parameter lies outside its admissible domain."""


class StructuralError(RelayCapError, ValueError):
    """Two objects cannot be brought onto a common structure (grid, support)."""


class ConfigError(RelayCapError, ValueError):
    """Invalid configuration or experiment input."""


class ModelViolation(RelayCapError):
    """The network model's standing assumptions are violated (e.g. a zero kernel row)."""


class ContractError(RelayCapError, ValueError):
    """A caller broke an operation's precondition (ordering, dominance, marks)."""


class SizeError(RelayCapError, ValueError):
    """An exhaustive computation was requested on an instance that is too large."""


class ConvergenceError(RelayCapError):
    """An iterative refinement failed to reach its certified tolerance.

    Attributes:
        bounds: the sequence of certified bounds observed before giving up.
    """

    def __init__(self, message: str, bounds=()):
        super().__init__(message)
        self.bounds = list(bounds)
