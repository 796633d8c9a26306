"""Exception hierarchy shared by every loop module."""

from __future__ import annotations


class GridloopError(Exception):
    """Base class for all gridloop errors."""


class NetworkError(GridloopError, ValueError):
    """A network is malformed or unsuitable for the requested solver."""


class SingularNetworkError(NetworkError):
    """The susceptance matrix is singular, i.e. the network is disconnected."""

    def __init__(self, message: str, islanded_buses: tuple[int, ...] = ()):
        super().__init__(message)
        self.islanded_buses = islanded_buses


class InfeasibleError(GridloopError):
    """An optimization problem has no feasible point.

    ``constraint`` names the class of constraint found to be binding, for
    example ``"capacity"``, ``"line_limit"``, ``"budget"`` or ``"voltage"``.
    """

    def __init__(self, message: str, constraint: str = "unknown", **details):
        super().__init__(message)
        self.constraint = constraint
        self.details = details


class UnboundedError(GridloopError):
    """A linear program is unbounded below."""


class ConvergenceError(GridloopError):
    """An iterative method did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BoundViolationError(GridloopError, ValueError):
    """A state left its admissible range; ``direction`` is ``"upper"`` or ``"lower"``."""

    def __init__(self, message: str, direction: str, value: float):
        super().__init__(message)
        self.direction = direction
        self.value = value


class ConfigError(GridloopError, ValueError):
    """Scenario configuration failed validation. ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


class LoopRuntimeError(GridloopError):
    """A loop callback failed during a scenario run."""

    def __init__(self, loop_id: str, time_s: float, cause: BaseException):
        super().__init__(f"loop {loop_id!r} failed at t={time_s:.6g} s: {cause}")
        self.loop_id = loop_id
        self.time_s = time_s
        self.cause = cause
