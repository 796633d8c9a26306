"""Control loops of a power grid at desk scale.

Modules: ``grid`` (network models and power flow), ``dispatch`` (economic
dispatch and unit commitment), ``agc`` (frequency control with dynamic
watermarking), ``storage`` (battery regulation-market participation),
``ev`` (charging coordination and station siting), ``demand`` (thermal
load control), ``microgrid`` (hierarchical droop control) and ``harness``
(multi-rate scenario runs).
"""

from .errors import (
    BoundViolationError,
    ConfigError,
    ConvergenceError,
    GridloopError,
    InfeasibleError,
    LoopRuntimeError,
    NetworkError,
    SingularNetworkError,
    UnboundedError,
)

__version__ = "0.1.0"

__all__ = [
    "BoundViolationError",
    "ConfigError",
    "ConvergenceError",
    "GridloopError",
    "InfeasibleError",
    "LoopRuntimeError",
    "NetworkError",
    "SingularNetworkError",
    "UnboundedError",
]
