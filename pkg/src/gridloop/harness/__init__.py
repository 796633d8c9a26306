"""Multi-rate scenario harness: config, schedule, loops, traces."""

from .config import Disturbance, ScenarioConfig, load_config
from .loops import LOOP_REGISTRY, RegistryEntry
from .runner import RunSummary, run_many, run_scenario, validate
from .schedule import Activation, LoopRegistration, iter_schedule, schedule
from .trace import TRACE_HEADER, TraceRecord, read_trace

__all__ = [
    "Activation",
    "Disturbance",
    "LOOP_REGISTRY",
    "LoopRegistration",
    "RegistryEntry",
    "RunSummary",
    "ScenarioConfig",
    "TRACE_HEADER",
    "TraceRecord",
    "iter_schedule",
    "load_config",
    "read_trace",
    "run_many",
    "run_scenario",
    "schedule",
    "validate",
]
