"""Worst-case response-time analyses and allocation algorithms for partitioned multi-core systems."""

from .model import (
    MS,
    NS,
    PS,
    US,
    AnalysisError,
    SystemConfig,
    Task,
    Vcpu,
    make_task,
    parse_duration,
    validate,
)

__all__ = [
    "MS", "NS", "PS", "US", "AnalysisError", "SystemConfig", "Task", "Vcpu",
    "make_task", "parse_duration", "validate",
]
__version__ = "0.1.0"
