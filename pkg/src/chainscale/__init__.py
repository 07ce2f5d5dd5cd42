"""Hybrid proactive/reactive scaling of geo-distributed VNF service chains."""

from .config import ScenarioConfig, load_scenario
from .metrics import MetricsReport
from .sim import Simulator, run_scenario

__version__ = "0.1.0"

__all__ = [
    "MetricsReport",
    "ScenarioConfig",
    "Simulator",
    "load_scenario",
    "run_scenario",
    "__version__",
]
