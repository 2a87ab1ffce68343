"""Event-driven simulator for random and listen-before-talk access in long-range IoT cells."""

from .engine import Simulation, SimulationDefect, run
from .metrics import MetricsTable, confidence_interval, p_fail, summarize
from .presets import build_preset, run_preset
from .scenario import ConfigError, ProtocolKind, RateMode, ScenarioConfig

__all__ = ["ConfigError", "MetricsTable", "ProtocolKind", "RateMode", "ScenarioConfig",
           "Simulation", "SimulationDefect", "build_preset", "confidence_interval", "p_fail",
           "run", "run_preset", "summarize"]

__version__ = "0.1.0"
