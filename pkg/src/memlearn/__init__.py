"""Trace-driven memory-hierarchy simulator with learned prefetching (Pythia),
off-chip load prediction (Hermes/POPET) and RL coordination (Athena)."""

from .harness import (HermesSettings, MetricsReport, SimConfig, Simulation, emit_report, load_config,
                      paired_run, run_simulation)
from .pythia import ConfigError

__all__ = ["ConfigError", "HermesSettings", "MetricsReport", "SimConfig", "Simulation", "emit_report",
           "load_config", "paired_run", "run_simulation"]
