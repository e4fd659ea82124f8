"""Average-consensus time synchronization for wireless sensor networks.

Clock models, the single-hop (ATS) and multi-hop (MACTS) protocol state
machines, spectral graph analysis, a deterministic discrete-event simulator
and post-processing of its traces.
"""

from macts.clock import HardwareClock, LogicalClock, apply_update, hardware_read, logical_read
from macts.graph import SpectralReport, Topology, algebraic_connectivity, spectral_report
from macts.simulator import RunTrace, ScenarioConfig, detect_convergence, run_scenario

__all__ = [
    "HardwareClock",
    "LogicalClock",
    "RunTrace",
    "ScenarioConfig",
    "SpectralReport",
    "Topology",
    "algebraic_connectivity",
    "apply_update",
    "detect_convergence",
    "hardware_read",
    "logical_read",
    "run_scenario",
    "spectral_report",
]

__version__ = "0.1.0"
