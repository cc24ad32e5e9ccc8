"""Decentralized sector-overload mitigation as a game between airspace sectors.

Sectors own departing flights and pick ground delays for them.  Each sector
minimises its own overload plus a cooperativeness-weighted share of everyone
else's; best-response dynamics under a no-new-overload rule drive the
system toward an overload-free schedule.
"""
from .airspace import ActionProfile, Flight, LoadTable, Scenario, Segment, compute_loads
from .baselines import centralized, fcfs
from .dynamics import RunConfig, Trace, run
from .ga import GAConfig
from .game import cost, potential

__all__ = [
    "ActionProfile", "Flight", "GAConfig", "LoadTable", "RunConfig", "Scenario", "Segment", "Trace",
    "centralized", "compute_loads", "cost", "fcfs", "potential", "run",
]
__version__ = "0.1.0"
