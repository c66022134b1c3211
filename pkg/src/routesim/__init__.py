"""Day-to-day route choice simulation with persona-calibrated traveler agents."""

__version__ = "0.1.0"

from .env import Scenario, bpr_travel_time, default_scenario, observe, update_state

__all__ = ["Scenario", "bpr_travel_time", "default_scenario", "observe",
           "update_state", "__version__"]
