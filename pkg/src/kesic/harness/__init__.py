"""Deterministic adversarial network harness.

``transport`` carries frames between in-process actors with scriptable
interception (drop / duplicate / tamper / delay / capture / replay) and a
full transcript; ``scenario`` builds a simulated world and executes JSON
scenario scripts against it; ``attacks`` is the bundled adversarial
regression suite; ``live`` runs the same happy-path scripts against real
daemon processes on localhost.
"""

from .scenario import World, run_scenario
from .transport import SimNetwork, VirtualTransport

__all__ = ["World", "run_scenario", "SimNetwork", "VirtualTransport"]
