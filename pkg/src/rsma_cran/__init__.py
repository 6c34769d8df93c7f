"""Joint rate-gap and power minimization for RSMA C-RANs."""

from .baselines import SCHEMES, build_structure
from .estimator import RSMAAllocator
from .netmodel import SystemConfig, load_config, make_scenario
from .qt import QTOptions, Solution, run

__version__ = "0.1.0"

__all__ = ["SCHEMES", "RSMAAllocator", "QTOptions", "Solution", "SystemConfig", "build_structure",
           "load_config", "make_scenario", "run"]
