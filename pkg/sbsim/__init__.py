# -*- coding: utf-8 -*-

"""
**sbsim** package.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

from .config import ExperimentConfig, config_from_dict, load_config
from .core import new_cluster
from .simulator import ClusterSimulator, SimulationResult, run_experiment

# ---------------------------------------- VERSION ----------------------------------------

__version__ = "0.1.0"
