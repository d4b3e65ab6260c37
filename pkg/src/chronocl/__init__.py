"""Desk-scale simulation of chronological continual deepfake detection."""

from .config import SimulationConfig, default_config, expand_grid, load_config
from .hypothesis import ResultSet, t_comp, t_decay, t_max
from .metrics import AucMatrix, auc, c_auc, fwt_auc
from .runner import run_full_retraining, run_simulation, run_sweep

__version__ = "0.1.0"
