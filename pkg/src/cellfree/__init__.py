"""Joint user association and power control for cell-free massive MIMO.

Modules: ``network`` (deployment and channel statistics), ``se`` (closed-form
SE and feasibility), ``apg`` and ``sca`` (the two joint solvers),
``baselines`` (FULL and HEU) and ``experiment``/``cli`` (Monte-Carlo runs).
"""

from .apg import ApgParams, apg_solve
from .baselines import full_solve, heu_solve
from .network import ConfigError, NetworkConfig, make_realization, preset
from .sca import ScaParams, sca_solve
from .se import check_feasibility, se_per_ue

__all__ = [
    "ApgParams", "ConfigError", "NetworkConfig", "ScaParams", "apg_solve",
    "check_feasibility", "full_solve", "heu_solve", "make_realization", "preset",
    "sca_solve", "se_per_ue",
]
