"""Robust satellite transmit beamforming under terrestrial interference constraints."""
from .baselines import mrt, rzf_mmse, wmmse_baseline, zf
from .geometry import SystemConfig, UserSet
from .interference import (PolarGrid, TerrestrialLayout, integral_interference_matrix,
                           pa_interference_matrix)
from .problem import PrecoderResult, RobustProblem, lower_bound_rate
from .robust import mmse_ia, pa_variant, wqtia, wweia
from .scenario import Scenario, build_problem, generate_scenario, load_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "UserSet", "TerrestrialLayout", "PolarGrid", "integral_interference_matrix",
    "pa_interference_matrix", "RobustProblem", "PrecoderResult", "lower_bound_rate", "mrt", "zf",
    "rzf_mmse", "wmmse_baseline", "wqtia", "wweia", "mmse_ia", "pa_variant", "Scenario",
    "build_problem", "generate_scenario", "load_scenario", "save_scenario",
]
