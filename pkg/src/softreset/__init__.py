"""Passive soft-reset controllers: closed-loop construction, gain synthesis,
integration of the soft- and hard-reset loops, benchmark plants and an
experiment runner."""

from .controllers import make_example1_fore, make_mimo_fore, manipulator_fore, optimization_fore
from .di_core import ControllerSpec, PlantSpec, QuadraticEnergy, interconnect, phi, sgn_set
from .gamma_synth import ForeParams, SynthesizedGamma
from .integrate import HybridConfig, IntegratorConfig, integrate_hard, integrate_soft, lyapunov_monitor

__version__ = "0.1.0"

__all__ = [
    "ControllerSpec",
    "ForeParams",
    "HybridConfig",
    "IntegratorConfig",
    "PlantSpec",
    "QuadraticEnergy",
    "SynthesizedGamma",
    "integrate_hard",
    "integrate_soft",
    "interconnect",
    "lyapunov_monitor",
    "make_example1_fore",
    "make_mimo_fore",
    "manipulator_fore",
    "optimization_fore",
    "phi",
    "sgn_set",
]
