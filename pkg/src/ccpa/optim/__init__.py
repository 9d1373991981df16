from .alternating import Diagnostics, alternating_optimize, constraint_violation, feasible_init
from .barrier import BarrierResult, ConvexNLP, LinearBlock, LseBlock, barrier_solve
from .sca import METHODS, PapData, ScaResult, build_scagp, build_scavc, pap_data, sca_solve

__all__ = [
    "BarrierResult", "ConvexNLP", "Diagnostics", "LinearBlock", "LseBlock", "METHODS", "PapData",
    "ScaResult", "alternating_optimize", "barrier_solve", "build_scagp", "build_scavc",
    "constraint_violation", "feasible_init", "pap_data", "sca_solve",
]
