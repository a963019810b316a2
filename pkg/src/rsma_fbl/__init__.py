"""Rate-splitting multiple access with finite blocklength coding."""

from .fbl_rate import FblParams, evaluate_solution, fbl_rate, q_inverse
from .model import ChannelSet, DomainError, PowerBudget, Precoders
from .schemes import SchemeKind, solve_best
from .sca import SolveOptions, sca_solve

__all__ = [
    "ChannelSet",
    "DomainError",
    "FblParams",
    "PowerBudget",
    "Precoders",
    "SchemeKind",
    "SolveOptions",
    "evaluate_solution",
    "fbl_rate",
    "q_inverse",
    "sca_solve",
    "solve_best",
]

__version__ = "0.1.0"
