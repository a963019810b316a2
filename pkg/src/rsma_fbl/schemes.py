"""Multiple-access schemes as restrictions of the rate-splitting program.

SDMA switches the common stream off, two-user NOMA switches one private
stream off and hands the whole common stream to that user, and incomplete
RSMA keeps every stream. The selector solves every applicable scheme and
keeps the one with the largest sum rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import ConvexProgram
from .model import DomainError

RSMA = "rsma"
SDMA = "sdma"
NOMA = "noma"


@dataclass(frozen=True)
class SchemeKind:
    """``kind`` is one of ``rsma``, ``sdma``, ``noma``.

    For NOMA, ``decode_order = (i, j)`` (0-based) means user ``i`` is served
    entirely by the common stream and user ``j`` keeps its private stream.
    """

    kind: str
    decode_order: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in (RSMA, SDMA, NOMA):
            raise DomainError(f"unknown scheme {self.kind!r}")
        if self.kind == NOMA:
            order = self.decode_order
            if order is None or sorted(order) != [0, 1]:
                raise DomainError(f"NOMA needs a decode order that permutes (0, 1), got {order}")
        elif self.decode_order is not None:
            raise DomainError(f"{self.kind} takes no decode order")

    @classmethod
    def rsma(cls) -> "SchemeKind":
        return cls(RSMA)

    @classmethod
    def sdma(cls) -> "SchemeKind":
        return cls(SDMA)

    @classmethod
    def noma(cls, common_user: int, private_user: int) -> "SchemeKind":
        return cls(NOMA, (common_user, private_user))

    @property
    def label(self) -> str:
        if self.kind == NOMA:
            i, j = self.decode_order
            return f"noma{i + 1}{j + 1}"
        return self.kind

    def zeroed_streams(self) -> frozenset:
        """Stream indices forced to zero power; 0 is the common stream, ``k+1`` user k's private stream."""
        if self.kind == SDMA:
            return frozenset({0})
        if self.kind == NOMA:
            return frozenset({self.decode_order[0] + 1})
        return frozenset()

    def check_users(self, num_users: int) -> None:
        if self.kind == NOMA and num_users != 2:
            raise DomainError("NOMA is only defined for two users; with K >= 3 rate splitting reduces to SDMA")

    def __str__(self):
        return self.label


def candidate_schemes(num_users: int) -> list[SchemeKind]:
    if num_users == 2:
        return [SchemeKind.rsma(), SchemeKind.sdma(), SchemeKind.noma(0, 1), SchemeKind.noma(1, 0)]
    return [SchemeKind.rsma(), SchemeKind.sdma()]


def default_bler_map(eps_rsma: float = 5e-6, eps_sdma: float = 1e-5, eps_noma: float = 5e-6) -> dict:
    return {RSMA: eps_rsma, SDMA: eps_sdma, NOMA: eps_noma}


def _stream_indices(program: ConvexProgram, stream: int) -> np.ndarray:
    K = program.var("C").size
    idx = program.var("P")
    nt = idx.size // (2 * (K + 1))
    return idx[2 * nt * stream: 2 * nt * (stream + 1)]


def apply_scheme_constraints(scheme: SchemeKind, program: ConvexProgram) -> ConvexProgram:
    """Return a copy of ``program`` restricted to ``scheme``.

    Switching a stream off pins its precoder and the SINR/interference
    auxiliaries of that stream, and drops the constraints that only exist to
    bound the stream's rate.
    """
    K = program.var("C").size
    scheme.check_users(K)
    if scheme.kind == RSMA:
        return program
    prog = program.copy()
    if scheme.kind == SDMA:
        prog.pin(_stream_indices(prog, 0), 0.0)
        prog.pin(prog.var("C"), 0.0)
        prog.pin(prog.var("rho_c"), _rho_floor(prog))
        prog.pin(prog.var("sigma_c"), 1.0)
        prog.drop(lambda tag: tag.startswith(("c:", "C:")))
    else:
        i, j = scheme.decode_order
        prog.pin(_stream_indices(prog, i + 1), 0.0)
        prog.pin(prog.var("beta_p")[i], 0.0)
        prog.pin(prog.var("rho_p")[i], _rho_floor(prog))
        prog.pin(prog.var("sigma_p")[i], 1.0)
        prog.pin(prog.var("C")[j], 0.0)
        prog.drop(lambda tag: tag in (f"p:{i}", f"C:{j}"))
    return prog


def _rho_floor(program: ConvexProgram) -> float:
    return program.meta.get("rho_min", 1e-3)


@dataclass
class BestOfReport:
    winner: SchemeKind | None
    per_scheme: dict = field(default_factory=dict)
    selected: object = None

    @property
    def feasible(self) -> bool:
        return self.selected is not None


def solve_best(channels, budget, params_by_scheme: dict, qos, opts=None,
               candidates: list[SchemeKind] | None = None) -> BestOfReport:
    """Solve every candidate scheme and keep the highest objective.

    ``params_by_scheme`` maps a scheme kind (``rsma``/``sdma``/``noma``) to
    its :class:`~rsma_fbl.fbl_rate.FblParams`. Infeasible or failed
    candidates are kept in ``per_scheme`` but never selected.
    """
    from .sca import sca_solve

    if candidates is None:
        candidates = candidate_schemes(channels.num_users)
    report = BestOfReport(winner=None)
    for scheme in candidates:
        sol = sca_solve(channels, budget, params_by_scheme[scheme.kind], qos, scheme, opts)
        report.per_scheme[scheme] = sol
        if not sol.usable:
            continue
        if report.selected is None or sol.objective > report.selected.objective:
            report.selected = sol
            report.winner = scheme
    return report
