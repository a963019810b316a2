"""Successive convex approximation of the FBL sum-rate problem.

The non-convex problem is lifted with SINR lower bounds ``rho``,
interference-plus-noise upper bounds ``sigma`` and private-rate lower bounds
``beta``. Two pieces stay non-convex and are replaced at every iteration by
tangents taken at the previous iterate:

* ``D * sqrt(1 - (1 + rho)^-2)``, concave in ``rho``, is over-estimated by its
  tangent, so the rate constraints become ``log2(1 + rho) - affine >= ...``;
* ``|h^H p|^2 / sigma``, jointly convex, is under-estimated by its tangent.

Both substitutions shrink the feasible set, so every iterate is feasible for
the exact problem and the objective never decreases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import convex
from .convex import ConvexProgram
from .fbl_rate import FblParams
from .model import ChannelSet, DomainError, PowerBudget, Precoders
from .schemes import SchemeKind, apply_scheme_constraints

log = logging.getLogger(__name__)

RHO_MIN = 1e-3
LN2 = math.log(2.0)


@dataclass
class SolveOptions:
    tol: float = 1e-7             # convex subproblem duality gap
    max_newton: int = 200         # Newton steps per subproblem
    sca_tol: float = 1e-4         # stop when |t[n] - t[n-1]| < sca_tol
    max_sca_iter: int = 200
    restarts: int = 0             # extra random initialisations
    seed: int = 0
    rho_min: float = RHO_MIN


@dataclass(frozen=True)
class ExpansionPoint:
    precoders: Precoders
    rho_c: np.ndarray
    rho_p: np.ndarray
    sigma_c: np.ndarray
    sigma_p: np.ndarray

    def check(self, channels: ChannelSet, rho_min: float = RHO_MIN, tol: float = 1e-9) -> list[str]:
        """Return the list of violated invariants (empty when the point is valid)."""
        problems = []
        for name in ("rho_c", "rho_p"):
            v = getattr(self, name)
            if np.any(v < rho_min - tol):
                problems.append(f"{name} below floor {rho_min}")
        for name in ("sigma_c", "sigma_p"):
            if np.any(getattr(self, name) < 1.0 - tol):
                problems.append(f"{name} below 1")
        g = channels.gains(self.precoders)
        own = np.diag(g[:, 1:])
        active_c = np.any(self.precoders.common != 0)
        if active_c and np.any(g[:, 0] / self.sigma_c < self.rho_c - tol):
            problems.append("common SINR bound inconsistent with precoders")
        on = self.precoders.private_powers > 0
        if np.any((own / self.sigma_p < self.rho_p - tol) & on):
            problems.append("private SINR bound inconsistent with precoders")
        return problems


@dataclass
class SubSolution:
    """Outcome of one SCA run.

    ``status`` is ``optimal`` (converged), ``iteration_limit``, ``infeasible``
    or ``numerical_failure``. Only the first two carry a usable solution.
    """

    status: str
    scheme: SchemeKind
    precoders: Precoders | None = None
    common_split: np.ndarray | None = None
    beta_p: np.ndarray | None = None
    objective: float = math.nan
    point: ExpansionPoint | None = None
    trace: list = field(default_factory=list)
    message: str = ""

    @property
    def usable(self) -> bool:
        return self.status in (convex.OPTIMAL, convex.ITERATION_LIMIT) and self.precoders is not None

    @property
    def iterations(self) -> int:
        return len(self.trace)


@dataclass(frozen=True)
class DispersionTangent:
    """Affine over-estimator ``slope * rho + intercept`` of ``D * sqrt(nu(rho))``."""

    slope: float
    intercept: float

    def __call__(self, rho):
        return self.slope * np.asarray(rho) + self.intercept


def linearize_dispersion(rho_exp: float, d_const: float, rho_min: float = RHO_MIN) -> DispersionTangent:
    if rho_exp < rho_min:
        raise DomainError(f"expansion SINR {rho_exp} is below the floor {rho_min}")
    a = 1.0 + rho_exp
    nu = 1.0 - a**-2
    scale = d_const / math.sqrt(nu)
    # D * nu'^-1/2 * [a^-3 (rho - rho') - a^-2 + 1]
    slope = scale * a**-3
    return DispersionTangent(slope, scale * (1.0 - a**-2) - slope * rho_exp)


@dataclass(frozen=True)
class QuadOverLinTangent:
    """Affine under-estimator ``Re(v^H p) + s * sigma`` of ``|h^H p|^2 / sigma``."""

    v: np.ndarray
    s: float

    def __call__(self, p, sigma):
        return float(np.real(np.vdot(self.v, p))) + self.s * sigma


def linearize_quadratic_over_linear(p_exp, sigma_exp: float, h) -> QuadOverLinTangent:
    if not sigma_exp > 0:
        raise DomainError(f"sigma expansion point must be positive, got {sigma_exp}")
    h = np.asarray(h, dtype=complex)
    z = np.vdot(h, p_exp)
    return QuadOverLinTangent(2.0 * z * h / sigma_exp, -abs(z) ** 2 / sigma_exp**2)


def _rows(v: np.ndarray, prog: ConvexProgram, stream: int, nt: int) -> tuple[np.ndarray, np.ndarray]:
    """Realified coefficient rows of ``Re(v^H p_s)`` and ``Im(v^H p_s)``."""
    idx = prog.var("P")[2 * nt * stream: 2 * nt * (stream + 1)]
    re, im = np.zeros(prog.num_vars), np.zeros(prog.num_vars)
    re[idx[0::2]], re[idx[1::2]] = v.real, v.imag
    im[idx[0::2]], im[idx[1::2]] = -v.imag, v.real
    return re, im


def _unit(prog: ConvexProgram, index) -> np.ndarray:
    e = np.zeros(prog.num_vars)
    e[index] = 1.0
    return e


def build_subproblem(channels: ChannelSet, budget: PowerBudget, params: FblParams, qos: Sequence[float],
                     point: ExpansionPoint, scheme: SchemeKind | None = None,
                     rho_min: float = RHO_MIN) -> ConvexProgram:
    """Convex inner approximation of the lifted problem around ``point``.

    Variable blocks: ``P`` (complex, column-major over ``[p_c, p_1..p_K]``),
    ``C``, ``beta_p``, ``rho_c``, ``rho_p``, ``sigma_c``, ``sigma_p``.
    Constraint tags ``c:k`` / ``p:k`` mark everything that bounds the common /
    private rate of user ``k``; ``C:k`` is ``C_k >= 0``.
    """
    scheme = scheme or SchemeKind.rsma()
    K, nt = channels.num_users, channels.num_tx_antennas
    qos = np.broadcast_to(np.asarray(qos, dtype=float), (K,))
    if point.precoders.matrix.shape != (nt, K + 1):
        raise DomainError(f"expansion precoders {point.precoders.matrix.shape} do not match ({nt}, {K + 1})")
    for name in ("rho_c", "rho_p", "sigma_c", "sigma_p"):
        if np.shape(getattr(point, name)) != (K,):
            raise DomainError(f"{name} must have {K} entries")

    prog = ConvexProgram(meta={"rho_min": rho_min, "num_users": K, "num_tx": nt})
    P = prog.add_variable("P", nt * (K + 1), complex_=True)
    C = prog.add_variable("C", K)
    beta = prog.add_variable("beta_p", K)
    rho_c = prog.add_variable("rho_c", K)
    rho_p = prog.add_variable("rho_p", K)
    sig_c = prog.add_variable("sigma_c", K)
    sig_p = prog.add_variable("sigma_p", K)
    prog.objective[C] = 1.0
    prog.objective[beta] = 1.0

    H = channels.matrix
    Pexp = point.precoders.matrix
    e = lambda i: _unit(prog, i)  # noqa: E731

    # tr(P P^H) <= P_t
    A = np.zeros((P.size, prog.num_vars))
    A[np.arange(P.size), P] = 1.0
    prog.add_soc(A, np.zeros(P.size), np.zeros(prog.num_vars), math.sqrt(budget.total_power), tag="power")

    for k in range(K):
        h = H[:, k]
        sigma_cap = 1.0 + budget.total_power * float(np.vdot(h, h).real)
        prog.add_affine(e(C[k]), 0.0, tag=f"C:{k}")
        prog.add_affine(e(C[k]) + e(beta[k]), -qos[k], tag=f"qos:{k}")

        # interference-plus-noise bounds as cones: q <= sigma - 1
        for which, sig, skip in (("c", sig_c, None), ("p", sig_p, k)):
            rows = []
            for j in range(K):
                if j == skip:
                    continue
                re, im = _rows(h, prog, j + 1, nt)
                rows += [2.0 * re, 2.0 * im]
            rows.append(e(sig[k]))
            Acone = np.array(rows)
            b = np.zeros(len(rows))
            b[-1] = -2.0
            prog.add_soc(Acone, b, e(sig[k]), 0.0, tag=f"{which}:{k}")
            prog.add_affine(-e(sig[k]), sigma_cap, tag=f"{which}:{k}")

        # SINR tangents and rate constraints
        for which, stream, rho, sig, rexp, sexp in (
            ("c", 0, rho_c, sig_c, point.rho_c, point.sigma_c),
            ("p", k + 1, rho_p, sig_p, point.rho_p, point.sigma_p),
        ):
            tan = linearize_quadratic_over_linear(Pexp[:, stream], sexp[k], h)
            re, _ = _rows(tan.v, prog, stream, nt)
            prog.add_affine(re + tan.s * e(sig[k]) - e(rho[k]), 0.0, tag=f"{which}:{k}")
            prog.add_affine(e(rho[k]), -rho_min, tag=f"{which}:{k}")

            disp = linearize_dispersion(max(rexp[k], rho_min), params.d_const, rho_min)
            rhs = e(C) if which == "c" else e(beta[k])
            f = -disp.slope * e(rho[k]) - rhs
            # log2(1 + rho) = log(1 + rho) / ln 2
            prog.add_log(e(rho[k]), 0.0, f * LN2, -disp.intercept * LN2, 1.0, tag=f"{which}:{k}")

    return apply_scheme_constraints(scheme, prog)


def _point_from_precoders(channels: ChannelSet, precoders: Precoders, scheme: SchemeKind,
                          rho_min: float) -> ExpansionPoint:
    g = channels.gains(precoders)
    priv_total = g[:, 1:].sum(axis=1)
    own = np.diag(g[:, 1:])
    sigma_c = priv_total + 1.0
    sigma_p = priv_total - own + 1.0
    rho_c = np.maximum(g[:, 0] / sigma_c, rho_min)
    rho_p = np.maximum(own / sigma_p, rho_min)
    off = scheme.zeroed_streams()
    if 0 in off:
        rho_c[:] = rho_min
        sigma_c[:] = 1.0
    for s in off - {0}:
        rho_p[s - 1] = rho_min
        sigma_p[s - 1] = 1.0
    return ExpansionPoint(precoders, rho_c, rho_p, sigma_c, sigma_p)


def _start(channels: ChannelSet, budget: PowerBudget, scheme: SchemeKind, rho_min: float,
           u: np.ndarray, common_share: float) -> ExpansionPoint:
    K = channels.num_users
    Hn = channels.matrix / np.linalg.norm(channels.matrix, axis=0)
    pt = budget.total_power
    P = np.zeros((channels.num_tx_antennas, K + 1), dtype=complex)
    P[:, 0] = math.sqrt(pt * common_share) * u
    P[:, 1:] = math.sqrt(pt * (1.0 - common_share) / K) * Hn
    for s in scheme.zeroed_streams():
        P[:, s] = 0.0
    return _point_from_precoders(channels, Precoders(P), scheme, rho_min)


def initial_point(channels: ChannelSet, budget: PowerBudget, scheme: SchemeKind | None = None,
                  rho_min: float = RHO_MIN) -> ExpansionPoint:
    """Matched-filter starting point: ``P_t/2`` on the common stream, ``P_t/(2K)`` per private stream."""
    scheme = scheme or SchemeKind.rsma()
    Hn = channels.matrix / np.linalg.norm(channels.matrix, axis=0)
    u = Hn.sum(axis=1)
    if np.linalg.norm(u) < 1e-9:
        u = Hn[:, 0]
    return _start(channels, budget, scheme, rho_min, u / np.linalg.norm(u), 0.5)


def fallback_points(channels: ChannelSet, budget: PowerBudget, scheme: SchemeKind,
                    rho_min: float = RHO_MIN) -> list[ExpansionPoint]:
    """Starts with a stronger common stream, for when the default start leaves some
    user's common rate negative and the first subproblem is infeasible.

    The common direction is whichever of the normalised channels and their sum
    gives the weakest user the largest common gain.
    """
    if 0 in scheme.zeroed_streams():
        return []
    H = channels.matrix
    Hn = H / np.linalg.norm(H, axis=0)
    cands = [Hn[:, k] for k in range(channels.num_users)]
    total = Hn.sum(axis=1)
    if np.linalg.norm(total) > 1e-9:
        cands.append(total / np.linalg.norm(total))
    u = max(cands, key=lambda v: float(np.min(np.abs(H.conj().T @ v) ** 2)))
    return [_start(channels, budget, scheme, rho_min, u, share) for share in (0.8, 0.95)]


def random_point(channels: ChannelSet, budget: PowerBudget, scheme: SchemeKind, rng: np.random.Generator,
                 rho_min: float = RHO_MIN) -> ExpansionPoint:
    """Gaussian precoders scaled to the full power budget."""
    nt, K = channels.num_tx_antennas, channels.num_users
    P = rng.standard_normal((nt, K + 1)) + 1j * rng.standard_normal((nt, K + 1))
    for s in scheme.zeroed_streams():
        P[:, s] = 0.0
    P *= math.sqrt(budget.total_power) / np.linalg.norm(P)
    return _point_from_precoders(channels, Precoders(P), scheme, rho_min)


def _point_from_values(values: dict, nt: int, K: int) -> ExpansionPoint:
    P = values["P"].reshape(K + 1, nt).T
    return ExpansionPoint(Precoders(P), values["rho_c"], values["rho_p"], values["sigma_c"], values["sigma_p"])


def _run(channels, budget, params, qos, scheme, opts, point) -> SubSolution:
    nt, K = channels.num_tx_antennas, channels.num_users
    out = SubSolution(status=convex.INFEASIBLE, scheme=scheme)
    x_prev = None
    for n in range(opts.max_sca_iter):
        prog = build_subproblem(channels, budget, params, qos, point, scheme, opts.rho_min)
        sol = convex.solve(prog, tol=opts.tol, max_iter=opts.max_newton, x0=x_prev)
        if sol.status.status == convex.ITERATION_LIMIT:
            # the warm start sits close to the boundary; one longer attempt usually finishes
            sol = convex.solve(prog, tol=opts.tol, max_iter=4 * opts.max_newton, x0=x_prev)
        if not sol.ok:
            if n == 0:
                out.status = sol.status.status
                out.message = f"iteration 0: {sol.status.message or sol.status.status}"
                return out
            out.status = convex.NUMERICAL_FAILURE if sol.status.status != convex.INFEASIBLE else sol.status.status
            out.message = f"iteration {n}: subproblem {sol.status.status} {sol.status.message}".strip()
            return out
        v = sol.values
        t = float(v["C"].sum() + v["beta_p"].sum())
        point = _point_from_values(v, nt, K)
        out.precoders = point.precoders
        out.common_split = np.maximum(v["C"], 0.0)
        out.beta_p = v["beta_p"]
        out.objective = t
        out.point = point
        out.trace.append(t)
        x_prev = sol.x
        if n > 0 and abs(t - out.trace[-2]) < opts.sca_tol:
            out.status = convex.OPTIMAL
            return out
    out.status = convex.ITERATION_LIMIT
    return out


def sca_solve(channels: ChannelSet, budget: PowerBudget, params: FblParams, qos, scheme: SchemeKind | None = None,
              opts: SolveOptions | None = None) -> SubSolution:
    """Run the SCA iteration for one scheme and return the best run over all restarts."""
    scheme = scheme or SchemeKind.rsma()
    opts = opts or SolveOptions()
    scheme.check_users(channels.num_users)
    starts = [initial_point(channels, budget, scheme, opts.rho_min)]
    rng = np.random.default_rng(opts.seed)
    starts += [random_point(channels, budget, scheme, rng, opts.rho_min) for _ in range(opts.restarts)]
    best = None
    for i, point in enumerate(starts):
        sol = _run(channels, budget, params, qos, scheme, opts, point)
        if i == 0 and sol.status == convex.INFEASIBLE:
            for alt in fallback_points(channels, budget, scheme, opts.rho_min):
                sol = _run(channels, budget, params, qos, scheme, opts, alt)
                if sol.status != convex.INFEASIBLE:
                    break
        log.debug("%s start %d: %s t=%.6f after %d iterations", scheme, i, sol.status, sol.objective, sol.iterations)
        if best is None or (sol.usable and (not best.usable or sol.objective > best.objective)):
            best = sol
    return best
