"""Barrier interior-point solver for small convex programs.

Programs maximize a linear objective over real variables subject to

* affine constraints        ``a @ x + b >= 0``
* second-order cones        ``||A @ x + b|| <= c @ x + d``
* logarithmic constraints   ``scale * log(1 + g @ x + g0) + f @ x + f0 >= 0``

Each constraint class carries its standard self-concordant barrier; the log
constraint uses the barrier of the hypograph of ``log``,
``-log(log(u) - v) - log(u)``. Complex variables are stored as interleaved
``(re, im)`` pairs. Individual variables may be pinned to fixed values, in
which case they are eliminated before the Newton iterations.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"
NUMERICAL_FAILURE = "numerical_failure"

# Armijo sufficient-decrease fraction and backtracking factor
ALPHA = 0.3
BETA = 0.5


class ProgramError(ValueError):
    """Malformed convex program."""


@dataclass
class Affine:
    a: np.ndarray
    b: float
    tag: str = ""


@dataclass
class Soc:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float
    tag: str = ""


@dataclass
class LogCon:
    g: np.ndarray
    g0: float
    f: np.ndarray
    f0: float
    scale: float
    tag: str = ""


@dataclass
class ConvexProgram:
    """A convex program over a flat vector of real scalars.

    Variables are registered by name; :meth:`var` returns their index arrays.
    """

    num_vars: int = 0
    blocks: dict = field(default_factory=dict)
    complex_blocks: set = field(default_factory=set)
    objective: np.ndarray = field(default_factory=lambda: np.zeros(0))
    affine: list = field(default_factory=list)
    soc: list = field(default_factory=list)
    log: list = field(default_factory=list)
    fixed: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add_variable(self, name: str, size: int = 1, complex_: bool = False) -> np.ndarray:
        if name in self.blocks:
            raise ProgramError(f"variable {name!r} declared twice")
        width = 2 * size if complex_ else size
        idx = np.arange(self.num_vars, self.num_vars + width)
        self.blocks[name] = idx
        if complex_:
            self.complex_blocks.add(name)
        self.num_vars += width
        self.objective = np.concatenate([self.objective, np.zeros(width)])
        for con in self.affine:
            con.a = np.concatenate([con.a, np.zeros(width)])
        for con in self.soc:
            con.A = np.hstack([con.A, np.zeros((con.A.shape[0], width))])
            con.c = np.concatenate([con.c, np.zeros(width)])
        for con in self.log:
            con.g = np.concatenate([con.g, np.zeros(width)])
            con.f = np.concatenate([con.f, np.zeros(width)])
        return idx

    def var(self, name: str) -> np.ndarray:
        return self.blocks[name]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.num_vars)

    def add_affine(self, a, b: float, tag: str = "") -> None:
        self.affine.append(Affine(np.asarray(a, float), float(b), tag))

    def add_soc(self, A, b, c, d: float, tag: str = "") -> None:
        A = np.atleast_2d(np.asarray(A, float))
        self.soc.append(Soc(A, np.asarray(b, float), np.asarray(c, float), float(d), tag))

    def add_log(self, g, g0: float, f, f0: float, scale: float, tag: str = "") -> None:
        if not scale > 0:
            raise ProgramError(f"log constraint scale must be positive, got {scale}")
        self.log.append(LogCon(np.asarray(g, float), float(g0), np.asarray(f, float), float(f0), float(scale), tag))

    def pin(self, indices, value: float = 0.0) -> None:
        for i in np.atleast_1d(indices):
            self.fixed[int(i)] = float(value)

    def drop(self, predicate: Callable[[str], bool]) -> None:
        """Remove every constraint whose tag satisfies ``predicate``."""
        self.affine = [c for c in self.affine if not predicate(c.tag)]
        self.soc = [c for c in self.soc if not predicate(c.tag)]
        self.log = [c for c in self.log if not predicate(c.tag)]

    def copy(self) -> "ConvexProgram":
        return copy.deepcopy(self)

    @property
    def num_constraints(self) -> int:
        return len(self.affine) + len(self.soc) + len(self.log)

    def tags(self) -> list[str]:
        return [c.tag for c in self.affine] + [c.tag for c in self.soc] + [c.tag for c in self.log]

    def validate(self) -> None:
        n = self.num_vars
        if self.objective.shape != (n,):
            raise ProgramError("objective length does not match variable count")
        for con in self.affine:
            if con.a.shape != (n,):
                raise ProgramError(f"affine constraint {con.tag!r} has wrong width")
        for con in self.soc:
            if con.A.shape[1] != n or con.c.shape != (n,) or con.b.shape != (con.A.shape[0],):
                raise ProgramError(f"cone constraint {con.tag!r} has inconsistent shapes")
        for con in self.log:
            if con.g.shape != (n,) or con.f.shape != (n,):
                raise ProgramError(f"log constraint {con.tag!r} has wrong width")
        for i in self.fixed:
            if not 0 <= i < n:
                raise ProgramError(f"pinned index {i} is not a declared variable")

    # evaluation on full vectors -------------------------------------------------

    def slacks(self, x: np.ndarray) -> np.ndarray:
        """Constraint slacks at ``x``; all are nonnegative iff ``x`` is feasible."""
        out = [con.a @ x + con.b for con in self.affine]
        out += [con.c @ x + con.d - np.linalg.norm(con.A @ x + con.b) for con in self.soc]
        for con in self.log:
            u = 1.0 + con.g @ x + con.g0
            out.append(con.scale * math.log(u) + con.f @ x + con.f0 if u > 0 else -math.inf)
        return np.asarray(out, dtype=float)

    def max_violation(self, x: np.ndarray) -> float:
        s = self.slacks(x)
        pins = [abs(x[i] - v) for i, v in self.fixed.items()]
        return max([0.0, float(-s.min()) if s.size else 0.0] + pins)

    def values(self, x: np.ndarray) -> dict:
        out = {}
        for name, idx in self.blocks.items():
            v = x[idx]
            out[name] = v[0::2] + 1j * v[1::2] if name in self.complex_blocks else v.copy()
        return out


@dataclass
class SolveStatus:
    status: str
    objective_value: float
    kkt_residual: float
    newton_steps: int = 0
    message: str = ""


@dataclass
class Solution:
    status: SolveStatus
    x: np.ndarray
    values: dict

    @property
    def ok(self) -> bool:
        return self.status.status == OPTIMAL


class _Reduced:
    """Stacked constraint data restricted to the free variables."""

    def __init__(self, prog: ConvexProgram):
        n = prog.num_vars
        self.full_n = n
        fixed_idx = np.array(sorted(prog.fixed), dtype=int)
        self.free = np.setdiff1d(np.arange(n), fixed_idx)
        self.base = np.zeros(n)
        if fixed_idx.size:
            self.base[fixed_idx] = [prog.fixed[i] for i in fixed_idx]
        fr, base = self.free, self.base
        self.c = prog.objective[fr]
        self.c0 = float(prog.objective @ base)

        if prog.affine:
            A = np.array([con.a for con in prog.affine])
            self.Aa = A[:, fr]
            self.ba = np.array([con.b for con in prog.affine]) + A @ base
        else:
            self.Aa = np.zeros((0, fr.size))
            self.ba = np.zeros(0)

        self.socs = []
        for con in prog.soc:
            A = con.A[:, fr]
            c = con.c[fr]
            self.socs.append((A, con.b + con.A @ base, c, con.d + con.c @ base,
                              2.0 * np.outer(c, c) - 2.0 * A.T @ A))

        if prog.log:
            G = np.array([con.g for con in prog.log])
            F = np.array([con.f for con in prog.log])
            sc = np.array([con.scale for con in prog.log])
            self.G = G[:, fr]
            self.g0 = 1.0 + np.array([con.g0 for con in prog.log]) + G @ base
            self.F = F[:, fr] / sc[:, None]
            self.f0 = (np.array([con.f0 for con in prog.log]) + F @ base) / sc
        else:
            self.G = self.F = np.zeros((0, fr.size))
            self.g0 = self.f0 = np.zeros(0)

        self.barrier_param = self.Aa.shape[0] + 2 * len(self.socs) + 2 * self.G.shape[0]

    def full(self, z: np.ndarray) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = z
        return x

    def value(self, z: np.ndarray) -> float:
        """Barrier value, ``inf`` outside the domain."""
        s = self.Aa @ z + self.ba
        if np.any(s <= 0):
            return math.inf
        val = -np.sum(np.log(s))
        for A, b, c, d, _ in self.socs:
            u = c @ z + d
            w = A @ z + b
            psi = u * u - w @ w
            if u <= 0 or psi <= 0:
                return math.inf
            val -= math.log(psi)
        if self.G.shape[0]:
            nu = self.G @ z + self.g0
            if np.any(nu <= 0):
                return math.inf
            h = np.log(nu) + self.F @ z + self.f0
            if np.any(h <= 0):
                return math.inf
            val -= np.sum(np.log(h)) + np.sum(np.log(nu))
        return float(val)

    def derivs(self, z: np.ndarray):
        s = self.Aa @ z + self.ba
        grad = -self.Aa.T @ (1.0 / s)
        hess = (self.Aa.T * (1.0 / s**2)) @ self.Aa
        for A, b, c, d, Hpsi in self.socs:
            u = c @ z + d
            w = A @ z + b
            psi = u * u - w @ w
            gpsi = 2.0 * u * c - 2.0 * A.T @ w
            grad -= gpsi / psi
            hess += np.outer(gpsi, gpsi) / psi**2 - Hpsi / psi
        if self.G.shape[0]:
            nu = self.G @ z + self.g0
            h = np.log(nu) + self.F @ z + self.f0
            Gn = self.G / nu[:, None]
            gh = Gn + self.F
            grad -= gh.T @ (1.0 / h) + Gn.sum(axis=0)
            hess += (gh.T / h**2) @ gh + (Gn.T * (1.0 / h + 1.0)) @ Gn
        return grad, hess

    def slack_min(self, z: np.ndarray) -> float:
        """Smallest constraint slack in the program's own units (``-inf`` off-domain)."""
        vals = list(self.Aa @ z + self.ba)
        for A, b, c, d, _ in self.socs:
            vals.append(c @ z + d - np.linalg.norm(A @ z + b))
        if self.G.shape[0]:
            nu = self.G @ z + self.g0
            if np.any(nu <= 0):
                return -math.inf
            vals.extend(np.log(nu) + self.F @ z + self.f0)
        return min(vals) if vals else math.inf


def _newton_direction(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.maximum(np.abs(np.diag(hess)), 1e-300))
    Hs = hess / np.outer(d, d)
    gs = grad / d
    try:
        L = np.linalg.cholesky(Hs)
        y = np.linalg.solve(L, -gs)
        step = np.linalg.solve(L.T, y)
    except np.linalg.LinAlgError:
        step = np.linalg.lstsq(Hs + 1e-12 * np.eye(len(gs)), -gs, rcond=None)[0]
    return step / d


def _barrier_core(red: _Reduced, z0: np.ndarray, c: np.ndarray, tol: float, max_iter: int,
                  stop: Callable[[np.ndarray], bool] | None = None, t0: float | None = None, mu: float = 20.0):
    """Maximize ``c @ z`` by the barrier method from strictly feasible ``z0``.

    Returns ``(z, status, gap_bound, newton_steps)``. The gap bound ``m / t``
    is only claimed at points where centring converged.
    """
    m = max(red.barrier_param, 1)
    z = z0.copy()
    # initial gap bound of one objective unit; objectives here are O(1)-O(10) bits
    t = float(m) if t0 is None else t0
    steps = 0
    centred = None
    while True:
        phi = -t * (c @ z) + red.value(z)
        polish = 0
        while True:
            if steps >= max_iter:
                return z, ITERATION_LIMIT, m / t, steps
            grad, hess = red.derivs(z)
            grad = grad - t * c
            dz = _newton_direction(grad, hess)
            if not np.all(np.isfinite(dz)):
                return z, NUMERICAL_FAILURE, m / t, steps
            decrement = -(grad @ dz)
            steps += 1
            # lambda^2/2 <= 1e-7 moves the gap bound by well under 1e-3 relative;
            # in the rounding-limited regime a few polishing steps are enough
            if decrement / 2.0 <= 1e-7 or polish >= 5:
                break
            s = 1.0
            while s > 1e-14 and not math.isfinite(red.value(z + s * dz)):
                s *= BETA
            zn = z + s * dz
            new_phi = -t * (c @ zn) + red.value(zn)
            if decrement < 1e-4:
                # near the centre the decrement can stall at rounding level
                polish += 1
            if decrement > 1e-6:
                while s > 1e-14 and new_phi > phi - ALPHA * s * decrement:
                    s *= BETA
                    zn = z + s * dz
                    new_phi = -t * (c @ zn) + red.value(zn)
            # below 1e-6 the decrease is lost in rounding of phi; take the feasible step
            if s <= 1e-14 or not math.isfinite(new_phi):
                if decrement < 1e-4:
                    break
                # rounding blocks the last stage; the previous centre is within one barrier step
                if stop is None and centred is not None and centred[1] <= mu * tol * 1.01:
                    return centred[0], OPTIMAL, centred[1], steps
                return z, NUMERICAL_FAILURE, m / t, steps
            z, phi = zn, new_phi
            if stop is not None and stop(z):
                return z, OPTIMAL, m / t, steps
            if np.linalg.norm(z) > 1e12:
                return z, NUMERICAL_FAILURE, m / t, steps
        log.debug("t=%.3g centred after %d total Newton steps", t, steps)
        if m / t <= tol:
            return z, OPTIMAL, m / t, steps
        centred = (z.copy(), m / t)
        t = min(t * mu, 1.01 * m / tol)


def feasibility_phase(program: ConvexProgram, x0: np.ndarray | None = None, tol: float = 1e-7,
                      max_iter: int = 200):
    """Find a strictly feasible point of ``program`` or show none exists.

    Returns ``(True, x)`` with ``x`` strictly interior, or ``(False, witness)``
    where ``witness`` is the smallest achievable uniform constraint relaxation
    (positive for an infeasible program).
    """
    program.validate()
    red = _Reduced(program)
    x0 = program.zeros() if x0 is None else np.asarray(x0, float)
    z0 = x0[red.free]
    if red.G.shape[0] and np.any(red.G @ z0 + red.g0 <= 0):
        z0 = np.zeros_like(z0)
        if np.any(red.G @ z0 + red.g0 <= 0):
            raise ProgramError("starting point lies outside the domain of a log constraint")
    smin = red.slack_min(z0)
    if smin > 0 and math.isfinite(red.value(z0)):
        return True, red.full(z0)

    # relax every constraint by a common scalar r and minimise r
    n = z0.size
    aug = copy.copy(red)
    ones = np.ones((red.Aa.shape[0], 1))
    aug.Aa = np.vstack([np.hstack([red.Aa, ones]), np.append(np.zeros(n), 1.0)])
    aug.ba = np.append(red.ba, 1.0)  # r >= -1 keeps the phase bounded
    # a wide ball around the start keeps free directions bounded
    radius = 1e3 * (1.0 + float(np.max(np.abs(z0), initial=0.0)))
    A_ball = np.hstack([np.eye(n), np.zeros((n, 1))])
    aug.socs = [(A_ball, -z0, np.zeros(n + 1), radius, -2.0 * A_ball.T @ A_ball)]
    for A, b, c, d, _ in red.socs:
        A2 = np.hstack([A, np.zeros((A.shape[0], 1))])
        c2 = np.append(c, 1.0)
        aug.socs.append((A2, b, c2, d, 2.0 * np.outer(c2, c2) - 2.0 * A2.T @ A2))
    if red.G.shape[0]:
        aug.G = np.hstack([red.G, np.zeros((red.G.shape[0], 1))])
        scales = np.array([con.scale for con in program.log])
        aug.F = np.hstack([red.F, (1.0 / scales)[:, None]])
    else:
        aug.G = aug.F = np.zeros((0, n + 1))
    aug.barrier_param = red.barrier_param + 3
    r0 = max(0.0, -_log_aware_slack(program, red, z0)) + 1.0
    w0 = np.append(z0, r0)
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    margin = 1e-4

    def stop(w):
        return w[-1] < -margin

    w, status, _, steps = _barrier_core(aug, w0, cost, tol, max_iter, stop=stop)
    z = w[:-1]
    if w[-1] < 0 and red.slack_min(z) > 0 and math.isfinite(red.value(z)):
        return True, red.full(z)
    return False, float(w[-1])


def _log_aware_slack(program: ConvexProgram, red: _Reduced, z: np.ndarray) -> float:
    """Smallest slack with log constraints measured in their unscaled form."""
    vals = list(red.Aa @ z + red.ba)
    for A, b, c, d, _ in red.socs:
        vals.append(c @ z + d - np.linalg.norm(A @ z + b))
    if red.G.shape[0]:
        scales = np.array([con.scale for con in program.log])
        vals.extend(scales * (np.log(red.G @ z + red.g0) + red.F @ z + red.f0))
    return min(vals) if vals else math.inf


def solve(program: ConvexProgram, tol: float = 1e-7, max_iter: int = 200,
          x0: np.ndarray | None = None) -> Solution:
    """Maximize the program's objective.

    ``x0`` is an optional starting point; when it is not strictly feasible a
    phase-one problem is solved first. The reported ``kkt_residual`` is the
    barrier duality-gap bound ``m / t`` at the returned point.
    """
    program.validate()
    try:
        feasible, point = feasibility_phase(program, x0, tol=tol, max_iter=max_iter)
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        st = SolveStatus(NUMERICAL_FAILURE, math.nan, math.inf, message=f"phase one: {exc}")
        return Solution(st, program.zeros(), {})
    if not feasible:
        st = SolveStatus(INFEASIBLE, math.nan, math.inf, message=f"minimal relaxation {point:.3g}")
        return Solution(st, program.zeros(), {})
    red = _Reduced(program)
    try:
        with np.errstate(all="ignore"):
            z, status, gap, steps = _barrier_core(red, point[red.free], red.c, tol, max_iter)
    except (np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        st = SolveStatus(NUMERICAL_FAILURE, math.nan, math.inf, message=str(exc))
        return Solution(st, point, program.values(point))
    x = red.full(z)
    obj = float(program.objective @ x)
    if status == OPTIMAL and program.max_violation(x) > tol:
        status = NUMERICAL_FAILURE
    st = SolveStatus(status, obj, gap, steps)
    return Solution(st, x, program.values(x))
