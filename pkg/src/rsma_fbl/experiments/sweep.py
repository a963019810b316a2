"""Blocklength sweeps, CSV persistence and ensemble averaging."""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from .. import convex
from ..fbl_rate import dispersion_penalty, evaluate_solution, fbl_rate
from ..model import PowerBudget
from ..schemes import NOMA, RSMA, SDMA, SchemeKind
from ..sca import sca_solve
from .config import ScenarioConfig

log = logging.getLogger(__name__)

# status values that mean the solver itself broke down rather than the QoS being unreachable
FAILURE_STATUSES = (convex.NUMERICAL_FAILURE,)

# reserved for rows of an externally computed upper bound (e.g. dirty paper coding) added by hand
BOUND = "dpc"
SCHEME_LABELS = (RSMA, SDMA, NOMA, BOUND)


@dataclass
class SweepRecord:
    scenario_id: str
    channel_draw_index: int
    blocklength: int
    scheme: str
    status: str
    sum_rate_objective: float
    sum_rate_evaluated: float
    per_user_rates: tuple
    common_power: float
    private_powers: tuple
    dispersion_penalty_common: float
    sca_iterations: int
    wall_time: float

    @property
    def key(self):
        return (self.scenario_id, self.channel_draw_index, self.blocklength, self.scheme)


@dataclass
class SummaryRow:
    blocklength: int
    scheme: str
    mean: float
    std: float
    count: int


RECORD_COLUMNS = [f.name for f in fields(SweepRecord)]
SUMMARY_COLUMNS = [f.name for f in fields(SummaryRow)]
TIMING_COLUMNS = ("wall_time",)


def _empty_record(cfg, draw, blocklength, scheme, status, iters, wall) -> SweepRecord:
    K = cfg.num_users
    nan = math.nan
    return SweepRecord(cfg.scenario_id, draw, blocklength, scheme, status, nan, nan,
                       (nan,) * K, nan, (nan,) * K, nan, iters, wall)


def _record(cfg, draw, blocklength, label, sol, channels, params, budget, wall) -> SweepRecord:
    if sol is None or not sol.usable:
        status = convex.INFEASIBLE if sol is None else sol.status
        return _empty_record(cfg, draw, blocklength, label, status, 0 if sol is None else sol.iterations, wall)
    br = evaluate_solution(channels, sol.precoders, sol.common_split, params, budget.total_power)
    # S(V_c) of the user whose common rate is the bottleneck
    rc = fbl_rate(br.common_sinrs, params)
    k = int(np.argmin(rc))
    penalty = dispersion_penalty(br.common_sinrs[k], params)
    return SweepRecord(
        scenario_id=cfg.scenario_id,
        channel_draw_index=draw,
        blocklength=blocklength,
        scheme=label,
        status=sol.status,
        sum_rate_objective=float(sol.objective),
        sum_rate_evaluated=br.sum_rate,
        per_user_rates=tuple(float(r) for r in br.total_rates),
        common_power=sol.precoders.common_power,
        private_powers=tuple(float(p) for p in sol.precoders.private_powers),
        dispersion_penalty_common=float(penalty),
        sca_iterations=sol.iterations,
        wall_time=wall,
    )


def _candidates(cfg: ScenarioConfig) -> list[SchemeKind]:
    out = [SchemeKind.rsma()]
    if SDMA in cfg.schemes:
        out.append(SchemeKind.sdma())
    if NOMA in cfg.schemes:
        out += [SchemeKind.noma(0, 1), SchemeKind.noma(1, 0)]
    return out


def run_point(cfg: ScenarioConfig, draw: int, blocklength: int) -> list[SweepRecord]:
    """Selector record (labelled ``rsma``) plus one baseline record per pure scheme."""
    channels = cfg.channel_spec.draw(draw, cfg.base_seed)
    budget = PowerBudget.from_snr_db(cfg.snr_db)
    params = cfg.fbl_params(blocklength)
    qos = cfg.qos_for(blocklength)
    times, per = {}, {}
    for scheme in _candidates(cfg):
        t0 = time.perf_counter()
        per[scheme] = sca_solve(channels, budget, params[scheme.kind], qos, scheme, cfg.solver_opts)
        times[scheme] = time.perf_counter() - t0
    win, sel = _select(per)
    log.debug("draw %d l=%d: winner %s", draw, blocklength, win)

    out = []
    sel_params = params[win.kind] if win is not None else params[RSMA]
    if win is None:
        bad = [s.status for s in per.values() if s.status in FAILURE_STATUSES]
        status = bad[0] if bad else convex.INFEASIBLE
        out.append(_empty_record(cfg, draw, blocklength, RSMA, status, 0, sum(times.values())))
    else:
        out.append(_record(cfg, draw, blocklength, RSMA, sel, channels, sel_params, budget,
                           sum(times.values())))
    if SDMA in cfg.schemes:
        s = SchemeKind.sdma()
        out.append(_record(cfg, draw, blocklength, SDMA, per[s], channels, params[SDMA], budget, times[s]))
    if NOMA in cfg.schemes:
        orders = [s for s in per if s.kind == NOMA]
        best = _select({s: per[s] for s in orders})
        wall = sum(times[s] for s in orders)
        if best[0] is None:
            bad = [per[s].status for s in orders if per[s].status in FAILURE_STATUSES]
            out.append(_empty_record(cfg, draw, blocklength, NOMA, bad[0] if bad else convex.INFEASIBLE, 0, wall))
        else:
            out.append(_record(cfg, draw, blocklength, NOMA, best[1], channels, params[NOMA], budget, wall))
    return out


def _select(per: dict):
    win, sel = None, None
    for scheme, sol in per.items():
        if sol.usable and (sel is None or sol.objective > sel.objective):
            win, sel = scheme, sol
    return win, sel


def _point_job(args):
    cfg, draw, blocklength = args
    return run_point(cfg, draw, blocklength)


def run_sweep(config: ScenarioConfig, jobs: int = 1, progress=None) -> list[SweepRecord]:
    """Run every (draw, blocklength) point and return records sorted by
    (scenario, draw, blocklength, scheme).

    ``jobs > 1`` solves grid points in worker processes; the output does not
    depend on the number of workers.
    """
    grid = [(config, d, b) for d in range(config.num_draws) for b in config.blocklengths]
    records = []
    if jobs > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, recs in enumerate(pool.map(_point_job, grid)):
                records.extend(recs)
                if progress:
                    progress(i + 1, len(grid))
    else:
        for i, item in enumerate(grid):
            records.extend(_point_job(item))
            if progress:
                progress(i + 1, len(grid))
    records.sort(key=lambda r: r.key)
    return records


def aggregate(records) -> list[SummaryRow]:
    """Mean, population standard deviation and count of ``sum_rate_evaluated``
    per (blocklength, scheme), over records with status ``optimal``."""
    groups = {}
    for r in records:
        groups.setdefault((r.blocklength, r.scheme), [])
        if r.status == convex.OPTIMAL:
            groups[(r.blocklength, r.scheme)].append(r.sum_rate_evaluated)
    rows = []
    for (b, s), vals in sorted(groups.items()):
        if vals:
            rows.append(SummaryRow(b, s, float(np.mean(vals)), float(np.std(vals)), len(vals)))
        else:
            rows.append(SummaryRow(b, s, math.nan, math.nan, 0))
    return rows


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ";".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return "%.9g" % v
    return str(v)


def write_csv(rows, path, columns: list[str] | None = None) -> None:
    """Write records or summary rows to a path or open text stream.

    An empty list writes the record header only.
    """
    rows = list(rows)
    if columns is None:
        columns = SUMMARY_COLUMNS if rows and isinstance(rows[0], SummaryRow) else RECORD_COLUMNS
    if hasattr(path, "write"):
        _write_rows(path, columns, rows)
        return
    with Path(path).open("w", newline="") as fh:
        _write_rows(fh, columns, rows)


def _write_rows(fh, columns, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in astuple(r)])


def _floats(s: str) -> tuple:
    return tuple(float(x) for x in s.split(";")) if s else ()


_PARSERS = {
    "channel_draw_index": int, "blocklength": int, "sca_iterations": int, "count": int,
    "sum_rate_objective": float, "sum_rate_evaluated": float, "common_power": float,
    "dispersion_penalty_common": float, "wall_time": float, "mean": float, "std": float,
    "per_user_rates": _floats, "private_powers": _floats,
}


def read_csv(path) -> list:
    """Read a file written by :func:`write_csv` back into records or summary rows."""
    with Path(path).open(newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header == RECORD_COLUMNS:
            cls = SweepRecord
        elif header == SUMMARY_COLUMNS:
            cls = SummaryRow
        else:
            raise ValueError(f"{path}: unrecognised header {header}")
        out = []
        for lineno, row in enumerate(rd, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = {k: _PARSERS.get(k, str)(v) for k, v in zip(header, row)}
            if vals["scheme"] not in SCHEME_LABELS:
                raise ValueError(f"{path}:{lineno}: unknown scheme {vals['scheme']!r}")
            out.append(cls(**vals))
    return out


def has_failures(records) -> bool:
    return any(r.status in FAILURE_STATUSES for r in records)
