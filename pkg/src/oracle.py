"""
Reference solver for tiny instances (at most 8 hours, 3 units).

Every commitment matrix consistent with the logic and min up/down rows is
considered. Each candidate gets a lower bound: its startup costs plus, per
hour, the cheapest dispatch of that hour alone with the hour's frequency rows
and the commitment fixed. Candidates are then solved in order of that bound
(full model, u/v/w fixed) until the bound reaches the best objective found,
which makes the result exact.

With the commitment fixed only the analytical variant keeps integers: its
breakpoint selectors. Those are not handed to a MIP solver. Each fixed
commitment is solved as an LP over the λ weights and branched on the z1
weights of a violated nadir row until every row holds with adjacent weights
(P and z2 enter the rows with a negative sign, so any λ mix of theirs is
already no better than the adjacent one).
"""
import itertools
import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from src.errors import ModelBuildError
from src.fcuc import (INFEASIBLE, OPTIMAL, FcucModel, NadirVariant, UcSchedule, bname, build, lname,
                      schedule_from_values, vname)
from src.island import DemandSeries, GeneratorSpec, StudyParams
from src.scipy_solver import lp_arrays

logger = logging.getLogger(__name__)

MAX_HOURS = 8
MAX_UNITS = 3
_SUPPORT = 1e-9


@dataclass
class OracleResult:
    status: str
    objective: Optional[float]
    schedule: Optional[UcSchedule]
    candidates: int
    solves: int
    wall_time: float


# ---------- fixed-commitment LP with λ branching ----------
class _Block(NamedTuple):
    x: int
    lam: np.ndarray
    gam: np.ndarray     # gam[s] selects the segment between grid points s and s + 1
    grid: np.ndarray


class _NadirRow(NamedTuple):
    cols: np.ndarray
    coefs: np.ndarray
    rhs: float
    gate: int           # column of the lost unit's u
    z1: _Block


def _nadir_rows(model: FcucModel) -> Tuple[List[_Block], List[_NadirRow]]:
    if not model.breakpoints:
        return [], []
    J = model.variant.breakpoints
    blocks, rows = [], []
    for t in range(1, model.horizon + 1):
        for l in range(1, len(model.specs) + 1):
            grids = model.breakpoints[l - 1].grids
            own = {}
            for block, x in (("P", vname("p", t, l)), ("z1", lname("z1", t, l)), ("z2", lname("z2", t, l))):
                own[block] = _Block(
                    model.var(x),
                    np.array([model.var(bname("lam", block, t, l, j)) for j in range(J + 1)]),
                    np.array([model.var(bname("gam", block, t, l, j)) for j in range(1, J + 1)]),
                    np.asarray(grids[block], dtype=float),
                )
            blocks.extend(own.values())
            coefs, _, rhs = model.row(lname("nadir", t, l))
            rows.append(_NadirRow(np.array([model.var(n) for n in coefs]), np.array(list(coefs.values())),
                                  rhs, model.var(vname("u", t, l)), own["z1"]))
    return blocks, rows


def _adjacent(block: _Block, v: float, x: np.ndarray) -> None:
    """Write the two-point λ weights of v (and its segment selector) into x."""
    a = block.grid
    s = int(np.clip(np.searchsorted(a, v, side="right"), 1, len(a) - 1))
    w = float(np.clip((v - a[s - 1]) / (a[s] - a[s - 1]), 0.0, 1.0))
    x[block.lam] = 0.0
    x[block.lam[s - 1]] = 1.0 - w
    x[block.lam[s]] = w
    x[block.gam] = 0.0
    x[block.gam[s - 1]] = 1.0


def _restrict(ub: np.ndarray, block: _Block, lo: int, hi: int) -> None:
    """Only grid points lo..hi (and the segments between them) may carry weight."""
    ub[block.lam[:lo]] = 0.0
    ub[block.lam[hi + 1:]] = 0.0
    ub[block.gam[:lo]] = 0.0
    ub[block.gam[hi:]] = 0.0


class FixedCommitment:
    """One model in LP form; solves it exactly for given variable bounds."""

    def __init__(self, model: FcucModel):
        self.model = model
        self.cost = model.cost_vector()
        self.a_ub, self.b_ub, self.a_eq, self.b_eq = lp_arrays(model)
        self.blocks, self.rows = _nadir_rows(model)
        self.lps = 0

    def _lp(self, lb: np.ndarray, ub: np.ndarray) -> Optional[np.ndarray]:
        self.lps += 1
        res = linprog(self.cost, A_ub=self.a_ub, b_ub=self.b_ub, A_eq=self.a_eq, b_eq=self.b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs")
        if res.status != 0:
            if res.status != 2:
                logger.debug(f"Oracle LP: {res.message}")
            return None
        return np.asarray(res.x, dtype=float)

    def _worst_row(self, x: np.ndarray) -> Optional[int]:
        worst, where = 0.0, None
        for k, row in enumerate(self.rows):
            terms = row.coefs * x[row.cols]
            gap = row.rhs - float(terms.sum())
            scale = 1.0 + float(np.abs(terms[row.cols != row.gate]).sum())
            if gap > 1e-7 * scale and gap > worst:
                worst, where = gap, k
        return where

    def solve(self, lb: np.ndarray, ub: np.ndarray,
              cutoff: float = math.inf) -> Tuple[Optional[float], Optional[np.ndarray]]:
        """Cheapest point below cutoff, or (None, None)."""
        best_obj, best_x = cutoff, None
        stack: List[Dict[int, Tuple[int, int]]] = [{}]
        while stack:
            ranges = stack.pop()
            node_ub = ub.copy()
            for k, (lo, hi) in ranges.items():
                _restrict(node_ub, self.rows[k].z1, lo, hi)
            x = self._lp(lb, node_ub)
            if x is None:
                continue
            obj = self.model.objective_value(x)
            if math.isfinite(best_obj) and obj >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
                continue
            snapped = x.copy()
            for block in self.blocks:
                _adjacent(block, x[block.x], snapped)
            k = self._worst_row(snapped)
            z1 = self.rows[k].z1 if k is not None else None
            support = np.flatnonzero(x[z1.lam] > _SUPPORT) if z1 is not None else np.zeros(0, dtype=int)
            if k is None or support[-1] - support[0] < 2:
                # every row holds with adjacent weights, or the z1 mix is adjacent and the gap is rounding
                best_obj, best_x = self.model.objective_value(snapped), snapped
                continue
            lo, hi = ranges.get(k, (0, len(z1.grid) - 1))
            mid = int(support[0] + support[-1]) // 2
            left, right = {**ranges, k: (lo, mid)}, {**ranges, k: (mid, hi)}
            stack.extend([right, left] if x[z1.x] <= z1.grid[mid] else [left, right])
        if best_x is None:
            return None, None
        return best_obj, best_x


# ---------- commitment enumeration ----------
def _hour_series(series: DemandSeries, t: int) -> DemandSeries:
    s = slice(t, t + 1)
    return DemandSeries(series.hour[s], series.demand[s], series.wind_avail[s], series.solar_avail[s])


def _hour_costs(specs, series, params, variant, horizon) -> List[Dict[Tuple[int, ...], float]]:
    """Cheapest single-hour dispatch for every commitment pattern (infeasible ones left out)."""
    patterns = list(itertools.product((0, 1), repeat=len(specs)))
    out = []
    for t in range(horizon):
        costs: Dict[Tuple[int, ...], float] = {}
        demand = float(series.demand[t])
        for pat in patterns:
            on = [g for g, b in zip(specs, pat) if b]
            if sum(g.p_min for g in on) > demand + 1e-9:
                continue
            if sum(g.p_max for g in on) + series.wind_avail[t] + series.solar_avail[t] < demand - 1e-9:
                continue
            relaxed = [replace(g, ramp_up=10.0 * g.p_max + 1.0, ramp_down=10.0 * g.p_max + 1.0,
                               min_up=1, min_down=1, startup_cost=0.0, initial_on=bool(b),
                               initial_p=0.0) for g, b in zip(specs, pat)]
            try:
                m = build(relaxed, _hour_series(series, t), params, variant, 1)
            except ModelBuildError:
                continue
            for i, b in enumerate(pat, start=1):
                m.fix(vname("u", 1, i), b)
                m.fix(vname("v", 1, i), 0)
                m.fix(vname("w", 1, i), 0)
            obj, _ = FixedCommitment(m).solve(np.array(m.lb), np.array(m.ub))
            if obj is not None:
                costs[pat] = obj
        out.append(costs)
    return out


def _consistent(specs: List[GeneratorSpec], u: List[Tuple[int, ...]]) -> bool:
    """Min up/down rows of the latest hour, given the commitment history u[0..t]."""
    t = len(u) - 1
    for i, g in enumerate(specs):
        def start(s):
            prev = u[s - 1][i] if s > 0 else int(g.initial_on)
            return max(0, u[s][i] - prev)

        def stop(s):
            prev = u[s - 1][i] if s > 0 else int(g.initial_on)
            return max(0, prev - u[s][i])

        if sum(start(s) for s in range(max(0, t - g.min_up + 1), t + 1)) > u[t][i]:
            return False
        if sum(stop(s) for s in range(max(0, t - g.min_down + 1), t + 1)) > 1 - u[t][i]:
            return False
    return True


def _startups(specs: List[GeneratorSpec], u: List[Tuple[int, ...]]) -> float:
    total = 0.0
    for i, g in enumerate(specs):
        prev = int(g.initial_on)
        for row in u:
            if row[i] > prev:
                total += g.startup_cost
            prev = row[i]
    return total


def _candidates(specs, hour_costs) -> List[Tuple[float, List[Tuple[int, ...]]]]:
    out = []

    def dfs(u, bound):
        t = len(u)
        if t == len(hour_costs):
            out.append((bound + _startups(specs, u), list(u)))
            return
        for pat in sorted(hour_costs[t]):
            u.append(pat)
            if _consistent(specs, u):
                dfs(u, bound + hour_costs[t][pat])
            u.pop()

    dfs([], 0.0)
    out.sort(key=lambda c: (c[0], c[1]))
    return out


def _fix_commitment(m: FcucModel, specs, u: List[Tuple[int, ...]]) -> None:
    for t, row in enumerate(u, start=1):
        for i, g in enumerate(specs, start=1):
            prev = u[t - 2][i - 1] if t > 1 else int(g.initial_on)
            m.fix(vname("u", t, i), row[i - 1])
            m.fix(vname("v", t, i), max(0, row[i - 1] - prev))
            m.fix(vname("w", t, i), max(0, prev - row[i - 1]))


def oracle_solve(specs: List[GeneratorSpec], series: DemandSeries, params: StudyParams,
                 variant: NadirVariant = NadirVariant(), horizon: Optional[int] = None) -> OracleResult:
    horizon = len(series) if horizon is None else horizon
    if horizon > MAX_HOURS or len(specs) > MAX_UNITS:
        raise ModelBuildError(f"oracle handles at most {MAX_HOURS} hours and {MAX_UNITS} units "
                              f"(got {horizon} h, {len(specs)} units)")
    started = time.time()
    model = build(specs, series, params, variant, horizon)
    hour_costs = _hour_costs(specs, series, params, variant, horizon)
    candidates = _candidates(specs, hour_costs)
    logger.info(f"Oracle: {len(candidates)} commitment matrices over {horizon} h x {len(specs)} units")

    fixed = FixedCommitment(model)
    best_obj, best_x = math.inf, None
    solves = 0
    for bound, u in candidates:
        if bound >= best_obj - 1e-9 * max(1.0, abs(best_obj)):
            break
        _fix_commitment(model, specs, u)
        obj, x = fixed.solve(np.array(model.lb), np.array(model.ub), cutoff=best_obj)
        solves += 1
        if obj is not None and obj < best_obj:
            best_obj, best_x = obj, x

    wall = time.time() - started
    if best_x is None:
        logger.info(f"Oracle: infeasible after {solves} solves ({fixed.lps} LPs), {wall:.1f}s")
        return OracleResult(INFEASIBLE, None, None, len(candidates), solves, wall)
    schedule = schedule_from_values(model, best_x, OPTIMAL, wall)
    logger.info(f"Oracle: objective {best_obj:.6f} after {solves} solves ({fixed.lps} LPs), {wall:.1f}s")
    return OracleResult(OPTIMAL, best_obj, schedule, len(candidates), solves, wall)
