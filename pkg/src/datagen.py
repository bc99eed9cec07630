"""
Synthetic operating points: every commitment set, every power-level vector on
the per-unit grids, filtered by the generation band, the N-1 reserve rule and
the post-outage RoCoF inertia floor, then the cheapest `keep_per_level` points
per thermal generation level.

Each commitment set is enumerated unit by unit (index order) keeping only the
cheapest `keep_per_level` partial vectors per exact partial sum; that prefix
truncation cannot drop a point that belongs to a level's final cut. Partial sums
that can no longer reach the band are pruned with the remaining units' bounds.
"""
import logging
import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import ConfigError, DatasetError
from src.island import Fleet, GeneratorSpec, StudyParams, fleet_arrays

logger = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class OperatingPoint:
    point_id: int
    levels: Tuple[float, ...]
    u: Tuple[int, ...]
    total_gen: float
    total_reserve: float
    total_inertia: float
    cost: float


# ---------- grids ----------
def enumerate_levels(spec: GeneratorSpec, step: float) -> List[float]:
    if step <= 0:
        raise ConfigError(f"power step must be > 0 (got {step})")
    if spec.p_min > spec.p_max:
        raise ConfigError(f"unit {spec.id}: p_min={spec.p_min} > p_max={spec.p_max}")
    n = int(math.floor((spec.p_max - spec.p_min) / step + _EPS))
    grid = [round(spec.p_min + k * step, 9) for k in range(n + 1)]
    if abs(grid[-1] - spec.p_max) > _EPS:
        grid.append(spec.p_max)
    else:
        grid[-1] = spec.p_max
    return [g for g in grid if g > 0]


def _top_k(keys: np.ndarray, costs: np.ndarray, levels: np.ndarray, k: Optional[int]) -> np.ndarray:
    """Indices ordered by (key, cost, levels), at most k per key."""
    cols = tuple(levels[:, j] for j in reversed(range(levels.shape[1])))
    order = np.lexsort(cols + (costs, keys))
    if k is None or len(order) == 0:
        return order
    ks = keys[order]
    idx = np.arange(len(order))
    change = np.r_[True, ks[1:] != ks[:-1]]
    starts = np.maximum.accumulate(np.where(change, idx, 0))
    return order[idx - starts < k]


def _level_key(gen: np.ndarray, step: float) -> np.ndarray:
    return np.round(gen / step).astype(np.int64)


# ---------- per commitment set ----------
def _points_for_set(mask: int, fleet: Fleet, grids: List[np.ndarray], params: StudyParams,
                    keep: Optional[int]) -> Tuple[np.ndarray, np.ndarray, str]:
    n_units = fleet.size
    members = [i for i in range(n_units) if mask >> i & 1]
    empty = (np.zeros((0, n_units)), np.zeros(0))

    cap = float(sum(fleet.p_max[i] for i in members))
    if params.reserve_rule == "all":
        largest = float(fleet.p_max.max())
    else:
        largest = float(max(fleet.p_max[i] for i in members))
    g_lo, g_hi = params.gen_floor, min(params.gen_ceiling, cap - largest)
    if g_hi < g_lo - _EPS:
        return empty + ("band_reserve",)

    h_set = float(sum(fleet.hm[i] for i in members))
    member_grids = []
    for i in members:
        g = grids[i]
        if math.isfinite(params.rocof_crit):
            cap_rocof = 2.0 * params.rocof_crit * (h_set - fleet.hm[i]) / params.f0
            g = g[g <= cap_rocof + _EPS]
        if len(g) == 0:
            return empty + ("rocof",)
        member_grids.append(g)

    rem_min = np.r_[np.cumsum([g.min() for g in member_grids][::-1])[::-1], 0.0]
    rem_max = np.r_[np.cumsum([g.max() for g in member_grids][::-1])[::-1], 0.0]
    if rem_min[0] > g_hi + _EPS or rem_max[0] < g_lo - _EPS:
        return empty + ("band_reserve",)

    c2, c1, c0 = fleet.cost_quad[:, 0], fleet.cost_quad[:, 1], fleet.cost_quad[:, 2]
    sums, costs, levels = np.zeros(1), np.zeros(1), np.zeros((1, 0))
    for j, (i, g) in enumerate(zip(members, member_grids)):
        unit_cost = c2[i] * g * g + c1[i] * g + c0[i]
        n_states, n_levels = len(sums), len(g)
        sums = (sums[:, None] + g[None, :]).ravel()
        costs = (costs[:, None] + unit_cost[None, :]).ravel()
        levels = np.hstack([np.repeat(levels, n_levels, axis=0), np.tile(g, n_states)[:, None]])
        alive = (sums + rem_min[j + 1] <= g_hi + _EPS) & (sums + rem_max[j + 1] >= g_lo - _EPS)
        sums, costs, levels = sums[alive], costs[alive], levels[alive]
        if len(sums) == 0:
            return empty + ("band_reserve",)
        if keep is not None:
            sel = _top_k(np.round(sums * 1e6).astype(np.int64), costs, levels, keep)
            sums, costs, levels = sums[sel], costs[sel], levels[sel]

    full = np.zeros((len(sums), n_units))
    full[:, members] = levels
    online = np.zeros(n_units)
    online[members] = 1.0
    costs = fleet.cost(full, online)
    sel = _top_k(_level_key(full.sum(axis=1), params.power_step), costs, full, keep)
    return full[sel], costs[sel], "ok"


def _merge(pool, new, step: float, keep: Optional[int]):
    levels = np.vstack([pool[0], new[0]])
    costs = np.r_[pool[1], new[1]]
    sel = _top_k(_level_key(levels.sum(axis=1), step), costs, levels, keep)
    return levels[sel], costs[sel]


def _generate_masks(args):
    masks, specs, params, keep = args
    fleet = fleet_arrays(specs, params)
    grids = [np.array(enumerate_levels(g, params.power_step)) for g in specs]
    pool = (np.zeros((0, fleet.size)), np.zeros(0))
    reasons: Counter = Counter()
    for mask in masks:
        levels, costs, why = _points_for_set(mask, fleet, grids, params, keep)
        reasons[why] += 1
        if len(costs):
            pool = _merge(pool, (levels, costs), params.power_step, keep)
    return pool, dict(reasons)


def generate(specs: List[GeneratorSpec], params: StudyParams, jobs: int = 1,
             keep: Optional[int] = -1) -> List[OperatingPoint]:
    """Operating points ordered by (generation level, cost, levels).

    `keep=None` returns every feasible point (no per-level truncation);
    the default uses `params.keep_per_level`.
    """
    if not specs:
        raise DatasetError("no generating units")
    if keep == -1:
        keep = params.keep_per_level
    started = time.time()
    n_units = len(specs)
    masks = list(range(1, 1 << n_units))
    jobs = max(1, min(jobs, len(masks)))
    parts = [masks[w::jobs] for w in range(jobs)]
    work = [(part, specs, params, keep) for part in parts]
    logger.info(f"Enumerating {len(masks)} commitment sets over {n_units} units ({jobs} worker(s))")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_generate_masks, work))
    else:
        results = [_generate_masks(w) for w in work]

    merged = (np.zeros((0, n_units)), np.zeros(0))
    reasons: Counter = Counter()
    for part_pool, part_reasons in results:
        merged = _merge(merged, part_pool, params.power_step, keep)
        reasons.update(part_reasons)

    levels, costs = merged
    if len(costs) == 0:
        raise DatasetError(
            f"no feasible operating point: {reasons.get('band_reserve', 0)} commitment set(s) fail the "
            f"generation band [{params.gen_floor}, {params.gen_ceiling}] MW with the reserve rule "
            f"'{params.reserve_rule}', {reasons.get('rocof', 0)} fail the RoCoF limit "
            f"{params.rocof_crit} Hz/s"
        )
    points = _to_points(levels, costs, specs, params)
    logger.info(f"Generated {len(points)} operating points "
                f"({reasons.get('ok', 0)} feasible commitment sets) in {time.time() - started:.1f}s")
    return points


def _to_points(levels: np.ndarray, costs: np.ndarray, specs: List[GeneratorSpec],
               params: StudyParams) -> List[OperatingPoint]:
    fleet = fleet_arrays(specs, params)
    online = levels > 0
    gen = levels.sum(axis=1)
    reserve = np.where(online, fleet.p_max[None, :] - levels, 0.0).sum(axis=1)
    inertia = np.where(online, fleet.hm[None, :], 0.0).sum(axis=1)
    return [
        OperatingPoint(
            point_id=k,
            levels=tuple(float(x) for x in levels[k]),
            u=tuple(int(x) for x in online[k]),
            total_gen=float(gen[k]),
            total_reserve=float(reserve[k]),
            total_inertia=float(inertia[k]),
            cost=float(costs[k]),
        )
        for k in range(len(costs))
    ]


# ---------- independent checks ----------
def feasibility_violations(levels: Sequence[float], specs: List[GeneratorSpec],
                           params: StudyParams) -> List[str]:
    """Reasons a level vector is not a valid operating point (empty list if valid)."""
    problems = []
    online = [g for g, p in zip(specs, levels) if p > 0]
    for g, p in zip(specs, levels):
        if p > 0 and not (g.p_min - _EPS <= p <= g.p_max + _EPS):
            problems.append(f"unit {g.id}: level {p} outside [{g.p_min}, {g.p_max}]")
    if not online:
        return problems + ["no unit online"]
    gen = sum(levels)
    if not (params.gen_floor - _EPS <= gen <= params.gen_ceiling + _EPS):
        problems.append(f"generation {gen} outside band")
    reserve = sum(g.p_max - p for g, p in zip(specs, levels) if p > 0)
    pool = online if params.reserve_rule == "online" else specs
    if reserve < max(g.p_max for g in pool) - _EPS:
        problems.append(f"reserve {reserve} below largest unit")
    h_total = sum(g.hm for g in online)
    for g, p in zip(specs, levels):
        if p > 0 and p * params.f0 > 2.0 * params.rocof_crit * (h_total - g.hm) + _EPS:
            problems.append(f"loss of unit {g.id} breaks the RoCoF limit")
    return problems


# ---------- CSV ----------
def save_dataset(points: List[OperatingPoint], specs: List[GeneratorSpec], csv_path) -> None:
    df = pd.DataFrame({
        "point_id": [p.point_id for p in points],
        "gen_mw": [p.total_gen for p in points],
        "cost_eur": [p.cost for p in points],
    })
    for i, g in enumerate(specs):
        df[f"p_{g.id}"] = [p.levels[i] for p in points]
    df.to_csv(csv_path, index=False, float_format="%.10g")
    logger.info(f"Saved {len(points)} operating points to {csv_path}")


def load_dataset(csv_path, specs: List[GeneratorSpec], params: StudyParams) -> List[OperatingPoint]:
    df = pd.read_csv(csv_path)
    cols = [f"p_{g.id}" for g in specs]
    missing = [c for c in ["point_id", "gen_mw", "cost_eur"] + cols if c not in df.columns]
    if missing:
        raise DatasetError(f"{csv_path}: missing column(s) {', '.join(missing)}")
    if df.empty:
        raise DatasetError(f"{csv_path}: no operating points")
    points = _to_points(df[cols].to_numpy(dtype=float), df["cost_eur"].to_numpy(dtype=float), specs, params)
    ids = df["point_id"].to_numpy()
    return [replace(p, point_id=int(ids[k])) for k, p in enumerate(points)]


def level_counts(points: List[OperatingPoint], step: float) -> Dict[float, int]:
    keys = _level_key(np.array([p.total_gen for p in points]), step)
    return {float(k * step): int(n) for k, n in zip(*np.unique(keys, return_counts=True))}
