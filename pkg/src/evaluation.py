import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd

from src.errors import EvaluationError
from src.fcuc import ANALYTICAL, SOLVED, UcSchedule
from src.island import DemandSeries, GeneratorSpec, StudyParams, fleet_arrays
from src.sfr import GOVERNOR, ScenarioBatch, implied_nadir, simulate_metrics

logger = logging.getLogger(__name__)

NADIR_BINS = np.linspace(-6.0, 0.0, 25)      # 0.25 Hz
UFLS_BINS = np.linspace(0.0, 10.0, 21)       # 0.5 MW
RESIDUAL_BINS = np.linspace(-3.0, 3.0, 25)   # 0.25 Hz
OUTAGE_COLUMNS = ["t", "lost_unit", "nadir_hz", "ufls_mw", "implied_nadir_hz"]
COMPARISON_COLUMNS = ["variant", "operation_cost", "ufls_per_outage", "mean_nadir", "uc_walltime",
                      "outage_count"]


@dataclass
class EvalReport:
    variant: str
    operation_cost: float
    ufls_per_outage: float
    mean_nadir: float
    outage_count: int
    excluded: int
    uc_walltime: float
    horizon: int
    outages: pd.DataFrame = field(repr=False)
    nadir_hist: pd.DataFrame = field(repr=False)
    ufls_hist: pd.DataFrame = field(repr=False)

    def summary(self) -> Dict[str, object]:
        return {
            "variant": self.variant,
            "operation_cost": self.operation_cost,
            "ufls_per_outage": self.ufls_per_outage,
            "mean_nadir": self.mean_nadir,
            "outage_count": self.outage_count,
            "excluded": self.excluded,
            "uc_walltime": self.uc_walltime,
            "horizon": self.horizon,
        }


def histogram(values: np.ndarray, edges: np.ndarray) -> pd.DataFrame:
    """Counts per bin; values outside the range land in the end bins."""
    clipped = np.clip(np.asarray(values, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(clipped, bins=edges)
    return pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})


def _mean(values: np.ndarray) -> float:
    return float(np.mean(values)) if len(values) else 0.0


def outage_scenarios(schedule: UcSchedule, specs: List[GeneratorSpec], series: DemandSeries,
                     params: StudyParams):
    """One scenario per (hour, committed unit with output) that leaves another unit online.

    Committed units at zero output and outages of a lone unit are counted in ``excluded``.
    """
    fleet = fleet_arrays(specs, params)
    damping_demand = series.damping_demand(params)
    keys, rows = [], []
    lone, idle = 0, 0
    for t in range(schedule.horizon):
        online = schedule.u[t] > 0.5
        for l in range(fleet.size):
            if not online[l]:
                continue
            if schedule.p[t, l] <= 0:
                idle += 1
                continue
            if online.sum() < 2:
                lone += 1
                continue
            keys.append((t + 1, int(fleet.ids[l])))
            rows.append((t, l))
    if lone:
        logger.warning(f"Excluded {lone} outage(s) that leave no unit online")
    if idle:
        logger.warning(f"Excluded {idle} outage(s) of committed units at zero output")
    excluded = lone + idle
    n = len(rows)
    tt = np.array([r[0] for r in rows], dtype=int)
    ll = np.array([r[1] for r in rows], dtype=int)
    survivors = (schedule.u[tt] > 0.5) if n else np.zeros((0, fleet.size), dtype=bool)
    if n:
        survivors[np.arange(n), ll] = False
    p = schedule.p[tt] if n else np.zeros((0, fleet.size))
    batch = ScenarioBatch(
        fleet=fleet,
        survivors=survivors,
        p=p,
        r=schedule.r[tt] if n else np.zeros((0, fleet.size)),
        p_lost=p[np.arange(n), ll] if n else np.zeros(0),
        demand=damping_demand[tt] if n else np.zeros(0),
        ufls=np.ones(n, dtype=bool),
    )
    return batch, keys, excluded


def evaluate(schedule: UcSchedule, specs: List[GeneratorSpec], series: DemandSeries, params: StudyParams,
             jobs: int = 1) -> EvalReport:
    if schedule.status not in SOLVED:
        raise EvaluationError(f"schedule status is {schedule.status}; nothing to evaluate")
    if schedule.unit_ids != [g.id for g in specs]:
        raise EvaluationError(f"schedule units {schedule.unit_ids} do not match the island")
    if schedule.horizon > len(series):
        raise EvaluationError(f"schedule covers {schedule.horizon} h but the series has {len(series)}")
    started = time.time()
    batch, keys, excluded = outage_scenarios(schedule, specs, series, params)
    if keys:
        res = simulate_metrics(batch, params, GOVERNOR, jobs=jobs)
        nadir, ufls = res.nadir_hz, res.ufls_mw
        implied = implied_nadir(batch.h_after, batch.r_after, batch.p_lost,
                                params.damping_d * batch.demand, params)
    else:
        nadir = ufls = implied = np.zeros(0)

    outages = pd.DataFrame({
        "t": [k[0] for k in keys],
        "lost_unit": [k[1] for k in keys],
        "nadir_hz": nadir,
        "ufls_mw": ufls,
        "implied_nadir_hz": implied,
    }, columns=OUTAGE_COLUMNS)
    report = report_from_outages(schedule.variant, schedule.objective, schedule.wall_time,
                                 schedule.horizon, excluded, outages)
    logger.info(f"Evaluated {report.outage_count} outages of the {schedule.variant} schedule: "
                f"UFLS/outage {report.ufls_per_outage:.4f} MW, mean nadir {report.mean_nadir:.4f} Hz "
                f"({time.time() - started:.1f}s)")
    return report


def report_from_outages(variant: str, operation_cost: float, uc_walltime: float, horizon: int,
                        excluded: int, outages: pd.DataFrame) -> EvalReport:
    nadir = outages["nadir_hz"].to_numpy(dtype=float)
    ufls = outages["ufls_mw"].to_numpy(dtype=float)
    return EvalReport(
        variant=variant,
        operation_cost=float(operation_cost),
        ufls_per_outage=_mean(ufls),
        mean_nadir=_mean(nadir),
        outage_count=len(outages),
        excluded=int(excluded),
        uc_walltime=float(uc_walltime),
        horizon=int(horizon),
        outages=outages,
        nadir_hist=histogram(nadir, NADIR_BINS),
        ufls_hist=histogram(ufls, UFLS_BINS),
    )


# ---------- files ----------
def save_report(report: EvalReport, out_dir) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    v = report.variant
    paths = [out_dir / f"report_{v}.csv", out_dir / f"hist_nadir_{v}.csv",
             out_dir / f"hist_ufls_{v}.csv", out_dir / f"summary_{v}.json"]
    report.outages.to_csv(paths[0], index=False, float_format="%.10g")
    report.nadir_hist.to_csv(paths[1], index=False, float_format="%.10g")
    report.ufls_hist.to_csv(paths[2], index=False, float_format="%.10g")
    paths[3].write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    logger.info(f"Saved {v} evaluation to {out_dir}")
    return paths


def load_report(out_dir, variant: str) -> EvalReport:
    out_dir = Path(out_dir)
    summary_path = out_dir / f"summary_{variant}.json"
    rows_path = out_dir / f"report_{variant}.csv"
    if not summary_path.exists() or not rows_path.exists():
        raise EvaluationError(f"no evaluation of variant {variant!r} in {out_dir}")
    s = json.loads(summary_path.read_text())
    outages = pd.read_csv(rows_path)
    missing = [c for c in OUTAGE_COLUMNS if c not in outages.columns]
    if missing:
        raise EvaluationError(f"{rows_path}: missing column(s) {', '.join(missing)}")
    return report_from_outages(variant, s["operation_cost"], s["uc_walltime"], s["horizon"],
                               s.get("excluded", 0), outages)


def compare(reports: List[EvalReport], out_dir) -> List[Path]:
    if len(reports) < 2:
        raise EvaluationError(f"need at least 2 reports to compare (got {len(reports)})")
    horizons = {r.horizon for r in reports}
    if len(horizons) > 1:
        raise EvaluationError(f"reports cover different horizons: {sorted(horizons)} h")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    table = pd.DataFrame([[getattr(r, c) for c in COMPARISON_COLUMNS] for r in reports],
                         columns=COMPARISON_COLUMNS)
    ref = reports[0]
    table["cost_delta"] = table["operation_cost"] - ref.operation_cost
    table["ufls_delta"] = table["ufls_per_outage"] - ref.ufls_per_outage
    table["nadir_delta"] = table["mean_nadir"] - ref.mean_nadir
    paths = [out_dir / "comparison.csv"]
    table.to_csv(paths[0], index=False, float_format="%.10g")

    for r in reports:
        if r.variant == ANALYTICAL:
            residual = nadir_residuals(r)
            paths.append(out_dir / f"hist_residual_{r.variant}.csv")
            histogram(residual, RESIDUAL_BINS).to_csv(paths[-1], index=False, float_format="%.10g")
            logger.info(f"Analytical nadir residual: mean {_mean(residual):+.4f} Hz over {len(residual)} outages")
    logger.info(f"Compared {len(reports)} variants: {', '.join(r.variant for r in reports)}")
    return paths


def nadir_residuals(report: EvalReport) -> np.ndarray:
    """Closed-form nadir minus simulated nadir, per outage (positive = drop underestimated)."""
    implied = report.outages["implied_nadir_hz"].to_numpy(dtype=float)
    simulated = report.outages["nadir_hz"].to_numpy(dtype=float)
    ok = np.isfinite(implied)
    return implied[ok] - simulated[ok]
