import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.datagen import OperatingPoint
from src.errors import DatasetError, SimulationError
from src.island import GeneratorSpec, StudyParams, fleet_arrays
from src.sfr import GOVERNOR, ScenarioBatch, simulate_metrics

logger = logging.getLogger(__name__)

FEATURES = ["h_after", "k_after", "p_lost", "r_after"]
LABELED_COLUMNS = ["point_id", "lost_unit"] + FEATURES + ["nadir_hz", "label"]


@dataclass(frozen=True)
class OutageSample:
    point_id: int
    lost_unit: int
    h_after: float
    k_after: float
    p_lost: float
    r_after: float
    nadir_hz: float
    label: int

    @property
    def features(self) -> Tuple[float, float, float, float]:
        return self.h_after, self.k_after, self.p_lost, self.r_after


def label_for(nadir_hz: float, nadir_crit: float) -> int:
    return -1 if abs(nadir_hz) > nadir_crit else 1


def outage_batch(points: List[OperatingPoint], specs: List[GeneratorSpec],
                 params: StudyParams) -> Tuple[ScenarioBatch, List[Tuple[int, int]], int]:
    """One scenario per (point, online unit) whose loss leaves a unit running."""
    fleet = fleet_arrays(specs, params)
    levels = np.array([p.levels for p in points], dtype=float).reshape(len(points), fleet.size)
    online = levels > 0
    n_online = online.sum(axis=1)

    rows, keys = [], []
    skipped = 0
    for k, point in enumerate(points):
        for i in range(fleet.size):
            if not online[k, i]:
                continue
            if n_online[k] < 2:
                skipped += 1
                continue
            rows.append((k, i))
            keys.append((point.point_id, int(fleet.ids[i])))

    if not rows:
        empty = np.zeros((0, fleet.size))
        return ScenarioBatch(fleet, empty.astype(bool), empty, empty, np.zeros(0), np.zeros(0),
                             np.zeros(0, dtype=bool)), keys, skipped

    pk = np.array([r[0] for r in rows])
    lost = np.array([r[1] for r in rows])
    p = levels[pk]
    survivors = online[pk].copy()
    survivors[np.arange(len(rows)), lost] = False
    r = np.where(online[pk], fleet.p_max[None, :] - p, 0.0)
    gen = p.sum(axis=1)
    batch = ScenarioBatch(
        fleet=fleet,
        survivors=survivors,
        p=p,
        r=r,
        p_lost=p[np.arange(len(rows)), lost],
        demand=gen * (1.0 + params.res_share),
        ufls=np.full(len(rows), params.label_with_ufls),
    )
    return batch, keys, skipped


def label_dataset(points: List[OperatingPoint], specs: List[GeneratorSpec], params: StudyParams,
                  jobs: int = 1) -> Tuple[List[OutageSample], int]:
    """Simulate every single-unit outage of every point. Returns (samples, skipped outages)."""
    if not points:
        raise DatasetError("no operating points to label")
    started = time.time()
    batch, keys, skipped = outage_batch(points, specs, params)
    if skipped:
        logger.warning(f"Skipped {skipped} outage(s) that leave no unit online")
    if not keys:
        raise DatasetError("every operating point has a single online unit; nothing to label")
    if np.any(batch.demand <= 0):
        k = int(np.argmax(batch.demand <= 0))
        raise DatasetError(f"labeling demand must be > 0 (point {keys[k][0]})")

    try:
        res = simulate_metrics(batch, params, GOVERNOR, jobs=jobs)
    except SimulationError as e:
        raise SimulationError(f"labeling failed: {e}") from e

    h, kk, r = batch.h_after, batch.k_after, batch.r_after
    samples = []
    for n, (point_id, unit_id) in enumerate(keys):
        nadir = float(res.nadir_hz[n])
        if not math.isfinite(nadir):
            raise SimulationError(f"non-finite nadir for point {point_id}, unit {unit_id}")
        samples.append(OutageSample(
            point_id=point_id,
            lost_unit=unit_id,
            h_after=float(h[n]),
            k_after=float(kk[n]),
            p_lost=float(batch.p_lost[n]),
            r_after=float(r[n]),
            nadir_hz=nadir,
            label=label_for(nadir, params.nadir_crit),
        ))
    unacceptable = sum(1 for s in samples if s.label < 0)
    logger.info(f"Labeled {len(samples)} outages ({unacceptable} unacceptable) "
                f"in {time.time() - started:.1f}s")
    return samples, skipped


def feature_matrix(samples: List[OutageSample]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.array([s.features for s in samples], dtype=float).reshape(len(samples), 4)
    y = np.array([s.label for s in samples], dtype=float)
    return x, y


def feature_correlation(samples: List[OutageSample]) -> Dict[str, Optional[float]]:
    """Pearson r of each feature against nadir_hz; None where a column has no variance."""
    if len(samples) < 2:
        raise DatasetError("need at least 2 samples for correlations")
    x, _ = feature_matrix(samples)
    df = pd.DataFrame(x, columns=FEATURES)
    # rounding noise on a constant column must not pass for a correlation
    flat = df.std(ddof=0) <= 1e-12 * np.maximum(1.0, df.mean().abs())
    df.loc[:, flat] = np.nan
    df["nadir_hz"] = [s.nadir_hz for s in samples]
    r = df.corr()["nadir_hz"].drop("nadir_hz").clip(-1.0, 1.0)
    return {name: None if pd.isna(r[name]) else float(r[name]) for name in FEATURES}


def label_balance(samples: List[OutageSample]) -> Dict[str, int]:
    neg = sum(1 for s in samples if s.label < 0)
    return {"samples": len(samples), "acceptable": len(samples) - neg, "unacceptable": neg}


# ---------- CSV ----------
def save_labeled(samples: List[OutageSample], csv_path) -> None:
    df = pd.DataFrame([[getattr(s, c) for c in LABELED_COLUMNS] for s in samples], columns=LABELED_COLUMNS)
    df.to_csv(csv_path, index=False, float_format="%.12g")
    logger.info(f"Saved {len(samples)} labeled outages to {csv_path}")


def load_labeled(csv_path) -> List[OutageSample]:
    df = pd.read_csv(csv_path)
    missing = [c for c in LABELED_COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"{csv_path}: missing column(s) {', '.join(missing)}")
    bad = ~df["label"].isin([-1, 1])
    if bad.any():
        raise DatasetError(f"{csv_path}: row {int(bad.idxmax()) + 2}: label must be -1 or 1")
    return [
        OutageSample(int(r.point_id), int(r.lost_unit), float(r.h_after), float(r.k_after),
                     float(r.p_lost), float(r.r_after), float(r.nadir_hz), int(r.label))
        for r in df.itertuples(index=False)
    ]
