"""
Island power-system model: generator records, study parameters, demand series.

`.island` files are a flat key tree, one ``key = value`` per line::

    # comment (also allowed after a value)
    island.name = toy3
    study.f0 = 50
    study.ufls.1 = 49.0 0.10 0.1        # threshold Hz, shed fraction, relay delay s
    unit.1.name = G1
    unit.1.p_min = 3.0
    unit.1.tg_num = 0.5 1.0             # b1 b2
    unit.1.tg_den = 1.0 2.5             # a1 a2
    unit.1.cost = 0.02 9.5 40           # c2 c1 c0

Keys under ``study.`` map to StudyParams fields, keys under ``unit.<id>.`` to
GeneratorSpec fields. ``study.ufls = none`` disables load shedding; with no
``study.ufls.*`` key the three default stages apply. Unknown or repeated keys
are errors reported with their line number.
"""
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import ConfigError, SeriesError

logger = logging.getLogger(__name__)

SERIES_COLUMNS = ["hour", "demand_mw", "wind_mw", "solar_mw"]


class UflsStage(NamedTuple):
    threshold_hz: float
    shed_fraction: float
    delay_s: float


DEFAULT_UFLS = (
    UflsStage(49.0, 0.10, 0.1),
    UflsStage(48.6, 0.10, 0.1),
    UflsStage(48.2, 0.10, 0.1),
)


@dataclass(frozen=True)
class GeneratorSpec:
    id: int
    name: str
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float
    min_up: int
    min_down: int
    inertia_h: float
    base_mva: float
    gain_k: float
    tg_num: Tuple[float, float]
    tg_den: Tuple[float, float]
    cost_quad: Tuple[float, float, float]
    startup_cost: float
    initial_on: bool = False
    initial_p: float = 0.0
    pfr_ramp: Optional[float] = None

    @property
    def hm(self) -> float:
        """Stored kinetic energy H·𝓜 in MW·s."""
        return self.inertia_h * self.base_mva

    @property
    def km(self) -> float:
        return self.gain_k * self.base_mva

    def cost(self, p: float) -> float:
        c2, c1, c0 = self.cost_quad
        return c2 * p * p + c1 * p + c0

    def primary_ramp(self, tg_delivery: float) -> float:
        return self.pfr_ramp if self.pfr_ramp is not None else self.p_max / tg_delivery


@dataclass(frozen=True)
class StudyParams:
    f0: float = 50.0
    damping_d: float = 0.01
    rocof_crit: float = 2.0
    ss_crit: float = 1.5
    nadir_crit: float = 3.5
    tg_delivery: float = 10.0
    gen_floor: float = 16.0
    gen_ceiling: float = 36.0
    power_step: float = 0.5
    keep_per_level: int = 500
    ufls_stages: Tuple[UflsStage, ...] = DEFAULT_UFLS
    sim_dt: float = 0.01
    sim_horizon: float = 30.0
    reserve_rule: str = "online"
    label_with_ufls: bool = False
    res_share: float = 0.0
    damping_net_of_res: bool = False

    def damping_mw_per_hz(self, demand: float) -> float:
        return self.damping_d * demand


@dataclass(frozen=True)
class DemandSeries:
    hour: np.ndarray
    demand: np.ndarray
    wind_avail: np.ndarray
    solar_avail: np.ndarray

    def __len__(self) -> int:
        return len(self.hour)

    @property
    def hours(self) -> List[Tuple[int, float, float, float]]:
        return list(zip(self.hour.tolist(), self.demand.tolist(),
                        self.wind_avail.tolist(), self.solar_avail.tolist()))

    def damping_demand(self, params: StudyParams) -> np.ndarray:
        """Load that carries the damping term, per hour."""
        if params.damping_net_of_res:
            return np.maximum(self.demand - self.wind_avail - self.solar_avail, 0.0)
        return self.demand.copy()

    def head(self, hours: int) -> "DemandSeries":
        return DemandSeries(self.hour[:hours], self.demand[:hours],
                            self.wind_avail[:hours], self.solar_avail[:hours])


# ---------- validation ----------
def _fail(msg: str, unit: Optional[int] = None):
    prefix = f"unit {unit}: " if unit is not None else ""
    raise ConfigError(prefix + msg)


def validate_spec(g: GeneratorSpec) -> GeneratorSpec:
    values = [g.p_min, g.p_max, g.ramp_up, g.ramp_down, g.inertia_h, g.base_mva,
              g.gain_k, g.startup_cost, g.initial_p, *g.tg_num, *g.tg_den, *g.cost_quad]
    if not all(math.isfinite(v) for v in values):
        _fail("non-finite parameter", g.id)
    if g.p_min < 0:
        _fail(f"p_min={g.p_min} must be >= 0", g.id)
    if g.p_min > g.p_max:
        _fail(f"p_min={g.p_min} exceeds p_max={g.p_max}", g.id)
    if g.p_max <= 0:
        _fail(f"p_max={g.p_max} must be > 0", g.id)
    if g.ramp_up <= 0:
        _fail(f"ramp_up={g.ramp_up} must be > 0", g.id)
    if g.ramp_down <= 0:
        _fail(f"ramp_down={g.ramp_down} must be > 0", g.id)
    if g.min_up < 1:
        _fail(f"min_up={g.min_up} must be >= 1", g.id)
    if g.min_down < 1:
        _fail(f"min_down={g.min_down} must be >= 1", g.id)
    if g.inertia_h <= 0:
        _fail(f"inertia_h={g.inertia_h} must be > 0", g.id)
    if g.base_mva < g.p_max:
        _fail(f"base_mva={g.base_mva} below p_max={g.p_max}", g.id)
    if g.gain_k < 0:
        _fail(f"gain_k={g.gain_k} must be >= 0", g.id)
    if g.tg_den[0] <= 0 or g.tg_den[1] <= 0:
        _fail(f"tg_den={g.tg_den} coefficients must be > 0", g.id)
    if g.cost_quad[0] < 0:
        _fail(f"cost c2={g.cost_quad[0]} must be >= 0 (convex cost)", g.id)
    if g.startup_cost < 0:
        _fail(f"startup_cost={g.startup_cost} must be >= 0", g.id)
    if g.pfr_ramp is not None and not (g.pfr_ramp > 0 and math.isfinite(g.pfr_ramp)):
        _fail(f"pfr_ramp={g.pfr_ramp} must be > 0", g.id)
    if g.initial_on and not (g.p_min <= g.initial_p <= g.p_max):
        _fail(f"initial_p={g.initial_p} outside [p_min, p_max] for an initially online unit", g.id)
    if not g.initial_on and g.initial_p != 0:
        _fail(f"initial_p={g.initial_p} must be 0 for an initially offline unit", g.id)
    return g


def validate_params(p: StudyParams) -> StudyParams:
    for f in fields(p):
        v = getattr(p, f.name)
        if isinstance(v, float) and not math.isfinite(v) and f.name not in ("rocof_crit", "ss_crit"):
            _fail(f"study.{f.name} must be finite")
    if p.f0 <= 0:
        _fail(f"study.f0={p.f0} must be > 0")
    if p.damping_d < 0:
        _fail(f"study.damping_d={p.damping_d} must be >= 0")
    if p.rocof_crit <= 0:
        _fail(f"study.rocof_crit={p.rocof_crit} must be > 0")
    if p.ss_crit <= 0:
        _fail(f"study.ss_crit={p.ss_crit} must be > 0")
    if p.nadir_crit <= 0:
        _fail(f"study.nadir_crit={p.nadir_crit} must be > 0")
    if p.tg_delivery <= 0:
        _fail(f"study.tg_delivery={p.tg_delivery} must be > 0")
    if p.gen_floor >= p.gen_ceiling:
        _fail(f"study.gen_floor={p.gen_floor} must be below gen_ceiling={p.gen_ceiling}")
    if p.power_step <= 0:
        _fail(f"study.power_step={p.power_step} must be > 0")
    if p.keep_per_level < 1:
        _fail(f"study.keep_per_level={p.keep_per_level} must be >= 1")
    if p.sim_dt <= 0:
        _fail(f"study.sim_dt={p.sim_dt} must be > 0")
    if p.sim_horizon <= p.tg_delivery:
        _fail(f"study.sim_horizon={p.sim_horizon} must exceed tg_delivery={p.tg_delivery}")
    if p.reserve_rule not in ("online", "all"):
        _fail(f"study.reserve_rule={p.reserve_rule!r} must be 'online' or 'all'")
    if p.res_share < 0:
        _fail(f"study.res_share={p.res_share} must be >= 0")
    thresholds = [s.threshold_hz for s in p.ufls_stages]
    if any(b >= a for a, b in zip(thresholds, thresholds[1:])):
        _fail(f"study.ufls thresholds {thresholds} must be strictly decreasing")
    for s in p.ufls_stages:
        if not (0 < s.shed_fraction <= 1) or s.delay_s < 0 or s.threshold_hz >= p.f0:
            _fail(f"study.ufls stage {tuple(s)} invalid")
    return p


# ---------- parsing ----------
_FLOAT_FIELDS = {"p_min", "p_max", "ramp_up", "ramp_down", "inertia_h", "base_mva",
                 "gain_k", "startup_cost", "initial_p", "pfr_ramp"}
_INT_FIELDS = {"min_up", "min_down"}
_PAIR_FIELDS = {"tg_num", "tg_den"}
_UNIT_FIELDS = _FLOAT_FIELDS | _INT_FIELDS | _PAIR_FIELDS | {"name", "cost", "initial_on"}
_REQUIRED_UNIT = _UNIT_FIELDS - {"initial_on", "initial_p", "pfr_ramp"}
_PARAM_TYPES = {f.name: f.type for f in fields(StudyParams)}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _numbers(text: str, count: int) -> Tuple[float, ...]:
    parts = text.split()
    if len(parts) != count:
        raise ValueError(f"expected {count} numbers, got {len(parts)}")
    return tuple(float(x) for x in parts)


def _parse_tree(text: str, source: str) -> Tuple[Dict[str, object], Dict[int, Dict[str, object]]]:
    seen: Dict[str, int] = {}
    study: Dict[str, object] = {}
    ufls: Dict[int, UflsStage] = {}
    ufls_disabled = False
    units: Dict[int, Dict[str, object]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = lineno
        parts = key.split(".")
        try:
            if parts == ["island", "name"]:
                continue
            if parts[0] == "study" and len(parts) == 2 and parts[1] == "ufls":
                if value.lower() != "none":
                    raise ValueError("only 'none' is accepted here; use study.ufls.<n> for stages")
                ufls_disabled = True
            elif parts[0] == "study" and len(parts) == 3 and parts[1] == "ufls":
                ufls[int(parts[2])] = UflsStage(*_numbers(value, 3))
            elif parts[0] == "study" and len(parts) == 2 and parts[1] in _PARAM_TYPES:
                name = parts[1]
                kind = _PARAM_TYPES[name]
                if name == "ufls_stages":
                    raise ValueError("use study.ufls.<n> keys")
                if kind in (bool, "bool"):
                    study[name] = _parse_bool(value)
                elif kind in (int, "int"):
                    study[name] = int(value)
                elif kind in (str, "str"):
                    study[name] = value
                else:
                    study[name] = float(value)
            elif parts[0] == "unit" and len(parts) == 3 and parts[2] in _UNIT_FIELDS:
                uid, name = int(parts[1]), parts[2]
                rec = units.setdefault(uid, {})
                if name == "name":
                    rec[name] = value
                elif name == "initial_on":
                    rec[name] = _parse_bool(value)
                elif name in _INT_FIELDS:
                    rec[name] = int(value)
                elif name in _PAIR_FIELDS:
                    rec[name] = _numbers(value, 2)
                elif name == "cost":
                    rec["cost_quad"] = _numbers(value, 3)
                else:
                    rec[name] = float(value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None

    if ufls_disabled and ufls:
        raise ConfigError(f"{source}: study.ufls = none conflicts with study.ufls.<n> stages")
    if ufls_disabled:
        study["ufls_stages"] = ()
    elif ufls:
        study["ufls_stages"] = tuple(ufls[k] for k in sorted(ufls))
    return study, units


def parse_island(text: str, source: str = "<island>") -> Tuple[List[GeneratorSpec], StudyParams]:
    study, units = _parse_tree(text, source)
    params = validate_params(StudyParams(**study))

    if not units:
        raise ConfigError(f"{source}: no units defined (need at least one unit.<id>.* block)")
    specs = []
    for uid in sorted(units):
        rec = units[uid]
        present = set(rec) | ({"cost"} if "cost_quad" in rec else set())
        missing = sorted(_REQUIRED_UNIT - present)
        if missing:
            raise ConfigError(f"{source}: unit {uid}: missing field(s) {', '.join(missing)}")
        specs.append(validate_spec(GeneratorSpec(id=uid, **rec)))
    return specs, params


def load_island(config_path) -> Tuple[List[GeneratorSpec], StudyParams]:
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"island file not found: {path}")
    specs, params = parse_island(path.read_text(encoding="utf-8"), source=str(path))
    logger.info(f"Loaded {len(specs)} units from {path.name} (f0={params.f0} Hz)")
    return specs, params


def load_params(params_path, base: StudyParams) -> StudyParams:
    """Apply a file of study.* overrides (same grammar as .island files) on top of base."""
    path = Path(params_path)
    if not path.is_file():
        raise ConfigError(f"params file not found: {path}")
    study, units = _parse_tree(path.read_text(encoding="utf-8"), str(path))
    if units:
        raise ConfigError(f"{path}: a params file may only hold study.* keys")
    params = with_params(base, **study)
    logger.info(f"Applied {len(study)} study override(s) from {path.name}")
    return params


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_island(specs: List[GeneratorSpec], params: StudyParams, name: str = "") -> str:
    """Normalised text form; parse_island(dump_island(...)) returns equal values."""
    lines = []
    if name:
        lines.append(f"island.name = {name}")
    for f in fields(StudyParams):
        if f.name == "ufls_stages":
            continue
        lines.append(f"study.{f.name} = {_fmt(getattr(params, f.name))}")
    if not params.ufls_stages:
        lines.append("study.ufls = none")
    for n, s in enumerate(params.ufls_stages, start=1):
        lines.append(f"study.ufls.{n} = {_fmt(tuple(s))}")
    for g in specs:
        lines.append("")
        for f in fields(GeneratorSpec):
            if f.name == "id":
                continue
            v = getattr(g, f.name)
            if v is None:
                continue
            key = "cost" if f.name == "cost_quad" else f.name
            lines.append(f"unit.{g.id}.{key} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def with_params(params: StudyParams, **overrides) -> StudyParams:
    return validate_params(replace(params, **overrides))


# ---------- fleet arrays ----------
@dataclass(frozen=True)
class Fleet:
    """Column view of a generator list, indexed 0..I-1 in spec order."""
    ids: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    hm: np.ndarray
    km: np.ndarray
    base_mva: np.ndarray
    gain_k: np.ndarray
    tg_b1: np.ndarray
    tg_b2: np.ndarray
    tg_a1: np.ndarray
    tg_a2: np.ndarray
    pfr_ramp: np.ndarray
    cost_quad: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.ids)

    def cost(self, levels: np.ndarray, online: np.ndarray) -> np.ndarray:
        c2, c1, c0 = self.cost_quad[:, 0], self.cost_quad[:, 1], self.cost_quad[:, 2]
        per_unit = (c2 * levels * levels + c1 * levels + c0) * online
        return per_unit.sum(axis=-1)


def fleet_arrays(specs: List[GeneratorSpec], params: StudyParams) -> Fleet:
    def col(fn):
        return np.array([fn(g) for g in specs], dtype=float)

    return Fleet(
        ids=np.array([g.id for g in specs]),
        p_min=col(lambda g: g.p_min),
        p_max=col(lambda g: g.p_max),
        hm=col(lambda g: g.hm),
        km=col(lambda g: g.km),
        base_mva=col(lambda g: g.base_mva),
        gain_k=col(lambda g: g.gain_k),
        tg_b1=col(lambda g: g.tg_num[0]),
        tg_b2=col(lambda g: g.tg_num[1]),
        tg_a1=col(lambda g: g.tg_den[0]),
        tg_a2=col(lambda g: g.tg_den[1]),
        pfr_ramp=col(lambda g: g.primary_ramp(params.tg_delivery)),
        cost_quad=np.array([g.cost_quad for g in specs], dtype=float).reshape(len(specs), 3),
    )


# ---------- time series ----------
def load_series(csv_path) -> DemandSeries:
    path = Path(csv_path)
    if not path.is_file():
        raise SeriesError(f"series file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise SeriesError(f"{path}: malformed CSV: {e}") from None
    if [c.strip() for c in df.columns] != SERIES_COLUMNS:
        raise SeriesError(f"{path}: header must be {','.join(SERIES_COLUMNS)}, got {','.join(df.columns)}")
    df.columns = SERIES_COLUMNS

    num = df.apply(pd.to_numeric, errors="coerce")
    for idx, row in num.iterrows():
        line = idx + 2
        if row.isna().any() or not np.isfinite(row.to_numpy(dtype=float)).all():
            raise SeriesError(f"{path}: row {line}: malformed or non-finite value(s): {df.loc[idx].tolist()}")
        if row["demand_mw"] <= 0:
            raise SeriesError(f"{path}: row {line}: demand_mw={row['demand_mw']} must be > 0")
        if row["wind_mw"] < 0 or row["solar_mw"] < 0:
            raise SeriesError(f"{path}: row {line}: wind_mw/solar_mw must be >= 0")
        if row["hour"] != idx + 1:
            raise SeriesError(f"{path}: row {line}: hour {row['hour']:g} breaks the contiguous index (expected {idx + 1})")
    if num.empty:
        raise SeriesError(f"{path}: no rows")

    series = DemandSeries(
        hour=num["hour"].to_numpy(dtype=int),
        demand=num["demand_mw"].to_numpy(dtype=float),
        wind_avail=num["wind_mw"].to_numpy(dtype=float),
        solar_avail=num["solar_mw"].to_numpy(dtype=float),
    )
    logger.info(f"Loaded {len(series)} hours from {path.name} (mean demand {series.demand.mean():.2f} MW)")
    return series


def save_series(series: DemandSeries, csv_path) -> None:
    pd.DataFrame({
        "hour": series.hour,
        "demand_mw": series.demand,
        "wind_mw": series.wind_avail,
        "solar_mw": series.solar_avail,
    }).to_csv(csv_path, index=False)
