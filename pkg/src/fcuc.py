"""
Frequency-constrained unit commitment model.

Rows per hour t and unit i (all variants)::

    logic   u[t,i] - u[t-1,i] - v[t,i] + w[t,i] = 0      (t=1 uses initial_on)
    excl    v + w <= 1
    minup   sum(v[s,i], s = t-UT+1..t) - u <= 0           (window truncated at t=1)
    mindn   sum(w[s,i], s = t-DT+1..t) + u <= 1
    pmin    p - p_min u >= 0
    pmax    p + r - p_max u <= 0
    rdn     p[t-1,i] - p[t,i] <= ramp_down                 (t=1 uses initial_p)
    rup     p[t,i] - p[t-1,i] <= ramp_up
    cost    p - sum(d[s]) - p_min u = 0                    (4 secant segments)

    bal     sum(p[t,:]) + wg[t] + sg[t] = demand[t]       (one per hour)

Frequency rows per hour t and lost unit l, gated by u[t,l]::

    rocof   sum_{i!=l} HM_i u_i - f0/(2 rocof_crit) p_l - M u_l >= -M   (skipped if rocof_crit = inf)
    ss      sum_{i!=l} r_i - p_l - M u_l >= -D dem ss_crit - M            (skipped if ss_crit = inf)
    ml      th1 H + th2 K + th3 p_l + th4 R - M u_l >= -th0 - M          (ml variant)
    an      zsum, zdif, 3 x (link, conv, gsum, J+1 adj), nadir           (analytical variant, 3J+15 rows)

Variables: u, v, w (binary), p, r, d1..d4 per (t, i); wg, sg per t; the
analytical variant adds z1, z2, 3(J+1) weights and 3J binaries per (t, l).
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.classifier import LinearClassifier
from src.errors import ModelBuildError, SolverError
from src.island import DemandSeries, GeneratorSpec, StudyParams
from src.milp import MilpModel

logger = logging.getLogger(__name__)

BASE = "base"
ML = "ml"
ANALYTICAL = "analytical"
COST_SEGMENTS = 4
BLOCKS = ("P", "z1", "z2")


@dataclass(frozen=True)
class NadirVariant:
    tag: str = BASE
    classifier: Optional[LinearClassifier] = None
    breakpoints: int = 10
    alpha: Optional[float] = None
    beta: Optional[float] = None
    ranges: Optional[Dict[str, Tuple[float, float]]] = None

    @classmethod
    def base(cls) -> "NadirVariant":
        return cls(BASE)

    @classmethod
    def ml(cls, clf: LinearClassifier) -> "NadirVariant":
        return cls(ML, classifier=clf)

    @classmethod
    def analytical(cls, breakpoints: int = 10, alpha: Optional[float] = None, beta: Optional[float] = None,
                   ranges: Optional[Dict[str, Tuple[float, float]]] = None) -> "NadirVariant":
        return cls(ANALYTICAL, breakpoints=breakpoints, alpha=alpha, beta=beta, ranges=ranges)

    def validate(self) -> "NadirVariant":
        if self.tag not in (BASE, ML, ANALYTICAL):
            raise ModelBuildError(f"unknown nadir variant {self.tag!r}")
        if self.tag == ML and self.classifier is None:
            raise ModelBuildError("ml variant needs a classifier")
        if self.tag == ANALYTICAL:
            if self.breakpoints < 2:
                raise ModelBuildError(f"analytical variant needs J >= 2 breakpoints (got {self.breakpoints})")
            for name, v in (("alpha", self.alpha), ("beta", self.beta)):
                if v is not None and not v > 0:
                    raise ModelBuildError(f"{name} must be > 0 (got {v})")
        return self


# ---------- names ----------
def vname(entity: str, t: int, i: int) -> str:
    return f"{entity}_t{t:03d}_i{i:02d}"


def hname(entity: str, t: int) -> str:
    return f"{entity}_t{t:03d}"


def bname(kind: str, block: str, t: int, l: int, j: int) -> str:
    return f"{kind}{block}_t{t:03d}_l{l:02d}_j{j:02d}"


def lname(entity: str, t: int, l: int) -> str:
    return f"{entity}_t{t:03d}_l{l:02d}"


# ---------- breakpoints ----------
@dataclass(frozen=True)
class Breakpoints:
    """Uniform grids for the three separable blocks of one lost unit."""
    alpha: float
    beta: float
    grids: Dict[str, np.ndarray]

    def square(self, block: str, x):
        a = self.grids[block]
        return np.interp(x, a, a * a)


def chord_square(x, grid: np.ndarray):
    """Piecewise-linear interpolation of x² on grid (the λ-weight value of x²)."""
    grid = np.asarray(grid, dtype=float)
    return np.interp(x, grid, grid * grid)


def outage_bounds(specs: List[GeneratorSpec], l: int) -> Tuple[float, float, float, float]:
    """Upper bounds of (H, K, P, R) when unit index l is lost."""
    others = [g for k, g in enumerate(specs) if k != l]
    return (sum(g.hm for g in others), sum(g.km for g in others),
            specs[l].p_max, sum(g.p_max for g in others))


def breakpoints_for(specs: List[GeneratorSpec], variant: NadirVariant) -> List[Breakpoints]:
    J = variant.breakpoints
    bounds = [outage_bounds(specs, l) for l in range(len(specs))]
    h_max = max(b[0] for b in bounds)
    r_max = max(b[3] for b in bounds)
    alpha = variant.alpha or (1.0 / h_max if h_max > 0 else 1.0)
    beta = variant.beta or (1.0 / r_max if r_max > 0 else 1.0)
    out = []
    for l, (h, _, p, r) in enumerate(bounds):
        need = {
            "P": (0.0, p),
            "z1": (0.0, 0.5 * (alpha * h + beta * r)),
            "z2": (-0.5 * beta * r, 0.5 * alpha * h),
        }
        grids = {}
        for block in BLOCKS:
            lo, hi = need[block]
            if variant.ranges and block in variant.ranges:
                o_lo, o_hi = variant.ranges[block]
                if o_lo > lo + 1e-12 or o_hi < hi - 1e-12:
                    raise ModelBuildError(
                        f"breakpoint range [{o_lo}, {o_hi}] of block {block} does not cover "
                        f"[{lo:.6g}, {hi:.6g}] for unit {specs[l].id}")
                lo, hi = o_lo, o_hi
            if hi <= lo:
                hi = lo + 1.0
            grids[block] = np.linspace(lo, hi, J + 1)
        out.append(Breakpoints(alpha, beta, grids))
    return out


def approximate_nadir(h, r, p, damping_mw_per_hz: float, bp: Breakpoints, params: StudyParams) -> float:
    """Nadir implied by the λ-approximated nadir row at equality."""
    z1 = 0.5 * (bp.alpha * h + bp.beta * r)
    z2 = 0.5 * (bp.alpha * h - bp.beta * r)
    hr = (float(bp.square("z1", z1)) - float(bp.square("z2", z2))) / (bp.alpha * bp.beta)
    p2 = float(bp.square("P", p))
    f0, tg = params.f0, params.tg_delivery
    if p <= 0:
        return 0.0
    denom = 4.0 * (hr + damping_mw_per_hz * tg * p * f0 / 4.0)
    if denom <= 0:
        return -math.inf
    return -f0 * tg * p2 / denom


# ---------- model ----------
class FcucModel(MilpModel):
    def __init__(self, specs: List[GeneratorSpec], series: DemandSeries, params: StudyParams,
                 variant: NadirVariant, horizon: int):
        super().__init__(f"FCUC_{variant.tag.upper()}")
        self.specs = specs
        self.series = series
        self.params = params
        self.variant = variant
        self.horizon = horizon
        self.damping_demand = series.damping_demand(params)[:horizon]
        self.breakpoints: List[Breakpoints] = []
        self.build_seconds = 0.0


def _check_capability(specs: List[GeneratorSpec], series: DemandSeries, horizon: int) -> None:
    capacity = sum(g.p_max for g in specs)
    for t in range(horizon):
        net = series.demand[t] - series.wind_avail[t] - series.solar_avail[t]
        if net > capacity + 1e-9:
            raise ModelBuildError(
                f"hour {int(series.hour[t])}: demand {series.demand[t]:.3f} MW exceeds thermal capacity "
                f"{capacity:.3f} MW plus renewables {series.wind_avail[t] + series.solar_avail[t]:.3f} MW")


def _segments(g: GeneratorSpec) -> Tuple[float, List[float]]:
    width = (g.p_max - g.p_min) / COST_SEGMENTS
    slopes = []
    for s in range(COST_SEGMENTS):
        a = g.p_min + s * width
        slopes.append((g.cost(a + width) - g.cost(a)) / width if width > 0 else 0.0)
    return width, slopes


def build(specs: List[GeneratorSpec], series: DemandSeries, params: StudyParams,
          variant: NadirVariant = NadirVariant(), horizon: Optional[int] = None) -> FcucModel:
    started = time.time()
    variant.validate()
    horizon = len(series) if horizon is None else horizon
    if horizon < 1 or horizon > len(series):
        raise ModelBuildError(f"horizon {horizon} h outside 1..{len(series)} (series length)")
    if not specs:
        raise ModelBuildError("no generating units")
    _check_capability(specs, series, horizon)

    m = FcucModel(specs, series, params, variant, horizon)
    I, T = len(specs), horizon
    obj: Dict[str, float] = {}

    for t in range(1, T + 1):
        for i, g in enumerate(specs, start=1):
            for e in ("u", "v", "w"):
                m.add_binary(vname(e, t, i))
            m.add_var(vname("p", t, i), 0.0, g.p_max)
            m.add_var(vname("r", t, i), 0.0, g.p_max)
            width, slopes = _segments(g)
            for s in range(1, COST_SEGMENTS + 1):
                m.add_var(vname(f"d{s}", t, i), 0.0, width)
                obj[vname(f"d{s}", t, i)] = slopes[s - 1]
            obj[vname("u", t, i)] = g.cost(g.p_min)
            obj[vname("v", t, i)] = g.startup_cost
        m.add_var(hname("wg", t), 0.0, float(series.wind_avail[t - 1]))
        m.add_var(hname("sg", t), 0.0, float(series.solar_avail[t - 1]))
    m.set_objective(obj)

    for t in range(1, T + 1):
        for i, g in enumerate(specs, start=1):
            u, v, w, p, r = (vname(e, t, i) for e in "uvwpr")
            if t == 1:
                m.add_row(vname("logic", t, i), {u: 1, v: -1, w: 1}, "E", 1.0 if g.initial_on else 0.0)
            else:
                m.add_row(vname("logic", t, i), {u: 1, vname("u", t - 1, i): -1, v: -1, w: 1}, "E", 0.0)
            m.add_row(vname("excl", t, i), {v: 1, w: 1}, "L", 1.0)
            up = {vname("v", s, i): 1 for s in range(max(1, t - g.min_up + 1), t + 1)}
            up[u] = up.get(u, 0) - 1
            m.add_row(vname("minup", t, i), up, "L", 0.0)
            dn = {vname("w", s, i): 1 for s in range(max(1, t - g.min_down + 1), t + 1)}
            dn[u] = 1
            m.add_row(vname("mindn", t, i), dn, "L", 1.0)
            m.add_row(vname("pmin", t, i), {p: 1, u: -g.p_min}, "G", 0.0)
            m.add_row(vname("pmax", t, i), {p: 1, r: 1, u: -g.p_max}, "L", 0.0)
            if t == 1:
                m.add_row(vname("rdn", t, i), {p: -1}, "L", g.ramp_down - g.initial_p)
                m.add_row(vname("rup", t, i), {p: 1}, "L", g.ramp_up + g.initial_p)
            else:
                prev = vname("p", t - 1, i)
                m.add_row(vname("rdn", t, i), {prev: 1, p: -1}, "L", g.ramp_down)
                m.add_row(vname("rup", t, i), {p: 1, prev: -1}, "L", g.ramp_up)
            link = {p: 1.0, u: -g.p_min}
            for s in range(1, COST_SEGMENTS + 1):
                link[vname(f"d{s}", t, i)] = -1.0
            m.add_row(vname("cost", t, i), link, "E", 0.0)
        bal = {vname("p", t, i): 1 for i in range(1, I + 1)}
        bal[hname("wg", t)] = 1
        bal[hname("sg", t)] = 1
        m.add_row(hname("bal", t), bal, "E", float(series.demand[t - 1]))

    _add_frequency_rows(m)
    if variant.tag == ML:
        add_ml_nadir(m, variant.classifier)
    elif variant.tag == ANALYTICAL:
        add_analytical_nadir(m, variant)

    m.build_seconds = time.time() - started
    st = m.stats()
    logger.info(f"Built {variant.tag} model: {T} h x {I} units, {st['variables']} variables "
                f"({st['binaries']} binary), {st['rows']} rows in {m.build_seconds:.2f}s")
    return m


def _add_frequency_rows(m: FcucModel) -> None:
    p_, specs = m.params, m.specs
    for t in range(1, m.horizon + 1):
        dmg = p_.damping_d * float(m.damping_demand[t - 1])
        for l, gl in enumerate(specs, start=1):
            u_l, p_l = vname("u", t, l), vname("p", t, l)
            if math.isfinite(p_.rocof_crit):
                big = p_.f0 * gl.p_max / (2.0 * p_.rocof_crit)
                row = {vname("u", t, i): g.hm for i, g in enumerate(specs, start=1) if i != l}
                row[p_l] = -p_.f0 / (2.0 * p_.rocof_crit)
                row[u_l] = -big
                m.add_row(lname("rocof", t, l), row, "G", -big)
            if math.isfinite(p_.ss_crit):
                big = gl.p_max
                row = {vname("r", t, i): 1.0 for i in range(1, len(specs) + 1) if i != l}
                row[p_l] = -1.0
                row[u_l] = -big
                m.add_row(lname("ss", t, l), row, "G", -dmg * p_.ss_crit - big)


def ml_big_m(clf: LinearClassifier, specs: List[GeneratorSpec], l: int) -> float:
    h, k, p, r = outage_bounds(specs, l)
    th = clf.theta
    return abs(clf.theta0) + abs(th[0]) * h + abs(th[1]) * k + abs(th[2]) * p + abs(th[3]) * r


def add_ml_nadir(m: FcucModel, clf: LinearClassifier) -> FcucModel:
    specs = m.specs
    th1, th2, th3, th4 = clf.theta
    bigs = [ml_big_m(clf, specs, l) for l in range(len(specs))]
    for t in range(1, m.horizon + 1):
        for l in range(1, len(specs) + 1):
            big = bigs[l - 1]
            row: Dict[str, float] = {}
            for i, g in enumerate(specs, start=1):
                if i == l:
                    continue
                row[vname("u", t, i)] = th1 * g.hm + th2 * g.km
                row[vname("r", t, i)] = th4
            row[vname("p", t, l)] = th3
            row[vname("u", t, l)] = -big
            m.add_row(lname("ml", t, l), row, "G", -clf.theta0 - big)
    return m


def analytical_big_m(bp: Breakpoints, p_max: float, params: StudyParams) -> float:
    z2_sq = float(np.max(bp.grids["z2"] ** 2))
    return (z2_sq / (bp.alpha * bp.beta)
            + params.f0 * params.tg_delivery * p_max ** 2 / (4.0 * params.nadir_crit) + 1.0)


def add_analytical_nadir(m: FcucModel, variant: NadirVariant) -> FcucModel:
    specs, params = m.specs, m.params
    J = variant.breakpoints
    m.breakpoints = breakpoints_for(specs, variant)
    f0, tg, crit = params.f0, params.tg_delivery, params.nadir_crit
    for t in range(1, m.horizon + 1):
        dmg = params.damping_d * float(m.damping_demand[t - 1])
        for l, gl in enumerate(specs, start=1):
            bp = m.breakpoints[l - 1]
            z_lo, z_hi = bp.grids["z2"][0], bp.grids["z2"][-1]
            z1 = m.add_var(lname("z1", t, l), bp.grids["z1"][0], bp.grids["z1"][-1])
            z2 = m.add_var(lname("z2", t, l), z_lo, z_hi)
            z1, z2 = m.var_names[z1], m.var_names[z2]
            h_terms = {vname("u", t, i): -bp.alpha * g.hm for i, g in enumerate(specs, start=1) if i != l}
            m.add_row(lname("zsum", t, l), {z1: 1, z2: 1, **h_terms}, "E", 0.0)
            r_terms = {vname("r", t, i): -bp.beta for i in range(1, len(specs) + 1) if i != l}
            m.add_row(lname("zdif", t, l), {z1: 1, z2: -1, **r_terms}, "E", 0.0)

            squares: Dict[str, Dict[str, float]] = {}
            for block, x in (("P", vname("p", t, l)), ("z1", z1), ("z2", z2)):
                a = bp.grids[block]
                lam = [m.var_names[m.add_var(bname("lam", block, t, l, j), 0.0, 1.0)] for j in range(J + 1)]
                gam = [m.var_names[m.add_binary(bname("gam", block, t, l, j))] for j in range(1, J + 1)]
                link = {x: 1.0}
                for j in range(J + 1):
                    link[lam[j]] = link.get(lam[j], 0.0) - a[j]
                m.add_row(bname("link", block, t, l, 0), link, "E", 0.0)
                m.add_row(bname("conv", block, t, l, 0), {n: 1 for n in lam}, "E", 1.0)
                m.add_row(bname("gsum", block, t, l, 0), {n: 1 for n in gam}, "E", 1.0)
                m.add_row(bname("adj", block, t, l, 0), {lam[0]: 1, gam[0]: -1}, "L", 0.0)
                for j in range(1, J):
                    m.add_row(bname("adj", block, t, l, j), {lam[j]: 1, gam[j - 1]: -1, gam[j]: -1}, "L", 0.0)
                m.add_row(bname("adj", block, t, l, J), {lam[J]: 1, gam[J - 1]: -1}, "L", 0.0)
                squares[block] = {lam[j]: float(a[j] * a[j]) for j in range(J + 1)}

            big = analytical_big_m(bp, gl.p_max, params)
            row: Dict[str, float] = {}
            ab = bp.alpha * bp.beta
            for n, c in squares["z1"].items():
                row[n] = row.get(n, 0.0) + c / ab
            for n, c in squares["z2"].items():
                row[n] = row.get(n, 0.0) - c / ab
            for n, c in squares["P"].items():
                row[n] = row.get(n, 0.0) - f0 * tg * c / (4.0 * crit)
            row[vname("p", t, l)] = dmg * tg * f0 / 4.0
            row[vname("u", t, l)] = -big
            m.add_row(lname("nadir", t, l), row, "G", -big)
    return m


# ---------- schedules ----------
OPTIMAL = "optimal"
FEASIBLE_GAP = "feasible-gap"
INFEASIBLE = "infeasible"
TIMEOUT = "timeout"
SOLVED = (OPTIMAL, FEASIBLE_GAP)


@dataclass
class UcSchedule:
    unit_ids: List[int]
    u: np.ndarray           # (T, I)
    v: np.ndarray
    w: np.ndarray
    p: np.ndarray
    r: np.ndarray
    wind_used: np.ndarray   # (T,)
    solar_used: np.ndarray
    objective: float
    status: str
    wall_time: float = 0.0
    variant: str = BASE
    extra: Dict[str, float] = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return self.u.shape[0]

    def balance_residual(self, demand: np.ndarray) -> float:
        served = self.p.sum(axis=1)
        return float(np.max(np.abs(served + self.wind_used + self.solar_used - demand[: self.horizon])))

    def with_variant(self, variant: str) -> "UcSchedule":
        return UcSchedule(self.unit_ids, self.u, self.v, self.w, self.p, self.r, self.wind_used,
                          self.solar_used, self.objective, self.status, self.wall_time, variant, dict(self.extra))


def schedule_from_values(m: FcucModel, values: np.ndarray, status: str, wall_time: float = 0.0) -> UcSchedule:
    idx = m.var
    T, I = m.horizon, len(m.specs)

    def grid(e, binary=False):
        out = np.array([[values[idx(vname(e, t, i))] for i in range(1, I + 1)] for t in range(1, T + 1)])
        return np.round(out) if binary else out

    u = grid("u", True)
    return UcSchedule(
        unit_ids=[g.id for g in m.specs],
        u=u, v=grid("v", True), w=grid("w", True),
        p=np.where(u > 0, grid("p"), 0.0), r=np.where(u > 0, grid("r"), 0.0),
        wind_used=np.array([values[idx(hname("wg", t))] for t in range(1, T + 1)]),
        solar_used=np.array([values[idx(hname("sg", t))] for t in range(1, T + 1)]),
        objective=m.objective_value(values),
        status=status,
        wall_time=wall_time,
        variant=m.variant.tag,
    )


SCHEDULE_COLUMNS = ["t", "unit", "u", "v", "w", "p_mw", "r_mw", "wind_mw", "solar_mw",
                    "variant", "status", "objective_eur", "wall_s"]


def save_schedule(s: UcSchedule, csv_path) -> None:
    rows = []
    for t in range(s.horizon):
        for k, uid in enumerate(s.unit_ids):
            rows.append([t + 1, uid, int(s.u[t, k]), int(s.v[t, k]), int(s.w[t, k]), s.p[t, k], s.r[t, k],
                         s.wind_used[t], s.solar_used[t], s.variant, s.status, s.objective, s.wall_time])
    pd.DataFrame(rows, columns=SCHEDULE_COLUMNS).to_csv(csv_path, index=False, float_format="%.10g")
    logger.info(f"Saved {s.variant} schedule ({s.horizon} h) to {csv_path}")


def load_schedule(csv_path) -> UcSchedule:
    df = pd.read_csv(csv_path)
    missing = [c for c in SCHEDULE_COLUMNS if c not in df.columns]
    if missing or df.empty:
        raise SolverError(f"{csv_path}: not a schedule file (missing {', '.join(missing) or 'rows'})")
    df = df.sort_values(["t", "unit"], kind="mergesort")
    unit_ids = sorted(df["unit"].unique().tolist())
    T, I = int(df["t"].max()), len(unit_ids)
    if len(df) != T * I:
        raise SolverError(f"{csv_path}: expected {T * I} rows, found {len(df)}")

    def grid(col):
        return df[col].to_numpy(dtype=float).reshape(T, I)

    hourly = df.groupby("t", sort=True).first()
    return UcSchedule(
        unit_ids=[int(x) for x in unit_ids],
        u=grid("u"), v=grid("v"), w=grid("w"), p=grid("p_mw"), r=grid("r_mw"),
        wind_used=hourly["wind_mw"].to_numpy(dtype=float),
        solar_used=hourly["solar_mw"].to_numpy(dtype=float),
        objective=float(df["objective_eur"].iloc[0]),
        status=str(df["status"].iloc[0]),
        wall_time=float(df["wall_s"].iloc[0]),
        variant=str(df["variant"].iloc[0]),
    )
