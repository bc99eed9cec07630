"""
System frequency response (SFR) simulation of single-unit outages.

Aggregate swing equation with load damping, one second-order turbine-governor
branch per surviving unit and staged under-frequency load shedding::

    (2𝓗/f0)·dΔf/dt + D·(𝓓 − shed)·Δf = ΣΔPmᵢ − P_ℓ + shed

    ΔPmᵢ = 𝓜ᵢ·kᵢ·G_i(s)·(−Δf/f0),   G_i(s) = (b₁s + b₂) / (a₁s² + a₂s + 1)

The governor branch output is clamped to [p_min − p, r] and rate limited by
the unit's primary-response ramp (MW/s), applied once per step and held over
the step. Integration is classical RK4 on a fixed grid; every operation is
elementwise over the scenario axis so a batch gives the same numbers as one
scenario at a time.
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import SimulationError
from src.island import Fleet, GeneratorSpec, StudyParams, fleet_arrays

logger = logging.getLogger(__name__)

GOVERNOR = "governor"
LINEAR_RESERVE = "linear"
_TOL = 1e-6


class ScenarioUnit(NamedTuple):
    spec: GeneratorSpec
    online: bool
    p: float
    r: float


@dataclass(frozen=True)
class SfrScenario:
    units: Tuple[ScenarioUnit, ...]
    demand: float
    lost_unit: int
    params: StudyParams
    ufls: bool = True

    @property
    def lost(self) -> ScenarioUnit:
        for u in self.units:
            if u.spec.id == self.lost_unit:
                return u
        raise SimulationError(f"lost unit {self.lost_unit} not in scenario")

    def _survivors(self):
        return [u for u in self.units if u.online and u.spec.id != self.lost_unit]

    @property
    def p_lost(self) -> float:
        return self.lost.p

    @property
    def h_after(self) -> float:
        return sum(u.spec.hm for u in self._survivors())

    @property
    def k_after(self) -> float:
        return sum(u.spec.km for u in self._survivors())

    @property
    def r_after(self) -> float:
        return sum(u.r for u in self._survivors())

    def validate(self, allow_zero_loss: bool = False) -> "SfrScenario":
        lost = self.lost
        if not lost.online:
            raise SimulationError(f"lost unit {self.lost_unit} is not committed")
        if lost.p <= 0 and not allow_zero_loss:
            raise SimulationError(f"lost unit {self.lost_unit} has no output (p={lost.p})")
        if self.demand < 0 or not math.isfinite(self.demand):
            raise SimulationError(f"demand={self.demand} invalid")
        for u in self.units:
            if not u.online:
                continue
            g = u.spec
            if u.p < g.p_min - _TOL and not (allow_zero_loss and g.id == self.lost_unit):
                raise SimulationError(f"unit {g.id}: p={u.p} below p_min={g.p_min}")
            if u.r < -_TOL or u.p + u.r > g.p_max + _TOL:
                raise SimulationError(f"unit {g.id}: p + r = {u.p + u.r} exceeds p_max={g.p_max}")
        if not self._survivors():
            raise SimulationError(f"empty committed set after losing unit {self.lost_unit}")
        return self


class SfrMetrics(NamedTuple):
    nadir_hz: float
    rocof_hzps: float
    fss_hz: float
    ufls_mw: float


@dataclass(frozen=True)
class SfrTrace:
    t: np.ndarray
    delta_f: np.ndarray
    pm: np.ndarray          # (steps + 1, units) mechanical response per unit, MW
    shed_load: np.ndarray
    metrics: SfrMetrics

    @property
    def pm_total(self) -> np.ndarray:
        return self.pm.sum(axis=1)


# ---------- batch arrays ----------
@dataclass(frozen=True)
class ScenarioBatch:
    """Outage scenarios over one shared fleet; per-scenario arrays are (B, I) or (B,)."""
    fleet: Fleet
    survivors: np.ndarray   # bool (B, I): committed and not lost
    p: np.ndarray
    r: np.ndarray
    p_lost: np.ndarray
    demand: np.ndarray
    ufls: np.ndarray        # bool (B,)

    @property
    def size(self) -> int:
        return len(self.p_lost)

    @property
    def h_after(self) -> np.ndarray:
        return (self.fleet.hm[None, :] * self.survivors).sum(axis=1)

    @property
    def k_after(self) -> np.ndarray:
        return (self.fleet.km[None, :] * self.survivors).sum(axis=1)

    @property
    def r_after(self) -> np.ndarray:
        return np.where(self.survivors, self.r, 0.0).sum(axis=1)

    def take(self, idx) -> "ScenarioBatch":
        return ScenarioBatch(self.fleet, self.survivors[idx], self.p[idx], self.r[idx],
                             self.p_lost[idx], self.demand[idx], self.ufls[idx])


def batch_from_scenarios(scenarios: Sequence[SfrScenario], allow_zero_loss: bool = False) -> ScenarioBatch:
    first = scenarios[0]
    specs = [u.spec for u in first.units]
    ids = [g.id for g in specs]
    for s in scenarios:
        if [u.spec.id for u in s.units] != ids or s.params != first.params:
            raise SimulationError("batched scenarios must share fleet and study parameters")
        s.validate(allow_zero_loss=allow_zero_loss)
    survivors = np.array([[u.online and u.spec.id != s.lost_unit for u in s.units] for s in scenarios])
    return ScenarioBatch(
        fleet=fleet_arrays(specs, first.params),
        survivors=survivors,
        p=np.array([[u.p for u in s.units] for s in scenarios], dtype=float),
        r=np.array([[u.r for u in s.units] for s in scenarios], dtype=float),
        p_lost=np.array([s.p_lost for s in scenarios], dtype=float),
        demand=np.array([s.demand for s in scenarios], dtype=float),
        ufls=np.array([s.ufls for s in scenarios], dtype=bool),
    )


# ---------- integrator ----------
@dataclass(frozen=True)
class BatchResult:
    nadir_hz: np.ndarray
    rocof_hzps: np.ndarray
    fss_hz: np.ndarray
    ufls_mw: np.ndarray
    t: Optional[np.ndarray] = None
    delta_f: Optional[np.ndarray] = None     # (steps + 1, B)
    pm: Optional[np.ndarray] = None          # (steps + 1, B, I)
    shed: Optional[np.ndarray] = None        # (steps + 1, B)


def integrate(batch: ScenarioBatch, params: StudyParams, mode: str = GOVERNOR,
              record: bool = False) -> BatchResult:
    if mode not in (GOVERNOR, LINEAR_RESERVE):
        raise SimulationError(f"unknown simulation mode {mode!r}")
    fl = batch.fleet
    B, n_units = batch.size, fl.size
    dt = params.sim_dt
    steps = int(round(params.sim_horizon / dt))
    f0, tg = params.f0, params.tg_delivery

    h_after = batch.h_after
    if np.any(h_after <= 0):
        bad = int(np.argmax(h_after <= 0))
        raise SimulationError(f"scenario {bad}: no inertia left after the outage")

    gain = np.where(batch.survivors, (fl.km / f0)[None, :], 0.0)
    lo = np.where(batch.survivors, fl.p_min[None, :] - batch.p, 0.0)
    hi = np.where(batch.survivors, batch.r, 0.0)
    lo = np.minimum(lo, 0.0)
    ramp_dt = fl.pfr_ramp[None, :] * dt
    a1, a2, b1, b2 = fl.tg_a1[None, :], fl.tg_a2[None, :], fl.tg_b1[None, :], fl.tg_b2[None, :]
    scale = f0 / (2.0 * h_after)
    damping = params.damping_d
    p_lost = batch.p_lost
    demand = batch.demand
    r_after = batch.r_after

    stages = params.ufls_stages
    frac = np.array([s.shed_fraction for s in stages])
    thr = np.array([s.threshold_hz - f0 for s in stages])
    delay = np.array([s.delay_s for s in stages])
    # samples spent below a threshold before its stage trips; the first one counts as dt
    need = np.maximum(1, np.ceil(delay / dt - 1e-9)).astype(int)
    below_steps = np.zeros((B, len(stages)), dtype=int)
    tripped = np.zeros((B, len(stages)), dtype=bool)

    df = np.zeros(B)
    x1 = np.zeros((B, n_units))
    x2 = np.zeros((B, n_units))
    pm = np.zeros((B, n_units))
    shed = np.zeros(B)

    def swing(f, mech, shed_now):
        return scale * (mech - p_lost + shed_now - damping * (demand - shed_now) * f)

    def governor(f, s1, s2):
        e = -gain * f[:, None]
        return s2, (e - s1 - a2 * s2) / a1

    def linear_mech(tau):
        return r_after * min(tau / tg, 1.0)

    nadir = np.zeros(B)
    if record:
        t_grid = np.arange(steps + 1) * dt
        rec_df = np.zeros((steps + 1, B))
        rec_pm = np.zeros((steps + 1, B, n_units))
        rec_shed = np.zeros((steps + 1, B))

    for n in range(steps):
        t0 = n * dt
        if mode == GOVERNOR:
            mech = pm.sum(axis=1)
            k1 = swing(df, mech, shed)
            g1 = governor(df, x1, x2)
            f2 = df + 0.5 * dt * k1
            k2 = swing(f2, mech, shed)
            g2 = governor(f2, x1 + 0.5 * dt * g1[0], x2 + 0.5 * dt * g1[1])
            f3 = df + 0.5 * dt * k2
            k3 = swing(f3, mech, shed)
            g3 = governor(f3, x1 + 0.5 * dt * g2[0], x2 + 0.5 * dt * g2[1])
            f4 = df + dt * k3
            k4 = swing(f4, mech, shed)
            g4 = governor(f4, x1 + dt * g3[0], x2 + dt * g3[1])
            df = df + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            x1 = x1 + dt / 6.0 * (g1[0] + 2.0 * g2[0] + 2.0 * g3[0] + g4[0])
            x2 = x2 + dt / 6.0 * (g1[1] + 2.0 * g2[1] + 2.0 * g3[1] + g4[1])
            target = np.clip(b2 * x1 + b1 * x2, lo, hi)
            pm = np.clip(pm + np.clip(target - pm, -ramp_dt, ramp_dt), lo, hi)
        else:
            m0, mh, m1 = linear_mech(t0), linear_mech(t0 + 0.5 * dt), linear_mech(t0 + dt)
            k1 = swing(df, m0, shed)
            k2 = swing(df + 0.5 * dt * k1, mh, shed)
            k3 = swing(df + 0.5 * dt * k2, mh, shed)
            k4 = swing(df + dt * k3, m1, shed)
            df = df + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            share = np.where(batch.survivors, batch.r, 0.0)
            pm = share * min((t0 + dt) / tg, 1.0)

        if not np.all(np.isfinite(df)):
            bad = int(np.argmax(~np.isfinite(df)))
            raise SimulationError(f"integration blew up at step {n + 1} (t={t0 + dt:.4f} s) in scenario {bad}")

        if len(stages):
            below = (df[:, None] <= thr[None, :]) & ~tripped & batch.ufls[:, None]
            below_steps = np.where(below, below_steps + 1, 0)
            fire = below & (below_steps >= need[None, :])
            for s in range(len(stages)):
                hit = fire[:, s]
                if hit.any():
                    shed = np.where(hit, shed + frac[s] * (demand - shed), shed)
                    tripped[:, s] |= hit

        nadir = np.minimum(nadir, df)
        if record:
            rec_df[n + 1] = df
            rec_pm[n + 1] = pm
            rec_shed[n + 1] = shed

    rocof = p_lost * f0 / (2.0 * h_after)
    if record:
        return BatchResult(nadir, rocof, df.copy(), shed.copy(), t_grid, rec_df, rec_pm, rec_shed)
    return BatchResult(nadir, rocof, df.copy(), shed.copy())


def _trace(res: BatchResult, b: int) -> SfrTrace:
    return SfrTrace(
        t=res.t,
        delta_f=res.delta_f[:, b].copy(),
        pm=res.pm[:, b, :].copy(),
        shed_load=res.shed[:, b].copy(),
        metrics=SfrMetrics(float(res.nadir_hz[b]), float(res.rocof_hzps[b]),
                           float(res.fss_hz[b]), float(res.ufls_mw[b])),
    )


def simulate(scenario: SfrScenario, allow_zero_loss: bool = False) -> SfrTrace:
    batch = batch_from_scenarios([scenario], allow_zero_loss=allow_zero_loss)
    return _trace(integrate(batch, scenario.params, GOVERNOR, record=True), 0)


def simulate_linear_reserve(scenario: SfrScenario, allow_zero_loss: bool = False) -> SfrTrace:
    batch = batch_from_scenarios([scenario], allow_zero_loss=allow_zero_loss)
    return _trace(integrate(batch, scenario.params, LINEAR_RESERVE, record=True), 0)


def _integrate_chunk(args):
    batch, params, mode = args
    return integrate(batch, params, mode, record=False)


def simulate_metrics(batch: ScenarioBatch, params: StudyParams, mode: str = GOVERNOR,
                     jobs: int = 1, chunk: int = 512) -> BatchResult:
    """Metrics only, for many scenarios. Chunking and worker count never change the numbers."""
    started = time.time()
    chunks = [batch.take(slice(i, i + chunk)) for i in range(0, batch.size, chunk)]
    work = [(c, params, mode) for c in chunks]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_integrate_chunk, work))
    else:
        results = [_integrate_chunk(w) for w in work]
    if not results:
        empty = np.zeros(0)
        return BatchResult(empty, empty, empty, empty)
    out = BatchResult(
        nadir_hz=np.concatenate([r.nadir_hz for r in results]),
        rocof_hzps=np.concatenate([r.rocof_hzps for r in results]),
        fss_hz=np.concatenate([r.fss_hz for r in results]),
        ufls_mw=np.concatenate([r.ufls_mw for r in results]),
    )
    logger.info(f"Simulated {batch.size} outages in {len(chunks)} chunk(s), {time.time() - started:.1f}s")
    return out


def dump_trace(trace: SfrTrace, path) -> None:
    pd.DataFrame({
        "t_s": trace.t,
        "delta_f_hz": trace.delta_f,
        "pm_mw": trace.pm_total,
        "shed_mw": trace.shed_load,
    }).to_csv(path, index=False, float_format="%.9g")


# ---------- analytic nadir (reserve delivered linearly over T_g) ----------
def nadir_margin(h_after, r_after, p_lost, damping_mw_per_hz, params: StudyParams):
    """Left-hand side of the linear-delivery nadir condition; >= 0 means acceptable."""
    f0, tg, crit = params.f0, params.tg_delivery, params.nadir_crit
    return (np.asarray(h_after) * r_after
            - f0 * tg * np.square(p_lost) / (4.0 * crit)
            + damping_mw_per_hz * tg * p_lost * f0 / 4.0)


def implied_nadir(h_after, r_after, p_lost, damping_mw_per_hz, params: StudyParams):
    """Nadir (Hz, <= 0) at which the nadir condition holds with equality."""
    f0, tg = params.f0, params.tg_delivery
    p = np.asarray(p_lost, dtype=float)
    denom = 4.0 * (np.asarray(h_after) * r_after + damping_mw_per_hz * tg * p * f0 / 4.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(denom > 0, f0 * tg * p * p / np.where(denom > 0, denom, 1.0), np.inf)
    return np.where(p > 0, -depth, 0.0)


def scenario_units(specs: List[GeneratorSpec], online, p, r) -> Tuple[ScenarioUnit, ...]:
    return tuple(ScenarioUnit(g, bool(o), float(pp), float(rr)) for g, o, pp, rr in zip(specs, online, p, r))
