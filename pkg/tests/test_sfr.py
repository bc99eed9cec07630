import numpy as np
import pandas as pd
import pytest

from src.errors import SimulationError
from src.island import StudyParams, fleet_arrays, with_params
from src.sfr import (GOVERNOR, LINEAR_RESERVE, ScenarioBatch, SfrScenario, batch_from_scenarios, dump_trace,
                     implied_nadir, integrate, nadir_margin, scenario_units, simulate, simulate_linear_reserve,
                     simulate_metrics)


def _two_unit(make_unit, params, *, hm, p_lost, demand, r=0.0, gain_k=0.0, ufls=False, survivor_p=5.0):
    """Unit 1 is lost; unit 2 survives with inertia hm (MW·s)."""
    lost = make_unit(1, p_min=0.0, p_max=10.0, base_mva=10.0, gain_k=gain_k)
    keep = make_unit(2, p_min=1.0, p_max=40.0, inertia_h=hm / 40.0, base_mva=40.0, gain_k=gain_k)
    units = scenario_units([lost, keep], [1, 1], [p_lost, survivor_p], [0.0, r])
    return SfrScenario(units, demand, lost_unit=1, params=params, ufls=ufls)


def test_damping_only_matches_closed_form(make_unit, quiet_params):
    # H = 50 MW·s, P = 3 MW, D·demand = 0.6 MW/Hz, no governor action
    sc = _two_unit(make_unit, quiet_params, hm=50.0, p_lost=3.0, demand=60.0)
    trace = simulate(sc)
    expected = -5.0 * (1.0 - np.exp(-0.3 * trace.t))
    assert np.max(np.abs(trace.delta_f - expected)) <= 1e-6
    assert trace.metrics.nadir_hz == pytest.approx(expected[-1], abs=1e-6)
    assert trace.metrics.fss_hz == trace.delta_f[-1]
    np.testing.assert_array_equal(trace.pm_total, 0.0)


def test_halving_the_step_keeps_the_nadir(make_unit, quiet_params):
    coarse = simulate(_two_unit(make_unit, quiet_params, hm=50.0, p_lost=3.0, demand=60.0))
    fine_params = with_params(quiet_params, sim_dt=quiet_params.sim_dt / 2)
    fine = simulate(_two_unit(make_unit, fine_params, hm=50.0, p_lost=3.0, demand=60.0))
    assert abs(coarse.metrics.nadir_hz - fine.metrics.nadir_hz) < 1e-8
    assert len(fine.t) == 2 * len(coarse.t) - 1


def test_rocof_is_the_initial_slope(make_unit, quiet_params):
    sc = _two_unit(make_unit, quiet_params, hm=100.0, p_lost=8.0, demand=20.0)
    assert sc.h_after == pytest.approx(100.0)
    assert simulate(sc).metrics.rocof_hzps == pytest.approx(2.0)


def test_linear_reserve_hits_the_boundary_nadir(make_unit):
    params = StudyParams(ufls_stages=(), damping_d=0.0)
    sc = _two_unit(make_unit, params, hm=200.0, p_lost=8.0, demand=20.0, r=11.43)
    trace = simulate_linear_reserve(sc)
    closed = float(implied_nadir(200.0, 11.43, 8.0, 0.0, params))
    assert closed == pytest.approx(-3.5, abs=1e-3)
    assert trace.metrics.nadir_hz == pytest.approx(closed, abs=1e-6)
    # reserve fully delivered after tg_delivery
    assert trace.pm_total[-1] == pytest.approx(11.43)


def test_governor_settles_on_droop(make_unit):
    params = StudyParams(ufls_stages=(), sim_horizon=60.0)
    sc = _two_unit(make_unit, params, hm=100.0, p_lost=2.0, demand=20.0, r=20.0, gain_k=20.0)
    trace = simulate(sc)
    # unit 2: km/f0 = 20·40/50 = 16 MW/Hz, G(0) = b2 = 1; damping 0.2 MW/Hz
    assert trace.metrics.fss_hz == pytest.approx(-2.0 / 16.2, abs=5e-3)
    assert trace.metrics.nadir_hz < trace.metrics.fss_hz
    assert trace.pm[-1, 0] == 0.0
    assert trace.pm[-1, 1] == pytest.approx(2.0 - 0.2 * 2.0 / 16.2, abs=0.05)


def test_governor_output_respects_reserve(make_unit, quiet_params):
    sc = _two_unit(make_unit, quiet_params, hm=100.0, p_lost=8.0, demand=200.0, r=3.0, gain_k=20.0)
    trace = simulate(sc)
    assert trace.pm[:, 1].max() <= 3.0 + 1e-12
    # reserve exhausted: damping (2 MW/Hz) carries the rest
    assert trace.metrics.fss_hz == pytest.approx(-(8.0 - 3.0) / 2.0, rel=1e-3)


def test_first_ufls_stage_trips_after_its_delay(make_unit, toy3):
    _, params = toy3
    sc = _two_unit(make_unit, params, hm=50.0, p_lost=3.0, demand=60.0, ufls=True)
    trace = simulate(sc)
    assert trace.metrics.ufls_mw == pytest.approx(6.0)
    first = int(np.argmax(trace.shed_load > 0))
    below = int(np.argmax(trace.delta_f <= -1.0))
    # Δf crosses -1 Hz at 0.744 s; the 0.1 s relay delay spans ten 0.01 s samples
    assert trace.t[below] == pytest.approx(0.75)
    assert first == below + 9
    assert trace.t[first] == pytest.approx(0.84)
    assert trace.metrics.nadir_hz > -1.4


def test_relay_delay_shorter_than_a_step_trips_on_the_first_sample(make_unit, toy3):
    _, params = toy3
    stages = tuple(s._replace(delay_s=0.0) for s in params.ufls_stages)
    sc = _two_unit(make_unit, with_params(params, ufls_stages=stages), hm=50.0, p_lost=3.0, demand=60.0, ufls=True)
    trace = simulate(sc)
    first = int(np.argmax(trace.shed_load > 0))
    assert first == int(np.argmax(trace.delta_f <= -1.0))


def test_no_shedding_when_disabled_per_scenario(make_unit, toy3):
    _, params = toy3
    trace = simulate(_two_unit(make_unit, params, hm=50.0, p_lost=3.0, demand=60.0, ufls=False))
    assert trace.metrics.ufls_mw == 0.0
    np.testing.assert_array_equal(trace.shed_load, 0.0)


# ---------- response properties ----------
RESERVES = (0.0, 2.0, 4.0, 6.0, 8.0, 12.0, 20.0)


def test_more_reserve_never_deepens_the_nadir(make_unit, quiet_params):
    nadirs = [simulate(_two_unit(make_unit, quiet_params, hm=100.0, p_lost=8.0, demand=200.0, r=r,
                                 gain_k=20.0)).metrics.nadir_hz for r in RESERVES]
    for i in range(len(RESERVES)):
        for j in range(i + 1, len(RESERVES)):
            assert nadirs[j] >= nadirs[i] - 1e-9, (RESERVES[i], RESERVES[j])
    assert nadirs[-1] > nadirs[0]


@pytest.mark.parametrize("r", [0.0, 3.0, 8.0])
@pytest.mark.parametrize("gain_k", [0.0, 20.0])
def test_frequency_never_overshoots_without_shedding(make_unit, toy3, r, gain_k):
    _, params = toy3
    sc = _two_unit(make_unit, params, hm=60.0, p_lost=8.0, demand=100.0, r=r, gain_k=gain_k, ufls=False)
    assert simulate(sc).delta_f.max() <= 1e-9
    assert simulate_linear_reserve(sc).delta_f.max() <= 1e-9


@pytest.mark.parametrize("r", [5.0, 6.0, 8.0, 12.0])
def test_steady_state_respects_the_reserve_condition(make_unit, r):
    params = StudyParams(ufls_stages=(), sim_horizon=60.0)
    p_lost, demand = 8.0, 200.0
    # reserve covers the loss up to what damping absorbs at ss_crit
    assert r - p_lost >= -params.damping_d * demand * params.ss_crit
    sc = _two_unit(make_unit, params, hm=100.0, p_lost=p_lost, demand=demand, r=r, gain_k=20.0)
    assert abs(simulate(sc).metrics.fss_hz) <= params.ss_crit + 0.05


@pytest.mark.parametrize("r", [8.0, 10.0, 20.0])
def test_instant_delivery_of_full_reserve_keeps_the_nadir_near_zero(make_unit, quiet_params, r):
    params = with_params(quiet_params, tg_delivery=quiet_params.sim_dt)
    sc = _two_unit(make_unit, params, hm=50.0, p_lost=8.0, demand=60.0, r=r)
    metrics = simulate_linear_reserve(sc).metrics
    assert metrics.nadir_hz <= 0.0
    assert metrics.nadir_hz >= -2.0 * params.sim_dt * metrics.rocof_hzps


def test_invalid_scenarios(make_unit, quiet_params):
    a, b = make_unit(1), make_unit(2)
    with pytest.raises(SimulationError, match="not committed"):
        simulate(SfrScenario(scenario_units([a, b], [0, 1], [0, 5], [0, 1]), 10.0, 1, quiet_params))
    with pytest.raises(SimulationError, match="exceeds p_max"):
        simulate(SfrScenario(scenario_units([a, b], [1, 1], [5, 5], [0, 6]), 10.0, 1, quiet_params))
    with pytest.raises(SimulationError, match="empty committed set"):
        simulate(SfrScenario(scenario_units([a, b], [1, 0], [5, 0], [0, 0]), 10.0, 1, quiet_params))
    with pytest.raises(SimulationError, match="no output"):
        simulate(SfrScenario(scenario_units([a, b], [1, 1], [0, 5], [0, 1]), 10.0, 1, quiet_params))
    with pytest.raises(SimulationError, match="not in scenario"):
        simulate(SfrScenario(scenario_units([a, b], [1, 1], [5, 5], [0, 1]), 10.0, 7, quiet_params))


def test_zero_loss_allowed_on_request(make_unit, quiet_params):
    a, b = make_unit(1), make_unit(2)
    sc = SfrScenario(scenario_units([a, b], [1, 1], [0, 5], [0, 1]), 10.0, 1, quiet_params)
    trace = simulate(sc, allow_zero_loss=True)
    assert trace.metrics.nadir_hz == 0.0
    assert trace.metrics.rocof_hzps == 0.0


def test_batch_matches_single_runs(toy3):
    specs, params = toy3
    cases = [
        ([1, 1, 1], [5.0, 4.0, 3.0], 0),
        ([1, 1, 1], [5.0, 4.0, 3.0], 2),
        ([1, 1, 0], [6.0, 6.0, 0.0], 1),
        ([1, 0, 1], [3.5, 0.0, 6.0], 0),
    ]
    scenarios = []
    for online, p, lost in cases:
        r = [g.p_max - pp if o else 0.0 for g, o, pp in zip(specs, online, p)]
        scenarios.append(SfrScenario(scenario_units(specs, online, p, r), sum(p), specs[lost].id, params))
    batch = batch_from_scenarios(scenarios)
    together = simulate_metrics(batch, params, GOVERNOR, chunk=3)
    for k, sc in enumerate(scenarios):
        alone = simulate(sc).metrics
        assert together.nadir_hz[k] == alone.nadir_hz
        assert together.ufls_mw[k] == alone.ufls_mw
        assert together.fss_hz[k] == alone.fss_hz


def test_batch_rejects_mixed_fleets(make_unit, quiet_params):
    one = _two_unit(make_unit, quiet_params, hm=50.0, p_lost=3.0, demand=60.0)
    other = SfrScenario(scenario_units([make_unit(5), make_unit(6)], [1, 1], [3, 3], [0, 0]), 10.0, 5,
                        quiet_params)
    with pytest.raises(SimulationError, match="share fleet"):
        batch_from_scenarios([one, other])


def test_empty_batch_gives_empty_metrics(toy3):
    specs, params = toy3
    fleet = fleet_arrays(specs, params)
    empty = np.zeros((0, 3))
    batch = ScenarioBatch(fleet, empty.astype(bool), empty, empty, np.zeros(0), np.zeros(0), np.zeros(0, bool))
    assert len(simulate_metrics(batch, params).nadir_hz) == 0


def test_unknown_mode(make_unit, quiet_params):
    batch = batch_from_scenarios([_two_unit(make_unit, quiet_params, hm=50.0, p_lost=3.0, demand=60.0)])
    with pytest.raises(SimulationError, match="unknown simulation mode"):
        integrate(batch, quiet_params, mode="euler")


def test_trace_csv(tmp_path, make_unit, quiet_params):
    trace = simulate(_two_unit(make_unit, quiet_params, hm=50.0, p_lost=3.0, demand=60.0))
    path = tmp_path / "trace.csv"
    dump_trace(trace, path)
    df = pd.read_csv(path)
    assert list(df.columns) == ["t_s", "delta_f_hz", "pm_mw", "shed_mw"]
    assert len(df) == len(trace.t)
    assert df["delta_f_hz"].iloc[-1] == pytest.approx(trace.delta_f[-1], rel=1e-8)


def test_nadir_condition_agrees_with_linear_reserve_simulation(make_unit):
    """Sign of the nadir condition vs simulated |nadir| <= crit, outside a 0.05 Hz band."""
    params = StudyParams(ufls_stages=(), damping_d=0.001)
    rng = np.random.default_rng(11)
    specs = [make_unit(i + 1, p_max=40.0, base_mva=40.0, inertia_h=h)
             for i, h in enumerate([0.5, 1.0, 1.5, 2.5, 4.0, 6.0])]
    fleet = fleet_arrays(specs, params)
    n = 1000
    survivors = rng.random((n, fleet.size)) < 0.5
    survivors[~survivors.any(axis=1), 0] = True
    p_lost = rng.uniform(1.0, 10.0, n)
    share = rng.random((n, fleet.size)) * survivors
    r_total = p_lost * rng.uniform(1.0, 3.0, n)
    r = share / share.sum(axis=1, keepdims=True) * r_total[:, None]
    batch = ScenarioBatch(
        fleet=fleet, survivors=survivors, p=np.full((n, fleet.size), 5.0), r=r, p_lost=p_lost,
        demand=rng.uniform(10.0, 40.0, n), ufls=np.zeros(n, dtype=bool),
    )
    res = simulate_metrics(batch, params, LINEAR_RESERVE)
    margin = nadir_margin(batch.h_after, batch.r_after, batch.p_lost, params.damping_d * batch.demand, params)
    depth = np.abs(res.nadir_hz)
    clear = np.abs(depth - params.nadir_crit) > 0.05
    agree = (margin[clear] >= 0) == (depth[clear] <= params.nadir_crit)
    assert clear.sum() > 900
    assert (depth[clear] <= params.nadir_crit).any() and (depth[clear] > params.nadir_crit).any()
    assert agree.mean() >= 0.99


def test_implied_nadir_edges(toy3):
    _, params = toy3
    assert implied_nadir(100.0, 10.0, 0.0, 0.2, params) == 0.0
    assert implied_nadir(0.0, 0.0, 5.0, 0.0, params) == -np.inf
    deep = implied_nadir(np.array([50.0, 200.0]), 10.0, 8.0, 0.0, params)
    assert deep[0] < deep[1] < 0
