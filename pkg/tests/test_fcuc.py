import math

import numpy as np
import pytest

from src.classifier import LinearClassifier
from src.errors import ModelBuildError
from src.fcuc import (ANALYTICAL, BASE, ML, NadirVariant, UcSchedule, approximate_nadir, breakpoints_for, build,
                      chord_square, lname, load_schedule, ml_big_m, outage_bounds, save_schedule, vname)
from src.island import load_series, with_params
from src.milp import BINARY, MilpModel
from src.mps import mps_text, parse_mps, read_mps, write_mps
from src.scipy_solver import HIGHS_OPTIMAL, solve_model
from src.sfr import implied_nadir

HOURS = 4


@pytest.fixture(scope="module")
def hand_classifier():
    return LinearClassifier(theta0=-60.0, theta=(1.0, 0.0, 0.0, 0.0), method="LR")


def test_base_model_size(toy3, toy_week):
    specs, params = toy3
    st = build(specs, toy_week, params, NadirVariant.base(), HOURS).stats()
    # per unit-hour: u v w p r d1..d4; per hour: wg sg
    assert st["variables"] == HOURS * (9 * 3 + 2)
    assert st["binaries"] == HOURS * 3 * 3
    # per unit-hour 9 unit rows + rocof + ss; one balance row per hour
    assert st["rows"] == HOURS * (11 * 3 + 1)


def test_ml_adds_one_row_per_outage(toy3, toy_week, hand_classifier):
    specs, params = toy3
    base = build(specs, toy_week, params, NadirVariant.base(), HOURS).stats()
    ml = build(specs, toy_week, params, NadirVariant.ml(hand_classifier), HOURS)
    assert ml.stats()["rows"] == base["rows"] + HOURS * 3
    assert ml.stats()["variables"] == base["variables"]
    assert len(ml.rows_with_prefix("ml_")) == HOURS * 3


def test_analytical_block_size(toy3, toy_week):
    specs, params = toy3
    J = 4
    base = build(specs, toy_week, params, NadirVariant.base(), HOURS).stats()
    an = build(specs, toy_week, params, NadirVariant.analytical(breakpoints=J), HOURS).stats()
    outages = HOURS * 3
    assert an["rows"] - base["rows"] == outages * (3 * J + 15)
    assert an["variables"] - base["variables"] == outages * (2 + 3 * (J + 1) + 3 * J)
    assert an["binaries"] - base["binaries"] == outages * 3 * J


def test_names_are_fixed_width(toy3, toy_week):
    specs, params = toy3
    m = build(specs, toy_week, params, NadirVariant.base(), HOURS)
    assert vname("u", 1, 1) == "u_t001_i01"
    assert lname("rocof", 12, 3) == "rocof_t012_l03"
    assert m.var_names[:9] == ["u_t001_i01", "v_t001_i01", "w_t001_i01", "p_t001_i01", "r_t001_i01",
                               "d1_t001_i01", "d2_t001_i01", "d3_t001_i01", "d4_t001_i01"]
    assert [m.kinds[m.var(vname("u", t, i))] for t in (1, 2) for i in (1, 2, 3)] == [BINARY] * 6


def test_frequency_rows(toy3, toy_week):
    specs, params = toy3
    m = build(specs, toy_week, params, NadirVariant.base(), 1)
    coefs, sense, rhs = m.row(lname("rocof", 1, 1))
    big = params.f0 * specs[0].p_max / (2 * params.rocof_crit)
    assert sense == "G" and rhs == -big
    assert coefs == {"u_t001_i02": 48.0, "u_t001_i03": 35.0,
                     "p_t001_i01": -params.f0 / (2 * params.rocof_crit), "u_t001_i01": -big}
    coefs, _, rhs = m.row(lname("ss", 1, 2))
    assert set(coefs) == {"r_t001_i01", "r_t001_i03", "p_t001_i02", "u_t001_i02"}
    assert rhs == pytest.approx(-params.damping_d * toy_week.demand[0] * params.ss_crit - specs[1].p_max)


def test_unbounded_criteria_drop_their_rows(toy3, toy_week):
    specs, params = toy3
    loose = with_params(params, rocof_crit=math.inf, ss_crit=math.inf)
    m = build(specs, toy_week, loose, NadirVariant.base(), HOURS)
    assert m.rows_with_prefix("rocof_") == []
    assert m.rows_with_prefix("ss_") == []


def test_ml_row(toy3, toy_week):
    specs, params = toy3
    clf = LinearClassifier(theta0=-40.0, theta=(0.5, 0.1, -2.0, 1.5), method="SVM", c_reg=1.0)
    m = build(specs, toy_week, params, NadirVariant.ml(clf), 1)
    coefs, sense, rhs = m.row(lname("ml", 1, 1))
    big = ml_big_m(clf, specs, 0)
    h, k, p, r = outage_bounds(specs, 0)
    assert big == pytest.approx(40.0 + 0.5 * h + 0.1 * k + 2.0 * p + 1.5 * r)
    assert sense == "G"
    assert rhs == pytest.approx(40.0 - big)
    assert coefs["u_t001_i02"] == pytest.approx(0.5 * specs[1].hm + 0.1 * specs[1].km)
    assert coefs["r_t001_i03"] == 1.5
    assert coefs["p_t001_i01"] == -2.0
    assert coefs["u_t001_i01"] == -big
    assert "r_t001_i01" not in coefs


def test_build_rejects_bad_horizons(toy3, toy_week):
    specs, params = toy3
    for horizon in (0, len(toy_week) + 1):
        with pytest.raises(ModelBuildError, match="horizon"):
            build(specs, toy_week, params, NadirVariant.base(), horizon)


def test_build_rejects_demand_above_capacity(toy3, data_dir):
    specs, params = toy3
    winter = load_series(data_dir / "winter_week.csv")
    with pytest.raises(ModelBuildError, match="exceeds thermal capacity"):
        build(specs, winter, params)


def test_variant_checks():
    with pytest.raises(ModelBuildError, match="needs a classifier"):
        NadirVariant(ML).validate()
    with pytest.raises(ModelBuildError, match="J >= 2"):
        NadirVariant.analytical(breakpoints=1).validate()
    with pytest.raises(ModelBuildError, match="alpha"):
        NadirVariant.analytical(alpha=-1.0).validate()
    with pytest.raises(ModelBuildError, match="unknown nadir variant"):
        NadirVariant("exact").validate()
    assert NadirVariant.base().tag == BASE


def test_breakpoint_ranges_must_cover(toy3):
    specs, _ = toy3
    with pytest.raises(ModelBuildError, match="block P"):
        breakpoints_for(specs, NadirVariant.analytical(ranges={"P": (0.0, 5.0)}))
    wide = breakpoints_for(specs, NadirVariant.analytical(breakpoints=5, ranges={"P": (0.0, 20.0)}))
    np.testing.assert_allclose(wide[0].grids["P"], [0, 4, 8, 12, 16, 20])


def test_chord_error_is_bounded():
    grid = np.linspace(-1.5, 2.5, 9)
    step = grid[1] - grid[0]
    x = np.linspace(-1.5, 2.5, 2001)
    err = chord_square(x, grid) - x * x
    assert err.min() >= -1e-12
    assert err.max() <= step * step / 4 + 1e-12
    np.testing.assert_allclose(chord_square(grid, grid), grid * grid)


def test_approximate_nadir_tracks_the_closed_form(toy3):
    specs, params = toy3
    bp = breakpoints_for(specs, NadirVariant.analytical(breakpoints=10))[0]
    h_max, _, _, r_max = outage_bounds(specs, 0)
    # operating range around the nadir limit
    for h in (48.0, 60.0, h_max):
        for r in (10.0, 14.0, r_max):
            for p in (3.0, 5.5, 8.0):
                exact = float(implied_nadir(h, r, p, 0.2, params))
                assert abs(approximate_nadir(h, r, p, 0.2, bp, params) - exact) <= 0.2
    assert approximate_nadir(h_max, r_max, 0.0, 0.2, bp, params) == 0.0


def test_analytical_rows_use_the_grids(toy3, toy_week):
    specs, params = toy3
    m = build(specs, toy_week, params, NadirVariant.analytical(breakpoints=3), 1)
    bp = m.breakpoints[2]
    coefs, sense, rhs = m.row("linkP_t001_l03_j00")
    assert sense == "E" and rhs == 0.0
    assert coefs["p_t001_i03"] == 1.0
    np.testing.assert_allclose([coefs.get(f"lamP_t001_l03_j{j:02d}", 0.0) for j in range(4)], -bp.grids["P"])
    coefs, sense, _ = m.row(lname("nadir", 1, 3))
    assert sense == "G"
    assert coefs["p_t001_i03"] == pytest.approx(params.damping_d * toy_week.demand[0] * params.tg_delivery
                                                * params.f0 / 4)


def test_analytical_solution_keeps_breakpoints_adjacent_and_gates_offline_units(toy3, toy_week):
    specs, params = toy3
    params = with_params(params, tg_delivery=1.0)
    m = build(specs, toy_week, params, NadirVariant.analytical(breakpoints=3), 2)
    for t in (1, 2):
        m.fix(vname("u", t, 3), 0.0)
    status, x, _ = solve_model(m, time_limit=60.0, mip_gap=1e-9)
    assert status == HIGHS_OPTIMAL
    values = m.values_by_name(x)
    for t in (1, 2):
        for l in (1, 2, 3):
            for block in ("P", "z1", "z2"):
                lam = np.array([values[f"lam{block}_t{t:03d}_l{l:02d}_j{j:02d}"] for j in range(4)])
                support = np.flatnonzero(lam > 1e-9)
                assert len(support) <= 2, (t, l, block, lam)
                assert len(support) < 2 or support[1] == support[0] + 1, (t, l, block, lam)
        # unit 3 is offline: its gated rows must hold with room to spare
        for entity in ("rocof", "ss", "nadir"):
            coefs, sense, rhs = m.row(lname(entity, t, 3))
            activity = sum(c * values[n] for n, c in coefs.items())
            assert sense == "G"
            assert activity - rhs > 1e-6, (entity, t)


# ---------- MPS ----------
def _same_model(a: MilpModel, b: MilpModel) -> None:
    assert a.var_names == b.var_names
    assert a.kinds == b.kinds
    assert a.lb == b.lb and a.ub == b.ub
    assert a.row_names == b.row_names
    assert a.senses == b.senses
    assert a.rhs == b.rhs
    assert a.row_coefs == b.row_coefs
    assert a.objective == b.objective


@pytest.mark.parametrize("tag", [BASE, ML, ANALYTICAL])
def test_mps_reads_back_the_same_model(tmp_path, toy3, toy_week, hand_classifier, tag):
    specs, params = toy3
    variant = {BASE: NadirVariant.base(), ML: NadirVariant.ml(hand_classifier),
               ANALYTICAL: NadirVariant.analytical(breakpoints=3)}[tag]
    m = build(specs, toy_week, params, variant, 2)
    path = write_mps(m, tmp_path / f"model_{tag}.mps")
    _same_model(m, read_mps(path))


def test_mps_bytes_are_deterministic(toy3, toy_week):
    specs, params = toy3
    one = mps_text(build(specs, toy_week, params, NadirVariant.analytical(breakpoints=3), 2))
    two = mps_text(build(specs, toy_week, params, NadirVariant.analytical(breakpoints=3), 2))
    assert one == two
    assert one.startswith("NAME FCUC_ANALYTICAL\nROWS\n N  OBJ\n")
    assert one.endswith("ENDATA\n")


def test_mps_keeps_general_integers_and_constants():
    m = MilpModel("SMALL")
    m.add_var("x", -math.inf, 4.0)
    m.add_var("n", 0.0, math.inf, kind="I")
    m.add_var("b", kind=BINARY)
    m.add_row("cap", {"x": 1.0, "n": 2.5}, "L", 7.0)
    m.set_objective({"x": 1.0, "b": 3.0}, constant=12.5)
    back = parse_mps(mps_text(m))
    _same_model(m, back)
    assert back.obj_constant == 12.5
    assert back.kinds == ["C", "I", "B"]


def test_mps_rejects_unwritable_values():
    m = MilpModel("BAD")
    m.add_var("x", math.inf, math.inf)
    with pytest.raises(ModelBuildError, match="cannot be written"):
        mps_text(m)
    m = MilpModel("BAD")
    m.add_var("bad name", 0.0, 1.0)
    with pytest.raises(ModelBuildError, match="cannot be written"):
        mps_text(m)


def test_model_rejects_non_finite_coefficients():
    m = MilpModel()
    m.add_var("x", 0.0, 1.0)
    with pytest.raises(ModelBuildError, match="coefficient"):
        m.add_row("r", {"x": math.nan}, "L", 1.0)
    with pytest.raises(ModelBuildError, match="rhs"):
        m.add_row("r", {"x": 1.0}, "L", math.inf)
    with pytest.raises(ModelBuildError, match="undeclared"):
        m.add_row("r", {"y": 1.0}, "L", 1.0)


# ---------- schedule files ----------
def test_schedule_csv(tmp_path):
    s = UcSchedule(
        unit_ids=[1, 2],
        u=np.array([[1.0, 0.0], [1.0, 1.0]]), v=np.array([[1.0, 0.0], [0.0, 1.0]]), w=np.zeros((2, 2)),
        p=np.array([[5.0, 0.0], [4.0, 3.0]]), r=np.array([[2.0, 0.0], [1.0, 1.5]]),
        wind_used=np.array([1.0, 0.5]), solar_used=np.array([0.0, 0.25]),
        objective=321.5, status="optimal", wall_time=0.4, variant=ML,
    )
    path = tmp_path / "schedule_ml.csv"
    save_schedule(s, path)
    back = load_schedule(path)
    assert back.unit_ids == [1, 2]
    np.testing.assert_array_equal(back.p, s.p)
    np.testing.assert_array_equal(back.solar_used, s.solar_used)
    assert (back.objective, back.status, back.variant) == (321.5, "optimal", ML)
    assert back.balance_residual(np.array([6.0, 7.75])) == 0.0
