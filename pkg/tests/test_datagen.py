import itertools
from collections import defaultdict

import pytest

from src.datagen import (enumerate_levels, feasibility_violations, generate, level_counts, load_dataset,
                         save_dataset)
from src.errors import ConfigError, DatasetError
from src.island import StudyParams, load_island, with_params


@pytest.fixture
def small_fleet(make_unit):
    """Three units with at most five levels each and distinct cost curves."""
    specs = [
        make_unit(1, p_min=2.0, p_max=4.0, inertia_h=2.0, cost_quad=(0.010, 10.0, 20.0)),
        make_unit(2, p_min=2.0, p_max=4.0, inertia_h=3.0, cost_quad=(0.030, 9.0, 25.0)),
        make_unit(3, p_min=1.5, p_max=3.5, inertia_h=4.0, cost_quad=(0.050, 11.0, 12.0)),
    ]
    params = StudyParams(gen_floor=4.0, gen_ceiling=10.0, power_step=0.5, keep_per_level=3)
    return specs, params


def _brute_force(specs, params):
    """Every level vector passing the band, reserve and RoCoF filters, written out longhand."""
    grids = [[0.0] + enumerate_levels(g, params.power_step) for g in specs]
    found = set()
    for levels in itertools.product(*grids):
        on = [g for g, p in zip(specs, levels) if p > 0]
        if not on:
            continue
        gen = sum(levels)
        if not params.gen_floor - 1e-9 <= gen <= params.gen_ceiling + 1e-9:
            continue
        if sum(g.p_max for g in on) - gen < max(g.p_max for g in on) - 1e-9:
            continue
        inertia = sum(g.hm for g in on)
        if any(p * params.f0 > 2 * params.rocof_crit * (inertia - g.hm) + 1e-9
               for g, p in zip(specs, levels) if p > 0):
            continue
        found.add(tuple(levels))
    return found


def test_level_grid(make_unit):
    assert enumerate_levels(make_unit(1, p_min=3.0, p_max=12.0), 0.5)[:3] == [3.0, 3.5, 4.0]
    assert len(enumerate_levels(make_unit(1, p_min=3.0, p_max=12.0), 0.5)) == 19
    assert enumerate_levels(make_unit(1, p_min=4.0, p_max=10.7, base_mva=11.0), 0.5)[-2:] == [10.5, 10.7]
    assert enumerate_levels(make_unit(1, p_min=0.0, p_max=1.0), 0.5) == [0.5, 1.0]
    with pytest.raises(ConfigError, match="power step"):
        enumerate_levels(make_unit(1), 0.0)


def test_palma_off_grid_unit_keeps_p_max(data_dir):
    specs, params = load_island(data_dir / "palma11.island")
    grid = enumerate_levels(specs[-1], params.power_step)
    assert specs[-1].p_max == 10.7
    assert grid[0] == specs[-1].p_min
    assert grid[-2:] == [10.5, 10.7]


def test_untruncated_output_equals_brute_force(small_fleet):
    specs, params = small_fleet
    points = generate(specs, params, keep=None)
    assert {p.levels for p in points} == _brute_force(specs, params)
    assert len(points) == len({p.levels for p in points})


def test_truncation_keeps_the_cheapest_per_level(small_fleet):
    specs, params = small_fleet
    full = generate(specs, params, keep=None)
    kept = generate(specs, params)
    by_level = defaultdict(list)
    for p in full:
        by_level[round(p.total_gen / params.power_step)].append(p.levels)
    expected = [lv for key in sorted(by_level) for lv in by_level[key][:params.keep_per_level]]
    assert [p.levels for p in kept] == expected
    assert max(level_counts(kept, params.power_step).values()) <= params.keep_per_level


def test_points_are_ordered_and_consistent(small_fleet):
    specs, params = small_fleet
    points = generate(specs, params)
    keys = [(round(p.total_gen / params.power_step), p.cost, p.levels) for p in points]
    assert keys == sorted(keys)
    assert [p.point_id for p in points] == list(range(len(points)))
    for p in points:
        assert p.u == tuple(int(x > 0) for x in p.levels)
        assert p.total_gen == pytest.approx(sum(p.levels))
        assert p.cost == pytest.approx(sum(g.cost(x) for g, x in zip(specs, p.levels) if x > 0))
        assert p.total_reserve == pytest.approx(sum(g.p_max - x for g, x in zip(specs, p.levels) if x > 0))


def test_toy3_points_pass_independent_checks(toy3, toy3_points):
    specs, params = toy3
    assert toy3_points
    for p in toy3_points:
        assert feasibility_violations(p.levels, specs, params) == []
    assert max(level_counts(toy3_points, params.power_step).values()) <= params.keep_per_level
    # a single online unit can never cover its own loss
    assert all(sum(p.u) >= 2 for p in toy3_points)


def test_workers_do_not_change_the_result(small_fleet):
    specs, params = small_fleet
    assert generate(specs, params, jobs=2) == generate(specs, params, jobs=1)


def test_reserve_rule_all_counts_offline_units(small_fleet, make_unit):
    specs, params = small_fleet
    # unit 4 can never be committed inside the band
    big = specs + [make_unit(4, p_min=6.0, p_max=9.0, inertia_h=3.0, base_mva=10.0)]
    online = generate(big, params, keep=None)
    assert all(p.levels[3] == 0.0 for p in online)
    assert {p.levels[:3] for p in online} == {p.levels for p in generate(specs, params, keep=None)}
    strict = with_params(params, reserve_rule="all")
    assert feasibility_violations(online[0].levels, big, strict) != []
    with pytest.raises(DatasetError, match="reserve rule 'all'"):
        generate(big, strict)


def test_infeasible_band_is_diagnosed(small_fleet):
    specs, _ = small_fleet
    params = StudyParams(gen_floor=50.0, gen_ceiling=60.0, power_step=0.5)
    with pytest.raises(DatasetError, match="no feasible operating point"):
        generate(specs, params)


def test_rocof_limit_is_diagnosed(small_fleet):
    specs, _ = small_fleet
    params = StudyParams(gen_floor=4.0, gen_ceiling=10.0, power_step=0.5, rocof_crit=0.01)
    with pytest.raises(DatasetError, match=r"fail the RoCoF limit"):
        generate(specs, params)


def test_dataset_csv(tmp_path, small_fleet):
    specs, params = small_fleet
    points = generate(specs, params)
    path = tmp_path / "dataset.csv"
    save_dataset(points, specs, path)
    header = path.read_text().splitlines()[0]
    assert header == "point_id,gen_mw,cost_eur,p_1,p_2,p_3"
    again = load_dataset(path, specs, params)
    assert [p.levels for p in again] == [p.levels for p in points]
    assert [p.point_id for p in again] == [p.point_id for p in points]


def test_dataset_missing_column(tmp_path, small_fleet):
    specs, params = small_fleet
    path = tmp_path / "dataset.csv"
    path.write_text("point_id,gen_mw,cost_eur,p_1,p_2\n0,4,100,2,2\n")
    with pytest.raises(DatasetError, match="p_3"):
        load_dataset(path, specs, params)
