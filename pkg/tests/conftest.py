from pathlib import Path

import pytest

from src.datagen import generate
from src.island import GeneratorSpec, StudyParams, load_island, load_series
from src.labeler import label_dataset

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def toy3():
    return load_island(DATA / "toy3.island")


@pytest.fixture(scope="session")
def toy_week():
    return load_series(DATA / "toy_week.csv")


@pytest.fixture(scope="session")
def toy3_points(toy3):
    specs, params = toy3
    return generate(specs, params)


@pytest.fixture(scope="session")
def toy3_samples(toy3, toy3_points):
    specs, params = toy3
    samples, _ = label_dataset(toy3_points, specs, params)
    return samples


@pytest.fixture
def make_unit():
    """GeneratorSpec factory with harmless defaults; keyword arguments override."""
    def _make(uid: int, **kw) -> GeneratorSpec:
        d = dict(
            id=uid, name=f"U{uid}", p_min=1.0, p_max=10.0, ramp_up=10.0, ramp_down=10.0,
            min_up=1, min_down=1, inertia_h=5.0, base_mva=10.0, gain_k=0.0,
            tg_num=(0.3, 1.0), tg_den=(1.0, 2.5), cost_quad=(0.01, 10.0, 20.0), startup_cost=0.0,
        )
        d.update(kw)
        return GeneratorSpec(**d)
    return _make


@pytest.fixture
def quiet_params():
    """No load shedding, default timing."""
    return StudyParams(ufls_stages=())
