import numpy as np
import pytest

from ntnisac.cells import BBox, build_grid
from ntnisac.rain import NoRain, RainField, RainParams, init_rain, write_intensity_csv


class Ones:
    def draw(self, n_rows, n_cols):
        return np.ones((n_rows, n_cols), dtype=int)


def small_grid():
    return build_grid(BBox(44, 6, 46, 8), (4, 4), Ones())


def test_stationary_active_probability():
    # 1.886 / (1.886 + 5.376)
    assert RainParams().stationary_active_probability == pytest.approx(0.2597, abs=5e-5)
    assert RainParams(mean_episode_h=float("inf")).stationary_active_probability == 1.0


@pytest.mark.parametrize("kw", [
    {"storm_density_per_km2": -1}, {"mean_diameter_km": 0}, {"mean_gap_h": 0}, {"mean_intensity_mmh": -1},
])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        RainParams(**kw)


def test_storm_count_matches_density():
    bbox = BBox(30, -10, 65, 30)
    counts = [len(init_rain(bbox, RainParams(), s).active) for s in range(20)]
    assert np.mean(counts) == pytest.approx(8.4e-4 * bbox.area_km2, rel=0.02)


def test_zero_density_is_dry():
    grid = small_grid()
    field = init_rain(grid.bbox, RainParams(storm_density_per_km2=0.0), 1, grid)
    assert len(field.active) == 0
    field.step(3600.0)
    assert not field.per_cell_intensity.any()


def test_per_cell_intensity_is_max_of_covering_active_storms():
    grid = small_grid()
    c = grid.cell(5).center_latlon
    far = (0.0, 100.0)
    field = RainField(
        [c, c, far], [20.0, 20.0, 500.0], [3.0, 7.0, 50.0], [True, True, True],
        RainParams(), np.random.default_rng(0), grid,
    )
    assert field.intensity_of(5) == 7.0
    # a 20 km disk reaches no other cell center (spacing is 0.5 degrees)
    assert np.count_nonzero(field.per_cell_intensity) == 1
    field2 = RainField([c, c], [20.0, 20.0], [3.0, 7.0], [True, False], RainParams(), np.random.default_rng(0), grid)
    assert field2.intensity_of(5) == 3.0


def test_markov_chain_reaches_stationary_fraction():
    params = RainParams()
    n = 4000
    field = RainField(
        np.zeros((n, 2)), np.ones(n), np.ones(n), np.zeros(n, dtype=bool),
        params, np.random.default_rng(11),
    )
    frac = []
    for k in range(3000):
        field.step(600.0)
        if k >= 1000:
            frac.append(field.active.mean())
    assert np.mean(frac) == pytest.approx(params.stationary_active_probability, abs=0.01)


def test_same_seed_same_trajectory():
    grid = small_grid()
    a = init_rain(grid.bbox, RainParams(storm_density_per_km2=5e-3), 9, grid)
    b = init_rain(grid.bbox, RainParams(storm_density_per_km2=5e-3), 9, grid)
    for _ in range(50):
        a.step(600.0)
        b.step(600.0)
        np.testing.assert_array_equal(a.per_cell_intensity, b.per_cell_intensity)


def test_storm_records_and_timers():
    field = RainField([[1.0, 2.0]], [10.0], [4.0], [True], RainParams(), np.random.default_rng(0))
    (s,) = field.storms
    assert s.center_latlon == (1.0, 2.0) and s.state == "active" and s.state_timer_s == 0.0
    field.step(10.0)
    assert field.storms[0].state_timer_s in (0.0, 10.0)


def test_no_rain_and_csv(tmp_path):
    dry = NoRain(3)
    dry.step(10.0)
    assert list(dry.per_cell_intensity) == [0.0, 0.0, 0.0]
    p = tmp_path / "rain.csv"
    write_intensity_csv(p, [(0, 1, 0.1)])
    assert p.read_text().splitlines() == ["frame,cell_id,intensity_mmh", "0,1,0.1"]
