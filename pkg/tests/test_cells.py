import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntnisac.cells import (
    BBox,
    CsvPopulation,
    SyntheticPopulation,
    active_users,
    build_grid,
    latlon_to_ecef,
    patch_area_km2,
)


class Fixed:
    def __init__(self, pop):
        self.pop = np.asarray(pop)

    def draw(self, n_rows, n_cols):
        return self.pop.reshape(n_rows, n_cols)


def test_ecef_axes():
    np.testing.assert_allclose(latlon_to_ecef(0, 0, 1.0), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(latlon_to_ecef(0, 90, 1.0), [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(latlon_to_ecef(90, 0, 1.0), [0, 0, 1], atol=1e-15)


def test_hemisphere_area():
    r = 6371.0
    assert patch_area_km2(0, -180, 90, 180) == pytest.approx(2 * math.pi * r**2, rel=1e-12)


@pytest.mark.parametrize("pop,frac,expected", [(50_000, 0.001, 50), (1, 0.001, 1), (1499, 0.001, 1), (1500, 0.001, 2)])
def test_active_users(pop, frac, expected):
    assert active_users(pop, frac) == expected


def test_active_users_rejects_bad_inputs():
    with pytest.raises(ValueError):
        active_users(0, 0.001)
    with pytest.raises(ValueError):
        active_users(10, 1.5)


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(10, 0, 5, 1)
    with pytest.raises(ValueError):
        BBox(-91, 0, 0, 1)


def test_grid_ids_and_corners():
    grid = build_grid(BBox(40, 0, 42, 3), (2, 3), Fixed(np.full(6, 1000)))
    assert list(grid.cell_ids) == [0, 1, 2, 3, 4, 5]
    c = grid.cell(4)
    assert (c.row, c.col) == (1, 1)
    assert c.corner_latlons == ((41.0, 1.0), (41.0, 2.0), (42.0, 2.0), (42.0, 1.0))
    assert c.center_latlon == (41.5, 1.5)
    assert c.active_users == 1


def test_cell_areas_tile_the_bbox():
    bbox = BBox(42, 5, 48, 11)
    grid = build_grid(bbox, (10, 10), SyntheticPopulation(seed=1))
    assert sum(c.area_km2 for c in grid) == pytest.approx(bbox.area_km2, rel=1e-12)


def test_zero_population_cells_dropped():
    grid = build_grid(BBox(0, 0, 1, 2), (1, 2), Fixed([0, 10]))
    assert list(grid.cell_ids) == [1]
    assert grid.cell_id_at(0.5, 0.5) is None
    assert grid.cell_id_at(0.5, 1.5) == 1


def test_shared_edge_goes_south_west():
    grid = build_grid(BBox(0, 0, 2, 2), (2, 2), Fixed(np.ones(4)))
    assert grid.locate(1.0, 1.0) == (0, 0)
    assert grid.locate(0.0, 0.0) == (0, 0)
    assert grid.locate(2.0, 2.0) == (1, 1)
    assert grid.locate(2.5, 1.0) is None


@settings(max_examples=200, deadline=None)
@given(lat=st.floats(0, 3), lon=st.floats(0, 4))
def test_located_tile_contains_point(lat, lon):
    grid = build_grid(BBox(0, 0, 3, 4), (3, 4), Fixed(np.ones(12)))
    c = grid.cell(grid.cell_id_at(lat, lon))
    (lat0, lon0), _, (lat1, lon1), _ = c.corner_latlons
    assert lat0 <= lat <= lat1 and lon0 <= lon <= lon1


def test_synthetic_population_seeded():
    a = SyntheticPopulation(seed=3).draw(4, 5)
    b = SyntheticPopulation(seed=3).draw(4, 5)
    np.testing.assert_array_equal(a, b)
    assert (a >= 1).all()
    big = SyntheticPopulation(median=5e4, sigma=1.0, seed=0).draw(200, 200)
    assert np.median(big) == pytest.approx(5e4, rel=0.05)


def test_csv_population(tmp_path):
    p = tmp_path / "pop.csv"
    p.write_text("cell_row,cell_col,population\n0,0,10\n0,1,20\n1,0,30\n1,1,40\n")
    np.testing.assert_array_equal(CsvPopulation(p).draw(2, 2), [[10, 20], [30, 40]])
    with pytest.raises(ValueError, match="4 population rows"):
        CsvPopulation(p).draw(3, 3)
    p.write_text("cell_row,cell_col,population\n0,0,10\n0,0,20\n1,0,30\n1,1,40\n")
    with pytest.raises(ValueError, match="duplicate or missing"):
        CsvPopulation(p).draw(2, 2)
