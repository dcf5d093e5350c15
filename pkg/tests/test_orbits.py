import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_leo, make_vleo
from ntnisac.cells import BBox, Cell, build_grid, latlon_to_ecef
from ntnisac.orbits import (
    OrbitalShell,
    SatelliteState,
    WalkerPhasing,
    build_constellation,
    cell_edge_distance,
    elevation_deg,
    positions_at,
    propagate,
    visible_cells,
    zenith_angle_deg,
)

R = 6371.0e3
MU = 3.986004418e14
OMEGA_E = 7.2921159e-5


def single(alt_m=570e3, incl=70.0):
    return make_leo(num_planes=1, sats_per_plane=1, altitude_m=alt_m, inclination_deg=incl)


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def rot_x(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def test_single_satellite_radius():
    const = build_constellation([single()])
    assert len(const) == 1
    assert np.linalg.norm(positions_at(const, 0.0)[0]) == pytest.approx(R + 570e3, abs=1e-6)


@pytest.mark.parametrize("total,planes,per_plane", [(720, 36, 20), (1584, 72, 22)])
def test_shell_totals_split_over_planes(total, planes, per_plane):
    shell = OrbitalShell.from_total(
        total, planes, shell_id="s", altitude_m=570e3, inclination_deg=53, carrier_hz=2e9,
        bandwidth_hz=30e6, tx_power_w=75, antenna_gain_db=30, beams=19,
    )
    assert shell.sats_per_plane == per_plane
    assert len(build_constellation([shell])) == total


def test_declared_total_mismatch_rejected():
    with pytest.raises(ValueError, match="does not match"):
        make_leo(total_satellites=721)
    with pytest.raises(ValueError):
        OrbitalShell.from_total(
            721, 36, shell_id="s", altitude_m=570e3, inclination_deg=53, carrier_hz=2e9,
            bandwidth_hz=30e6, tx_power_w=75, antenna_gain_db=30, beams=19,
        )


@pytest.mark.parametrize("field,value", [
    ("altitude_m", 0.0), ("inclination_deg", 0.0), ("inclination_deg", 181.0),
    ("num_planes", 0), ("sats_per_plane", 0), ("beams", 0),
])
def test_invalid_shell_parameters(field, value):
    with pytest.raises(ValueError):
        make_leo(**{field: value})


def test_sensing_shell_needs_symbol_numerology():
    with pytest.raises(ValueError):
        make_vleo(symbol_duration_s=None)
    with pytest.raises(ValueError):
        make_vleo(symbol_bandwidth_hz=0.0)


def test_epoch_layout_matches_rotation_oracle():
    # Walker elements placed by explicit rotations R_z(raan) R_x(i) [cos u, sin u, 0]
    shell = make_leo(num_planes=3, sats_per_plane=4)
    ph = WalkerPhasing(phase_factor=1, raan_offset_deg=10.0, anomaly_offset_deg=5.0)
    pos = positions_at(build_constellation([shell], ph), 0.0)
    k = 0
    for p in range(3):
        for j in range(4):
            raan = math.radians(10.0 + p * 120.0)
            u = math.radians(5.0 + j * 90.0 + p * 360.0 / 12)
            ref = rot_z(raan) @ rot_x(math.radians(70.0)) @ np.array([math.cos(u), math.sin(u), 0.0])
            np.testing.assert_allclose(pos[k], (R + 570e3) * ref, atol=1e-6)
            k += 1


def test_frame_zero_is_epoch():
    const = build_constellation([make_leo(num_planes=4, sats_per_plane=5)])
    states = propagate(const, 0, 10.0)
    np.testing.assert_array_equal(np.array([s.position_ecef_m for s in states]), positions_at(const, 0.0))


def test_one_frame_advance_equals_two_body_rate():
    const = build_constellation([single()])
    T = 10.0
    p0 = positions_at(const, 0.0)[0]
    p1 = positions_at(const, T)[0]
    # undo Earth rotation to compare in the inertial frame
    p1_inertial = rot_z(OMEGA_E * T) @ p1
    angle = math.acos(np.dot(p0, p1_inertial) / (np.linalg.norm(p0) * np.linalg.norm(p1_inertial)))
    assert angle == pytest.approx(math.sqrt(MU / (R + 570e3) ** 3) * T, rel=1e-9)


def test_time_composition():
    const = build_constellation([make_vleo(num_planes=3, sats_per_plane=3)])
    a = np.array([s.position_ecef_m for s in propagate(const, 7, 10.0)])
    b = np.array([s.position_ecef_m for s in propagate(const, 1, 70.0)])
    assert np.abs(a - b).max() < 1.0


def test_negative_frame_rejected():
    with pytest.raises(ValueError):
        propagate(build_constellation([single()]), -1, 10.0)


def test_radius_conserved_over_long_horizon():
    const = build_constellation([make_leo(num_planes=2, sats_per_plane=3), make_vleo(num_planes=2, sats_per_plane=3)])
    expected = const.radius_m
    for k in (0, 1, 17, 999, 10_000):
        r = np.linalg.norm(positions_at(const, k * 10.0), axis=1)
        assert np.abs(r - expected).max() < 1.0


def _one_cell_grid(lat=45.0, lon=7.0, half=0.05):
    return build_grid(BBox(lat - half, lon - half, lat + half, lon + half), (1, 1))


def test_zenith_satellite_sees_cell():
    grid = _one_cell_grid()
    up = grid.centers_ecef[0] / np.linalg.norm(grid.centers_ecef[0])
    sat = SatelliteState(0, "VLEO", (R + 200e3) * up)
    assert visible_cells(sat, grid, 89.9) == {int(grid.cell_ids[0])}


def test_satellite_below_horizon_excluded():
    grid = _one_cell_grid()
    sat = SatelliteState(0, "VLEO", -(R + 200e3) * grid.centers_ecef[0] / R)
    assert visible_cells(sat, grid, 0.0) == set()


def test_zero_area_cell_edge_distance_is_slant_range():
    center = latlon_to_ecef(45.0, 7.0)
    cell = Cell(0, 0, 0, (45.0, 7.0), ((45.0, 7.0),) * 4, 1000, 0.001, 1, center)
    sat = SatelliteState(0, "VLEO", center * (R + 200e3) / R)
    d, el = cell_edge_distance(sat, cell)
    assert d == pytest.approx(200e3, abs=1e-6)
    assert el == pytest.approx(90.0, abs=1e-6)


def test_zenith_edge_distance_planar_oracle():
    # corners 50 km from the center along the meridian/parallel diagonals
    lat0, lon0 = 10.0, 20.0
    dlat = math.degrees(50e3 / math.sqrt(2) / R)
    dlon = dlat / math.cos(math.radians(lat0))
    corners = tuple((lat0 + a * dlat, lon0 + b * dlon) for a, b in ((-1, -1), (-1, 1), (1, 1), (1, -1)))
    center = latlon_to_ecef(lat0, lon0)
    cell = Cell(0, 0, 0, (lat0, lon0), corners, 1000, 0.001, 1, center)
    sat = SatelliteState(0, "VLEO", center * (R + 200e3) / R)
    d, _ = cell_edge_distance(sat, cell)
    # curvature makes the true distance a little longer than the flat-Earth figure
    assert d == pytest.approx(math.hypot(200e3, 50e3), rel=5e-3)


@settings(max_examples=200, deadline=None)
@given(
    lat=st.floats(-60, 60), lon=st.floats(-180, 180),
    slat=st.floats(-80, 80), slon=st.floats(-180, 180), alt=st.floats(150e3, 2000e3),
    size=st.floats(0.01, 2.0),
)
def test_edge_distance_never_below_center_distance(lat, lon, slat, slon, alt, size):
    corners = ((lat, lon), (lat, lon + size), (lat + size, lon + size), (lat + size, lon))
    c = (lat + size / 2, lon + size / 2)
    cell = Cell(0, 0, 0, c, corners, 1, 0.001, 1, latlon_to_ecef(*c))
    sat = SatelliteState(0, "x", latlon_to_ecef(slat, slon, R + alt))
    d, _ = cell_edge_distance(sat, cell)
    assert d >= np.linalg.norm(sat.position_ecef_m - cell.anchor_position_ecef_m) - 1e-6


@settings(max_examples=200, deadline=None)
@given(lat=st.floats(-80, 80), lon=st.floats(-180, 180), slat=st.floats(-80, 80),
       slon=st.floats(-180, 180), alt=st.floats(150e3, 36000e3))
def test_elevation_and_zenith_angle_agree(lat, lon, slat, slon, alt):
    g = latlon_to_ecef(lat, lon)
    s = latlon_to_ecef(slat, slon, R + alt)
    el = math.radians(float(elevation_deg(s, g)))
    z = math.radians(float(zenith_angle_deg(s, g)))
    assert abs(el - (math.pi / 2 - z)) < 1e-9
