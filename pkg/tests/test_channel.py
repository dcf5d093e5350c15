import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_leo, make_vleo
from ntnisac.cells import BBox, build_grid
from ntnisac.channel import (
    GroundParams,
    build_link_table,
    noise_power,
    p838_coefficients,
    path_loss,
    rain_attenuation,
    rain_path_length,
    rate_per_user,
    shell_rain_coeffs,
    snr,
)
from ntnisac.constants import linear_to_db
from ntnisac.orbits import build_constellation, positions_at

mp.mp.dps = 30
C = mp.mpf(299792458)


def fspl_db_mp(d, f):
    return 20 * mp.log10(4 * mp.pi * mp.mpf(d) * mp.mpf(f) / C)


def test_fspl_zenith_leo():
    ref = fspl_db_mp(570e3, 2e9)
    assert float(linear_to_db(path_loss(570e3, 2e9))) == pytest.approx(float(ref), abs=1e-9)
    assert float(ref) == pytest.approx(153.58, abs=0.01)


def test_rain_path_at_25_degrees():
    assert float(rain_path_length(25.0, 4000.0)) / 1e3 == pytest.approx(9.465, abs=5e-4)
    with pytest.raises(ValueError):
        rain_path_length(0.0, 4000.0)


def test_ka_band_attenuation_oracle():
    ref = mp.mpf("0.0751") * mp.power(mp.mpf("8.77"), mp.mpf("1.099")) * (4 / mp.sin(mp.pi / 6))
    got = linear_to_db(rain_attenuation(8.77, rain_path_length(30.0, 4000.0), (0.0751, 1.099)))
    assert float(got) == pytest.approx(float(ref), rel=1e-12)
    assert float(got) == pytest.approx(6.5326, abs=1e-4)


def test_no_rain_no_attenuation():
    assert rain_attenuation(0.0, 8000.0, (0.0751, 1.099)) == 1.0
    with pytest.raises(ValueError):
        rain_attenuation(-1.0, 8000.0, (0.0751, 1.099))


def test_zenith_leo_snr_db_budget(leo, ground):
    # gamma_dB = P + G_s + G_gnd - FSPL - phi - (N0 + 10 log10 B)
    p_dbw = 10 * mp.log10(75)
    n_dbw = mp.mpf("-176.31") - 30 + 10 * mp.log10(30e6)
    ref = p_dbw + 30 + 0 - fspl_db_mp(570e3, 2e9) - mp.mpf("0.3") - n_dbw
    assert float(linear_to_db(snr(570e3, leo, ground))) == pytest.approx(float(ref), abs=1e-9)
    assert noise_power(leo, ground) == pytest.approx(10 ** ((-176.31 - 30) / 10) * 30e6, rel=1e-12)


def test_p838_table_and_interpolation():
    assert p838_coefficients(20e9) == (0.0751, 1.099)
    assert p838_coefficients(2e9, "v") == (0.000138, 0.923)
    k, a = p838_coefficients(math.sqrt(2e9 * 20e9))  # log-midpoint
    assert k == pytest.approx(math.sqrt(0.000154 * 0.0751), rel=1e-12)
    assert a == pytest.approx((0.963 + 1.099) / 2, rel=1e-12)


def test_shell_coefficients_override(ground):
    assert shell_rain_coeffs(make_vleo(), ground) == (0.0751, 1.099)
    assert shell_rain_coeffs(make_vleo(rain_coeffs=(0.1, 1.0)), ground) == (0.1, 1.0)


def test_rate_per_user_unit_snr():
    assert rate_per_user(1.0, 400e6, 50) == pytest.approx(8e6)
    with pytest.raises(ValueError):
        rate_per_user(1.0, 400e6, 0)


@settings(max_examples=100, deadline=None)
@given(r1=st.floats(0, 150), r2=st.floats(0, 150), el=st.floats(5, 90))
def test_attenuation_monotone_in_rain(r1, r2, el):
    lo, hi = sorted((r1, r2))
    path = rain_path_length(el, 4000.0)
    assert rain_attenuation(lo, path, (0.0751, 1.099)) <= rain_attenuation(hi, path, (0.0751, 1.099))


@settings(max_examples=100, deadline=None)
@given(d1=st.floats(1e5, 3e6), d2=st.floats(1e5, 3e6))
def test_snr_decreases_with_distance(d1, d2):
    shell, ground = make_vleo(), GroundParams()
    lo, hi = sorted((d1, d2))
    assert snr(lo, shell, ground) >= snr(hi, shell, ground)


def test_link_table_consistent_with_scalar_budget(ground):
    shells = [make_leo(num_planes=6, sats_per_plane=10), make_vleo(num_planes=8, sats_per_plane=10)]
    const = build_constellation(shells)
    grid = build_grid(BBox(0, 0, 60, 60), (6, 6))
    rain = np.linspace(0, 20, len(grid))
    pos = positions_at(const, 0.0)
    table = build_link_table(0, pos, const, grid, rain, ground)
    assert len(table) > 0
    by_id = {s.shell_id: s for s in shells}
    for i in range(len(table)):
        rec = table.record(i)
        shell = by_id[const.shell_of(rec.sat_id).shell_id]
        assert rec.elevation_deg >= shell.min_elevation_deg
        att = rain_attenuation(rain[table.cell_idx[i]], rec.rain_path_m, shell_rain_coeffs(shell, ground))
        assert rec.atten_linear == pytest.approx(float(att), rel=1e-12)
        assert rec.snr_linear == pytest.approx(float(snr(rec.distance_m, shell, ground, att)), rel=1e-12)
        assert rec.snr_norain_linear >= rec.snr_linear
        assert table[(rec.sat_id, rec.cell_id)] == rec
    fp = table.footprint()
    assert sum(len(v) for v in fp.values()) == len(table)
    assert table.get((-5, -5)) is None
