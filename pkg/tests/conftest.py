import numpy as np
import pytest

from ntnisac.channel import GroundParams
from ntnisac.config import bundled_config_path, load_config
from ntnisac.orbits import OrbitalShell


def make_leo(**kw):
    base = dict(
        shell_id="LEO", band="S", altitude_m=570e3, inclination_deg=70, num_planes=36, sats_per_plane=20,
        carrier_hz=2e9, bandwidth_hz=30e6, tx_power_w=75, antenna_gain_db=30, beams=19,
        pointing_loss_db=0.3, min_elevation_deg=25,
    )
    base.update(kw)
    return OrbitalShell(**base)


def make_vleo(**kw):
    base = dict(
        shell_id="VLEO", band="K", altitude_m=200e3, inclination_deg=53, num_planes=72, sats_per_plane=22,
        carrier_hz=20e9, bandwidth_hz=400e6, tx_power_w=75, antenna_gain_db=38.5, beams=19,
        sensing_enabled=True, symbol_duration_s=71.35e-6, symbol_bandwidth_hz=15e3,
        pointing_loss_db=0.3, min_elevation_deg=25,
    )
    base.update(kw)
    return OrbitalShell(**base)


@pytest.fixture
def leo():
    return make_leo()


@pytest.fixture
def vleo():
    return make_vleo()


@pytest.fixture
def ground():
    return GroundParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def desk_config(*overrides):
    return load_config(bundled_config_path(), list(overrides))


@pytest.fixture
def desk():
    return desk_config


def pytest_configure(config):
    config.acceptance_results = {}


@pytest.fixture
def acceptance(request):
    """Criterion number -> (name, passed, detail); printed after the run."""
    return request.config.acceptance_results


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.acceptance_results
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        name, ok, detail = results[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}: {detail}")
