"""
Link budget: free-space loss, slab-model rain attenuation, SNR and
per-user rates for every visible (satellite, cell) pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import SPEED_OF_LIGHT, db_to_linear
from .orbits import OrbitalShell, edge_distances, elevation_matrix

# ITU-R P.838 regression coefficients (k, alpha) by frequency in Hz.
P838_TABLE = {
    "H": {2e9: (0.000154, 0.963), 20e9: (0.0751, 1.099)},
    "V": {2e9: (0.000138, 0.923), 20e9: (0.0691, 1.065)},
}


def p838_coefficients(carrier_hz: float, polarization: str = "H") -> tuple[float, float]:
    """(a, b) for the given carrier.

    Between/outside tabulated points log(k) and alpha are interpolated
    linearly in log-frequency.
    """
    table = P838_TABLE[polarization.upper()]
    freqs = sorted(table)
    if carrier_hz in table:
        return table[carrier_hz]
    lf = np.log10(freqs)
    x = math.log10(carrier_hz)
    # piecewise-linear with end-segment extrapolation
    i = int(np.clip(np.searchsorted(lf, x) - 1, 0, len(freqs) - 2))
    t = (x - lf[i]) / (lf[i + 1] - lf[i])
    (k0, a0), (k1, a1) = table[freqs[i]], table[freqs[i + 1]]
    k = 10 ** (math.log10(k0) + t * (math.log10(k1) - math.log10(k0)))
    return k, a0 + t * (a1 - a0)


@dataclass(frozen=True)
class GroundParams:
    antenna_gain_db: float = 0.0
    noise_psd_dbm_hz: float = -176.31
    rain_height_m: float = 4000.0
    polarization: str = "H"

    @property
    def noise_psd_w_hz(self) -> float:
        return float(db_to_linear(self.noise_psd_dbm_hz - 30.0))


def path_loss(distance_m, carrier_hz):
    """Linear free-space loss (4 pi d f / c)^2."""
    return (4.0 * np.pi * np.asarray(distance_m, dtype=float) * carrier_hz / SPEED_OF_LIGHT) ** 2


def rain_path_length(elevation_deg, rain_height_m):
    el = np.asarray(elevation_deg, dtype=float)
    if np.any(el <= 0):
        raise ValueError("rain path is undefined for links at or below the horizon")
    return rain_height_m / np.sin(np.radians(el))


def rain_attenuation(intensity_mmh, rain_path_m, band_coeffs: tuple[float, float]):
    """Linear attenuation A >= 1 with A_dB = a * R^b * path_km."""
    a, b = band_coeffs
    rate = np.asarray(intensity_mmh, dtype=float)
    if np.any(rate < 0):
        raise ValueError("rain intensity must be >= 0")
    att_db = a * rate**b * (np.asarray(rain_path_m, dtype=float) / 1e3)
    return db_to_linear(att_db)


def noise_power(shell: OrbitalShell, ground: GroundParams) -> float:
    return ground.noise_psd_w_hz * shell.bandwidth_hz


def snr(distance_m, shell: OrbitalShell, ground: GroundParams, atten_linear=1.0):
    """gamma = P G_s G_gnd / (L A phi sigma^2)."""
    gains = shell.tx_power_w * db_to_linear(shell.antenna_gain_db + ground.antenna_gain_db)
    loss = path_loss(distance_m, shell.carrier_hz) * np.asarray(atten_linear, dtype=float)
    return gains / (loss * db_to_linear(shell.pointing_loss_db) * noise_power(shell, ground))


def rate_per_user(snr_linear, bandwidth_hz, active_users):
    users = np.asarray(active_users, dtype=float)
    if np.any(users < 1):
        raise ValueError("active_users must be >= 1")
    return bandwidth_hz / users * np.log2(1.0 + np.asarray(snr_linear, dtype=float))


def avg_throughput(rate, x, n_total):
    return np.asarray(rate, dtype=float) * np.asarray(x, dtype=float) / n_total


def shell_rain_coeffs(shell: OrbitalShell, ground: GroundParams) -> tuple[float, float]:
    return shell.rain_coeffs or p838_coefficients(shell.carrier_hz, ground.polarization)


@dataclass(frozen=True)
class LinkRecord:
    sat_id: int
    cell_id: int
    distance_m: float
    elevation_deg: float
    rain_path_m: float
    path_loss_linear: float
    atten_linear: float
    snr_linear: float
    snr_norain_linear: float
    rate_per_user_bps: float


@dataclass
class LinkTable:
    """Columnar table of visible (satellite, cell) pairs at one frame.

    ``sat`` / ``cell`` hold ids; ``cell_idx`` indexes into the grid arrays.
    """

    frame_k: int
    sat: np.ndarray
    cell: np.ndarray
    cell_idx: np.ndarray
    distance_m: np.ndarray
    elevation_deg: np.ndarray
    rain_path_m: np.ndarray
    path_loss_linear: np.ndarray
    atten_linear: np.ndarray
    snr_linear: np.ndarray
    snr_norain_linear: np.ndarray
    rate_per_user_bps: np.ndarray
    users: np.ndarray
    bandwidth_hz: np.ndarray
    sensing: np.ndarray
    _index: dict = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.sat)

    @property
    def index(self) -> dict[tuple[int, int], int]:
        if self._index is None:
            self._index = {(int(s), int(c)): i for i, (s, c) in enumerate(zip(self.sat, self.cell))}
        return self._index

    def keys(self):
        return self.index.keys()

    def record(self, i: int) -> LinkRecord:
        return LinkRecord(
            int(self.sat[i]), int(self.cell[i]), float(self.distance_m[i]), float(self.elevation_deg[i]),
            float(self.rain_path_m[i]), float(self.path_loss_linear[i]), float(self.atten_linear[i]),
            float(self.snr_linear[i]), float(self.snr_norain_linear[i]), float(self.rate_per_user_bps[i]),
        )

    def __getitem__(self, key: tuple[int, int]) -> LinkRecord:
        return self.record(self.index[key])

    def get(self, key, default=None):
        i = self.index.get(key)
        return default if i is None else self.record(i)

    def footprint(self) -> dict[int, np.ndarray]:
        """sat_id -> visible cell ids."""
        out = {}
        order = np.argsort(self.sat, kind="stable")
        sats, starts = np.unique(self.sat[order], return_index=True)
        for s, chunk in zip(sats, np.split(order, starts[1:])):
            out[int(s)] = self.cell[chunk]
        return out


def build_link_table(
    frame_k: int,
    sat_positions: np.ndarray,
    constellation,
    grid,
    rain_intensity: np.ndarray,
    ground: GroundParams,
) -> LinkTable:
    """All visible pairs; visibility is judged at the cell center against
    each shell's minimum elevation."""
    shells = constellation.shells
    el = elevation_matrix(sat_positions, grid.centers_ecef)
    min_el = np.array([s.min_elevation_deg for s in shells])[constellation.shell_index]
    s_idx, c_idx = np.nonzero(el >= min_el[:, None])

    dist = edge_distances(sat_positions[s_idx], grid.sample_points[c_idx])
    elev = el[s_idx, c_idx]
    path = rain_path_length(elev, ground.rain_height_m) if len(elev) else np.zeros(0)
    shell_of = constellation.shell_index[s_idx]

    n = len(s_idx)
    loss = np.empty(n)
    att = np.empty(n)
    gamma = np.empty(n)
    gamma0 = np.empty(n)
    bw = np.empty(n)
    sensing = np.zeros(n, dtype=bool)
    rain = np.asarray(rain_intensity, dtype=float)[c_idx]
    for i, shell in enumerate(shells):
        m = shell_of == i
        if not m.any():
            continue
        loss[m] = path_loss(dist[m], shell.carrier_hz)
        att[m] = rain_attenuation(rain[m], path[m], shell_rain_coeffs(shell, ground))
        gamma[m] = snr(dist[m], shell, ground, att[m])
        gamma0[m] = snr(dist[m], shell, ground, 1.0)
        bw[m] = shell.bandwidth_hz
        sensing[m] = shell.sensing_enabled
    users = grid.users[c_idx]
    return LinkTable(
        frame_k=frame_k,
        sat=constellation.sat_ids[s_idx],
        cell=grid.cell_ids[c_idx],
        cell_idx=c_idx,
        distance_m=dist,
        elevation_deg=elev,
        rain_path_m=path,
        path_loss_linear=loss,
        atten_linear=att,
        snr_linear=gamma,
        snr_norain_linear=gamma0,
        rate_per_user_bps=rate_per_user(gamma, bw, users) if n else np.zeros(0),
        users=users,
        bandwidth_hz=bw,
        sensing=sensing,
    )
