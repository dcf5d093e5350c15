"""
Pilot-based SNR sensing at the anchor nodes.

Noise is simulated with unit variance, so the SNR is the only scale that
matters; every estimator here is a ratio and therefore scale-free.
Pilots are BPSK (+1/-1), which matches the Re{y* m} correlation statistic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import GroundParams, rain_attenuation, rain_path_length, shell_rain_coeffs, snr
from .constants import R_EARTH_M
from .orbits import OrbitalShell

# Below this relative size the residual-energy denominator is numerically zero.
_DEGENERATE_RTOL = 1e-12
_MAX_CHUNK_SAMPLES = 1 << 22


@dataclass(frozen=True)
class PilotObservation:
    sat_id: int | None
    cell_id: int | None
    pilot_symbols: np.ndarray
    received: np.ndarray
    true_snr_linear: float

    def __post_init__(self):
        if len(self.pilot_symbols) != len(self.received):
            raise ValueError("pilot and received lengths differ")
        if len(self.received) < 2:
            raise ValueError("need at least two pilot symbols")

    @property
    def pilot_length(self) -> int:
        return len(self.received)


@dataclass
class SensingReport:
    frame_k: int
    entries: list[tuple[int, int, float, float]] = field(default_factory=list)  # (cell, sat, snr_hat, rate_hat)


def bpsk_pilot(length: int, rng: np.random.Generator) -> np.ndarray:
    return 1.0 - 2.0 * rng.integers(0, 2, size=length)


def simulate_pilot_rx(
    true_snr_linear: float,
    pilot_length: int,
    rng: np.random.Generator,
    pilot_symbols: np.ndarray | None = None,
    sat_id: int | None = None,
    cell_id: int | None = None,
) -> PilotObservation:
    """y = m sqrt(gamma) + z with z ~ CN(0, 1)."""
    if true_snr_linear < 0:
        raise ValueError("SNR must be >= 0")
    if pilot_length < 2:
        raise ValueError("pilot length must be >= 2")
    m = bpsk_pilot(pilot_length, rng) if pilot_symbols is None else np.asarray(pilot_symbols)
    z = (rng.standard_normal(pilot_length) + 1j * rng.standard_normal(pilot_length)) / np.sqrt(2.0)
    y = m * np.sqrt(true_snr_linear) + z
    return PilotObservation(sat_id, cell_id, m.astype(complex), y, float(true_snr_linear))


def snr_mle_stats(corr, energy, pilot_length: int):
    """Estimator from its two sufficient statistics.

    corr = sum Re{y_i^* m_i}, energy = sum |y_i|^2. Returns (estimate, degenerate)
    arrays; negative estimates are clamped to 0.
    """
    L = pilot_length
    corr = np.asarray(corr, dtype=float)
    energy = np.asarray(energy, dtype=float)
    denom = energy - corr**2 / L
    floor = _DEGENERATE_RTOL * energy
    degenerate = (denom <= floor) | (energy <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        est = (L - 1.5) * (corr / L) ** 2 / np.maximum(denom, floor)
    est = np.where(energy > 0, est, 0.0)
    return np.maximum(est, 0.0), degenerate


def snr_mle(obs: PilotObservation, return_flag: bool = False):
    y, m = obs.received, obs.pilot_symbols
    corr = np.sum((np.conj(y) * m).real)
    energy = np.sum(np.abs(y) ** 2)
    est, degenerate = snr_mle_stats(corr, energy, obs.pilot_length)
    if return_flag:
        return float(est), bool(degenerate)
    return float(est)


def crlb(snr_linear, pilot_length):
    if np.any(np.asarray(pilot_length) < 1):
        raise ValueError("pilot length must be >= 1")
    g = np.asarray(snr_linear, dtype=float)
    return (2.0 * g + g**2) / pilot_length


def attenuation_estimate(snr_hat, snr_norain, pilot_length):
    """Bias-corrected attenuation, clamped to >= 1 (0 dB)."""
    g0 = np.asarray(snr_norain, dtype=float)
    if np.any(g0 <= 0):
        raise ValueError("no-rain SNR must be > 0")
    L = pilot_length
    return np.maximum(g0 / (np.asarray(snr_hat, dtype=float) * (1.0 + 1.0 / L) + 2.0 / L), 1.0)


def estimated_rate(snr_hat, bandwidth_hz, active_users):
    users = np.asarray(active_users, dtype=float)
    if np.any(users < 1):
        raise ValueError("active_users must be >= 1")
    return bandwidth_hz / users * np.log2(1.0 + np.asarray(snr_hat, dtype=float))


def non_sensing_estimate(link_table, sat_id: int, cell_id: int) -> float:
    """Model-based SNR for satellites that do not sense: the no-rain SNR,
    or 0 when the cell is outside the footprint."""
    i = link_table.index.get((sat_id, cell_id))
    return 0.0 if i is None else float(link_table.snr_norain_linear[i])


def pilot_statistics(snr_linear, pilot_length: int, rng: np.random.Generator, n_trials: int = 1):
    """Full sample-level pilot simulation, reduced to (corr, energy).

    ``snr_linear`` has shape (G,); returns two (G, n_trials) arrays. Within a
    trial all G links see the same noise realization (common random numbers),
    which keeps comparisons across G low-variance without biasing any of them.
    """
    g = np.atleast_1d(np.asarray(snr_linear, dtype=float))
    L = int(pilot_length)
    corr = np.empty((len(g), n_trials))
    energy = np.empty((len(g), n_trials))
    amp = np.sqrt(g)[:, None]
    chunk = max(1, _MAX_CHUNK_SAMPLES // L)
    s = np.sqrt(0.5)
    for lo in range(0, n_trials, chunk):
        n = min(chunk, n_trials - lo)
        m = 1.0 - 2.0 * rng.integers(0, 2, size=(n, L), dtype=np.int8)
        zr = rng.standard_normal((n, L)) * s
        zi = rng.standard_normal((n, L)) * s
        # with real pilots: Re{y* m} = m Re{y} = sqrt(g) + m zr
        mz = np.einsum("ij,ij->i", m, zr)
        zz = np.einsum("ij,ij->i", zr, zr) + np.einsum("ij,ij->i", zi, zi)
        corr[:, lo : lo + n] = L * amp + mz[None, :]
        energy[:, lo : lo + n] = L * amp**2 + 2.0 * amp * mz[None, :] + zz[None, :]
    return corr, energy


def sense_links(snr_linear, pilot_length: int, rng: np.random.Generator, fast_path: bool = False):
    """One estimate per link (independent noise per link)."""
    g = np.asarray(snr_linear, dtype=float)
    if fast_path:
        # asymptotic normal draw around the truth; not for accuracy studies
        return np.maximum(g + np.sqrt(crlb(g, pilot_length)) * rng.standard_normal(g.shape), 0.0)
    out = np.empty(len(g))
    L = int(pilot_length)
    rows = max(1, _MAX_CHUNK_SAMPLES // L)
    s = np.sqrt(0.5)
    for lo in range(0, len(g), rows):
        gg = g[lo : lo + rows]
        n = len(gg)
        m = 1.0 - 2.0 * rng.integers(0, 2, size=(n, L), dtype=np.int8)
        yr = m * np.sqrt(gg)[:, None] + rng.standard_normal((n, L)) * s
        yi = rng.standard_normal((n, L)) * s
        corr = np.einsum("ij,ij->i", yr, m)
        energy = np.einsum("ij,ij->i", yr, yr) + np.einsum("ij,ij->i", yi, yi)
        out[lo : lo + n], _ = snr_mle_stats(corr, energy, L)
    return out


def slant_range(elevation_deg: float, altitude_m: float) -> float:
    """Distance from a ground point to a satellite at the given elevation."""
    el = np.radians(elevation_deg)
    r = R_EARTH_M + altitude_m
    return float(np.sqrt(r**2 - (R_EARTH_M * np.cos(el)) ** 2) - R_EARTH_M * np.sin(el))


@dataclass(frozen=True)
class NmseRow:
    rain_mmh: float
    pilot_length: int
    nmse_snr: float
    crlb_norm: float
    nmse_att: float
    snr_linear: float
    atten_linear: float
    nmse_snr_se: float  # Monte-Carlo standard errors
    nmse_att_se: float


def nmse_sweep(
    shell: OrbitalShell,
    ground: GroundParams,
    rain_grid,
    pilot_grid,
    n_trials: int,
    seed: int,
    elevation_deg: float = 30.0,
) -> list[NmseRow]:
    """NMSE of the SNR and attenuation estimators for a fixed link geometry.

    Each pilot length gets its own RNG stream; rain levels share noise
    draws at a given pilot length.
    """
    d = slant_range(elevation_deg, shell.altitude_m)
    g0 = float(snr(d, shell, ground))
    path = rain_path_length(elevation_deg, ground.rain_height_m)
    rains = np.asarray(list(rain_grid), dtype=float)
    att = rain_attenuation(rains, path, shell_rain_coeffs(shell, ground))
    gam = g0 / att
    streams = np.random.SeedSequence(seed).spawn(len(pilot_grid))
    rows = []
    for L, ss in zip(pilot_grid, streams):
        corr, energy = pilot_statistics(gam, int(L), np.random.default_rng(ss), n_trials)
        g_hat, _ = snr_mle_stats(corr, energy, int(L))
        a_hat = attenuation_estimate(g_hat, g0, int(L))
        se_g = ((g_hat - gam[:, None]) / gam[:, None]) ** 2
        se_a = ((a_hat - att[:, None]) / att[:, None]) ** 2
        for j, r in enumerate(rains):
            rows.append(
                NmseRow(
                    rain_mmh=float(r),
                    pilot_length=int(L),
                    nmse_snr=float(se_g[j].mean()),
                    crlb_norm=float(crlb(gam[j], int(L)) / gam[j] ** 2),
                    nmse_att=float(se_a[j].mean()),
                    snr_linear=float(gam[j]),
                    atten_linear=float(att[j]),
                    nmse_snr_se=float(se_g[j].std(ddof=1) / np.sqrt(n_trials)) if n_trials > 1 else 0.0,
                    nmse_att_se=float(se_a[j].std(ddof=1) / np.sqrt(n_trials)) if n_trials > 1 else 0.0,
                )
            )
    return rows
