"""
Clustered rain over the cell grid.

Storm centers are a homogeneous Poisson point process over the area of
interest. Each storm is a uniform-intensity disk that alternates between
an active (raining) and a dormant state following a two-state Markov chain
whose mean holding times are the mean rain episode and the mean gap
between episodes. Storms do not move.

Anything that exposes ``per_cell_intensity`` and ``step(frame_duration_s)``
can stand in for :class:`RainField` in the simulator (see :class:`RainProcess`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .cells import BBox, CellGrid, latlon_to_ecef
from .constants import R_EARTH_M


@dataclass(frozen=True)
class RainParams:
    storm_density_per_km2: float = 8.4e-4
    mean_intensity_mmh: float = 8.77
    mean_diameter_km: float = 50.0
    mean_episode_h: float = 1.886
    mean_gap_h: float = 5.376

    def __post_init__(self):
        if self.storm_density_per_km2 < 0:
            raise ValueError("storm density must be >= 0")
        if self.mean_diameter_km <= 0 or self.mean_intensity_mmh < 0:
            raise ValueError("storm diameter must be > 0 and intensity >= 0")
        if self.mean_episode_h <= 0 or self.mean_gap_h <= 0:
            raise ValueError("episode and gap durations must be > 0")

    @property
    def stationary_active_probability(self) -> float:
        if math.isinf(self.mean_episode_h):
            return 1.0
        return self.mean_episode_h / (self.mean_episode_h + self.mean_gap_h)


@dataclass(frozen=True)
class RainStorm:
    center_latlon: tuple[float, float]
    diameter_km: float
    peak_intensity_mmh: float
    state: str  # "active" | "dormant"
    state_timer_s: float


class RainProcess(Protocol):
    per_cell_intensity: np.ndarray

    def step(self, frame_duration_s: float) -> None: ...


class RainField:
    """Storm population plus the per-cell intensity it induces on a grid."""

    def __init__(
        self,
        centers_latlon: np.ndarray,
        diameters_km: np.ndarray,
        peaks_mmh: np.ndarray,
        active: np.ndarray,
        params: RainParams,
        rng: np.random.Generator,
        grid: CellGrid | None = None,
    ):
        self.centers_latlon = np.asarray(centers_latlon, dtype=float).reshape(-1, 2)
        self.diameters_km = np.asarray(diameters_km, dtype=float)
        self.peaks_mmh = np.asarray(peaks_mmh, dtype=float)
        self.active = np.asarray(active, dtype=bool)
        self.timers_s = np.zeros(len(self.active))
        self.params = params
        self.rng = rng
        self.grid = grid
        self._pair_storm = np.zeros(0, dtype=int)
        self._pair_cell = np.zeros(0, dtype=int)
        n_cells = len(grid) if grid is not None else 0
        self.per_cell_intensity = np.zeros(n_cells)
        if grid is not None and len(self.active):
            self._index_coverage()
        self._refresh()

    @property
    def storms(self) -> list[RainStorm]:
        return [
            RainStorm(
                (float(c[0]), float(c[1])),
                float(d),
                float(p),
                "active" if a else "dormant",
                float(t),
            )
            for c, d, p, a, t in zip(
                self.centers_latlon, self.diameters_km, self.peaks_mmh, self.active, self.timers_s
            )
        ]

    def intensity_of(self, cell_id: int) -> float:
        return float(self.per_cell_intensity[self.grid.index_of(cell_id)])

    def _index_coverage(self, chunk: int = 512):
        # storms never move, so the storm -> covered cells map is built once
        cells = self.grid.centers_ecef / R_EARTH_M
        storms = latlon_to_ecef(self.centers_latlon[:, 0], self.centers_latlon[:, 1]) / R_EARTH_M
        radius = self.diameters_km * 1e3 / 2 / R_EARTH_M  # central angle
        ps, pc = [], []
        for lo in range(0, len(storms), chunk):
            cosang = np.clip(storms[lo : lo + chunk] @ cells.T, -1.0, 1.0)
            s, c = np.nonzero(np.arccos(cosang) <= radius[lo : lo + chunk, None])
            ps.append(s + lo)
            pc.append(c)
        self._pair_storm = np.concatenate(ps)
        self._pair_cell = np.concatenate(pc)

    def _refresh(self):
        if self.grid is None:
            return
        self.per_cell_intensity = np.zeros(len(self.grid))
        live = self.active[self._pair_storm]
        np.maximum.at(
            self.per_cell_intensity, self._pair_cell[live], self.peaks_mmh[self._pair_storm[live]]
        )

    def step(self, frame_duration_s: float) -> None:
        n = len(self.active)
        if n == 0:
            return
        p = self.params
        p_stop = min(1.0, frame_duration_s / (p.mean_episode_h * 3600.0))
        p_start = min(1.0, frame_duration_s / (p.mean_gap_h * 3600.0))
        u = self.rng.random(n)
        flip = np.where(self.active, u < p_stop, u < p_start)
        self.active = self.active ^ flip
        self.timers_s = np.where(flip, 0.0, self.timers_s + frame_duration_s)
        if flip.any():
            self._refresh()


def init_rain(bbox: BBox, params: RainParams, seed, grid: CellGrid | None = None) -> RainField:
    rng = np.random.default_rng(seed)
    n = rng.poisson(params.storm_density_per_km2 * bbox.area_km2)
    lon = rng.uniform(bbox.lon_min, bbox.lon_max, n)
    # uniform on the sphere patch: sin(lat) is uniform
    s0, s1 = math.sin(math.radians(bbox.lat_min)), math.sin(math.radians(bbox.lat_max))
    lat = np.degrees(np.arcsin(rng.uniform(s0, s1, n)))
    diam = rng.exponential(params.mean_diameter_km, n)
    peak = rng.exponential(params.mean_intensity_mmh, n)
    active = rng.random(n) < params.stationary_active_probability
    return RainField(np.column_stack([lat, lon]), diam, peak, active, params, rng, grid)


def step_rain(field: RainField, frame_duration_s: float) -> RainField:
    field.step(frame_duration_s)
    return field


class NoRain:
    """Dry sky; useful for baselines and tests."""

    def __init__(self, n_cells: int):
        self.per_cell_intensity = np.zeros(n_cells)

    def step(self, frame_duration_s: float) -> None:
        pass


def write_intensity_csv(path, rows) -> None:
    """rows: iterable of (frame, cell_id, intensity_mmh)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "cell_id", "intensity_mmh"])
        for k, cid, val in rows:
            w.writerow([k, cid, repr(float(val))])
