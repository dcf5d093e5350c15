"""Quasi-Earth-fixed cell grid over a lat/lon bounding box."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import R_EARTH_M


def latlon_to_ecef(lat_deg, lon_deg, radius_m: float = R_EARTH_M) -> np.ndarray:
    lat = np.radians(np.asarray(lat_deg, dtype=float))
    lon = np.radians(np.asarray(lon_deg, dtype=float))
    return radius_m * np.stack(
        [np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1
    )


def patch_area_km2(lat_min, lon_min, lat_max, lon_max) -> float:
    """Area of a lat/lon rectangle on the sphere."""
    r_km = R_EARTH_M / 1e3
    return r_km**2 * math.radians(lon_max - lon_min) * (
        math.sin(math.radians(lat_max)) - math.sin(math.radians(lat_min))
    )


@dataclass(frozen=True)
class BBox:
    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"bbox SW corner must be south-west of NE corner: {self}")
        if self.lat_min < -90 or self.lat_max > 90:
            raise ValueError("bbox latitudes out of range")

    @property
    def area_km2(self) -> float:
        return patch_area_km2(self.lat_min, self.lon_min, self.lat_max, self.lon_max)


@dataclass(frozen=True)
class Cell:
    cell_id: int
    row: int
    col: int
    center_latlon: tuple[float, float]
    corner_latlons: tuple[tuple[float, float], ...]  # SW, SE, NE, NW
    population: int
    active_fraction: float
    active_users: int
    anchor_position_ecef_m: np.ndarray = field(repr=False, compare=False)

    def sample_points_ecef(self) -> np.ndarray:
        """Corners plus center, used for the cell-edge distance."""
        lat = [p[0] for p in self.corner_latlons] + [self.center_latlon[0]]
        lon = [p[1] for p in self.corner_latlons] + [self.center_latlon[1]]
        return latlon_to_ecef(lat, lon)

    @property
    def area_km2(self) -> float:
        (lat0, lon0), _, (lat1, lon1), _ = self.corner_latlons
        return patch_area_km2(lat0, lon0, lat1, lon1)


def active_users(population: int, active_fraction: float) -> int:
    """M_c, floored at one so per-user rates stay defined."""
    if population <= 0:
        raise ValueError("cells without population are excluded from the grid")
    if not 0.0 <= active_fraction <= 1.0:
        raise ValueError("active_fraction must be in [0, 1]")
    return max(1, int(math.floor(active_fraction * population + 0.5)))


@dataclass(frozen=True)
class SyntheticPopulation:
    """Seeded log-normal populations (stand-in for census rasters)."""

    median: float = 5e4
    sigma: float = 1.0
    seed: int = 0

    def draw(self, n_rows: int, n_cols: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        pop = self.median * np.exp(self.sigma * rng.standard_normal((n_rows, n_cols)))
        return np.maximum(np.rint(pop), 1).astype(np.int64)


@dataclass(frozen=True)
class CsvPopulation:
    """Per-cell populations from a `cell_row,cell_col,population` file."""

    path: str | Path

    def draw(self, n_rows: int, n_cols: int) -> np.ndarray:
        with open(self.path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != n_rows * n_cols:
            raise ValueError(
                f"{self.path}: {len(rows)} population rows for a {n_rows}x{n_cols} grid "
                f"({n_rows * n_cols} cells)"
            )
        pop = np.full((n_rows, n_cols), -1, dtype=np.int64)
        for rec in rows:
            r, c = int(rec["cell_row"]), int(rec["cell_col"])
            if not (0 <= r < n_rows and 0 <= c < n_cols):
                raise ValueError(f"{self.path}: cell ({r}, {c}) outside the {n_rows}x{n_cols} grid")
            pop[r, c] = int(float(rec["population"]))
        if (pop < 0).any():
            raise ValueError(f"{self.path}: duplicate or missing cells")
        return pop


@dataclass
class CellGrid:
    cells: list[Cell]
    bbox: BBox
    n_rows: int
    n_cols: int

    def __post_init__(self):
        self.cell_ids = np.array([c.cell_id for c in self.cells], dtype=int)
        self.centers_ecef = (
            np.array([c.anchor_position_ecef_m for c in self.cells]) if self.cells else np.zeros((0, 3))
        )
        self.sample_points = (
            np.array([c.sample_points_ecef() for c in self.cells]) if self.cells else np.zeros((0, 5, 3))
        )
        self.users = np.array([c.active_users for c in self.cells], dtype=float)
        self.centers_latlon = np.array([c.center_latlon for c in self.cells], dtype=float).reshape(-1, 2)
        self._by_id = {c.cell_id: i for i, c in enumerate(self.cells)}

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)

    def index_of(self, cell_id: int) -> int:
        return self._by_id[cell_id]

    def cell(self, cell_id: int) -> Cell:
        return self.cells[self._by_id[cell_id]]

    @property
    def dlat(self) -> float:
        return (self.bbox.lat_max - self.bbox.lat_min) / self.n_rows

    @property
    def dlon(self) -> float:
        return (self.bbox.lon_max - self.bbox.lon_min) / self.n_cols

    def locate(self, lat: float, lon: float) -> tuple[int, int] | None:
        """(row, col) of the grid tile holding a point.

        A point on a shared edge belongs to the tile south/west of it.
        """
        b = self.bbox
        if not (b.lat_min <= lat <= b.lat_max and b.lon_min <= lon <= b.lon_max):
            return None
        row = max(math.ceil((lat - b.lat_min) / self.dlat) - 1, 0)
        col = max(math.ceil((lon - b.lon_min) / self.dlon) - 1, 0)
        return min(row, self.n_rows - 1), min(col, self.n_cols - 1)

    def cell_id_at(self, lat: float, lon: float) -> int | None:
        rc = self.locate(lat, lon)
        if rc is None:
            return None
        cid = rc[0] * self.n_cols + rc[1]
        return cid if cid in self._by_id else None


def build_grid(
    bbox: BBox,
    resolution: tuple[int, int],
    population_source=None,
    active_fraction: float = 0.001,
) -> CellGrid:
    """Uniform lat/lon grid of `resolution = (n_rows, n_cols)` tiles.

    Cell ids are `row * n_cols + col` with row 0 at the southern edge.
    Tiles with zero population are dropped.
    """
    n_rows, n_cols = resolution
    if n_rows < 1 or n_cols < 1:
        raise ValueError("grid resolution must be at least 1x1")
    source = population_source if population_source is not None else SyntheticPopulation()
    pop = np.asarray(source.draw(n_rows, n_cols))
    lat_edges = np.linspace(bbox.lat_min, bbox.lat_max, n_rows + 1)
    lon_edges = np.linspace(bbox.lon_min, bbox.lon_max, n_cols + 1)

    cells = []
    for r in range(n_rows):
        for c in range(n_cols):
            p = int(pop[r, c])
            if p <= 0:
                continue
            lat0, lat1 = float(lat_edges[r]), float(lat_edges[r + 1])
            lon0, lon1 = float(lon_edges[c]), float(lon_edges[c + 1])
            center = ((lat0 + lat1) / 2, (lon0 + lon1) / 2)
            cells.append(
                Cell(
                    cell_id=r * n_cols + c,
                    row=r,
                    col=c,
                    center_latlon=center,
                    corner_latlons=((lat0, lon0), (lat0, lon1), (lat1, lon1), (lat1, lon0)),
                    population=p,
                    active_fraction=active_fraction,
                    active_users=active_users(p, active_fraction),
                    anchor_position_ecef_m=latlon_to_ecef(*center),
                )
            )
    return CellGrid(cells=cells, bbox=bbox, n_rows=n_rows, n_cols=n_cols)
