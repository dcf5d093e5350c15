"""
Multi-shell Walker constellation with circular two-body propagation.

Positions are produced in an Earth-fixed frame that coincides with the
inertial frame at t = 0. Everything downstream (visibility, distances,
elevation) only needs geometry, so no perturbations are modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .constants import MU_EARTH, OMEGA_EARTH, R_EARTH_M


@dataclass(frozen=True)
class OrbitalShell:
    """One orbital shell; every satellite in it shares these parameters."""

    shell_id: str
    altitude_m: float
    inclination_deg: float
    num_planes: int
    sats_per_plane: int
    carrier_hz: float
    bandwidth_hz: float
    tx_power_w: float
    antenna_gain_db: float
    beams: int
    sensing_enabled: bool = False
    symbol_duration_s: float | None = None
    symbol_bandwidth_hz: float | None = None
    pointing_loss_db: float = 0.0
    min_elevation_deg: float = 25.0
    band: str = ""
    total_satellites: int | None = None
    rain_coeffs: tuple[float, float] | None = None  # (a, b) override of the P.838 lookup

    def __post_init__(self):
        if self.altitude_m <= 0:
            raise ValueError(f"shell {self.shell_id}: altitude_m must be > 0")
        if not 0 < self.inclination_deg <= 180:
            raise ValueError(f"shell {self.shell_id}: inclination_deg must be in (0, 180]")
        if self.num_planes < 1 or self.sats_per_plane < 1:
            raise ValueError(f"shell {self.shell_id}: need at least one plane and one satellite per plane")
        if self.beams < 1:
            raise ValueError(f"shell {self.shell_id}: beams must be >= 1")
        if self.carrier_hz <= 0 or self.bandwidth_hz <= 0:
            raise ValueError(f"shell {self.shell_id}: carrier and bandwidth must be positive")
        if self.sensing_enabled and not (
            self.symbol_duration_s and self.symbol_duration_s > 0
            and self.symbol_bandwidth_hz and self.symbol_bandwidth_hz > 0
        ):
            raise ValueError(
                f"shell {self.shell_id}: sensing shells need positive symbol_duration_s and symbol_bandwidth_hz"
            )
        if self.total_satellites is not None and self.total_satellites != self.size:
            raise ValueError(
                f"shell {self.shell_id}: {self.num_planes} planes x {self.sats_per_plane} satellites "
                f"= {self.size} does not match declared total {self.total_satellites}"
            )

    @property
    def size(self) -> int:
        return self.num_planes * self.sats_per_plane

    @property
    def radius_m(self) -> float:
        return R_EARTH_M + self.altitude_m

    @property
    def mean_motion(self) -> float:
        """Angular rate of the circular orbit in rad/s."""
        return float(np.sqrt(MU_EARTH / self.radius_m**3))

    @classmethod
    def from_total(cls, total: int, num_planes: int, **kwargs) -> "OrbitalShell":
        """Build a shell from the (total, planes) pair used in constellation tables."""
        if total % num_planes:
            raise ValueError(f"{total} satellites cannot be split evenly over {num_planes} planes")
        return cls(num_planes=num_planes, sats_per_plane=total // num_planes, total_satellites=total, **kwargs)


@dataclass(frozen=True)
class WalkerPhasing:
    phase_factor: int = 0
    raan_offset_deg: float = 0.0
    anomaly_offset_deg: float = 0.0


@dataclass(frozen=True)
class SatelliteState:
    sat_id: int
    shell_id: str
    position_ecef_m: np.ndarray


@dataclass
class Constellation:
    """Flat per-satellite orbital elements for all shells.

    Satellite ids are consecutive integers, shell by shell, plane by plane.
    """

    shells: list[OrbitalShell]
    shell_index: np.ndarray  # (S,) index into shells
    radius_m: np.ndarray
    inclination_rad: np.ndarray
    raan_rad: np.ndarray
    arg_latitude0_rad: np.ndarray
    mean_motion: np.ndarray
    sat_ids: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sat_ids = np.arange(len(self.shell_index))

    def __len__(self) -> int:
        return len(self.shell_index)

    def shell_of(self, sat_id: int) -> OrbitalShell:
        return self.shells[int(self.shell_index[sat_id])]

    def subset(self, shell_ids: Iterable[str]) -> "Constellation":
        """Constellation restricted to the named shells (ids are renumbered)."""
        keep = set(shell_ids)
        shells = [s for s in self.shells if s.shell_id in keep]
        old = [i for i, s in enumerate(self.shells) if s.shell_id in keep]
        mask = np.isin(self.shell_index, old)
        remap = {o: n for n, o in enumerate(old)}
        return Constellation(
            shells=shells,
            shell_index=np.array([remap[int(i)] for i in self.shell_index[mask]], dtype=int),
            radius_m=self.radius_m[mask],
            inclination_rad=self.inclination_rad[mask],
            raan_rad=self.raan_rad[mask],
            arg_latitude0_rad=self.arg_latitude0_rad[mask],
            mean_motion=self.mean_motion[mask],
        )


def build_constellation(
    shells: list[OrbitalShell],
    phasing: WalkerPhasing | Mapping[str, WalkerPhasing] | None = None,
) -> Constellation:
    """Walker-delta layout: planes evenly spaced in RAAN over 360 degrees,
    satellites evenly spaced in each plane, plane p shifted by p*F*360/N."""
    if not shells:
        raise ValueError("constellation needs at least one shell")
    ids = [s.shell_id for s in shells]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate shell ids: {ids}")

    shell_index, radius, incl, raan, u0, n = [], [], [], [], [], []
    for i, shell in enumerate(shells):
        if isinstance(phasing, Mapping):
            ph = phasing.get(shell.shell_id, WalkerPhasing())
        else:
            ph = phasing or WalkerPhasing()
        planes = np.repeat(np.arange(shell.num_planes), shell.sats_per_plane)
        slots = np.tile(np.arange(shell.sats_per_plane), shell.num_planes)
        raan_deg = ph.raan_offset_deg + planes * 360.0 / shell.num_planes
        u_deg = (
            ph.anomaly_offset_deg
            + slots * 360.0 / shell.sats_per_plane
            + planes * ph.phase_factor * 360.0 / shell.size
        )
        shell_index.append(np.full(shell.size, i))
        radius.append(np.full(shell.size, shell.radius_m))
        incl.append(np.full(shell.size, np.radians(shell.inclination_deg)))
        raan.append(np.radians(raan_deg % 360.0))
        u0.append(np.radians(u_deg % 360.0))
        n.append(np.full(shell.size, shell.mean_motion))

    return Constellation(
        shells=list(shells),
        shell_index=np.concatenate(shell_index),
        radius_m=np.concatenate(radius),
        inclination_rad=np.concatenate(incl),
        raan_rad=np.concatenate(raan),
        arg_latitude0_rad=np.concatenate(u0),
        mean_motion=np.concatenate(n),
    )


def positions_at(constellation: Constellation, t_s: float) -> np.ndarray:
    """Earth-fixed positions (S, 3) in meters at time t_s."""
    c = constellation
    u = c.arg_latitude0_rad + c.mean_motion * t_s
    # Earth rotation shifts the node in the Earth-fixed frame
    raan = c.raan_rad - OMEGA_EARTH * t_s
    cu, su = np.cos(u), np.sin(u)
    cO, sO = np.cos(raan), np.sin(raan)
    ci, si = np.cos(c.inclination_rad), np.sin(c.inclination_rad)
    pos = np.empty((len(c), 3))
    pos[:, 0] = cO * cu - sO * su * ci
    pos[:, 1] = sO * cu + cO * su * ci
    pos[:, 2] = su * si
    pos *= c.radius_m[:, None]
    return pos


def propagate(constellation: Constellation, frame_k: int, frame_duration_s: float) -> list[SatelliteState]:
    if frame_k < 0:
        raise ValueError("frame_k must be >= 0")
    pos = positions_at(constellation, frame_k * frame_duration_s)
    return [
        SatelliteState(int(i), constellation.shell_of(int(i)).shell_id, pos[i])
        for i in constellation.sat_ids
    ]


def elevation_deg(sat_pos: np.ndarray, ground_pos: np.ndarray) -> np.ndarray:
    """Elevation of satellites seen from ground points.

    sat_pos (..., 3) and ground_pos (..., 3) broadcast against each other.
    """
    los = sat_pos - ground_pos
    up = ground_pos / np.linalg.norm(ground_pos, axis=-1, keepdims=True)
    sin_el = np.sum(los * up, axis=-1) / np.linalg.norm(los, axis=-1)
    return np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))


def zenith_angle_deg(sat_pos: np.ndarray, ground_pos: np.ndarray) -> np.ndarray:
    """Angle between local zenith and the line of sight."""
    los = sat_pos - ground_pos
    up = ground_pos / np.linalg.norm(ground_pos, axis=-1, keepdims=True)
    cos_z = np.sum(los * up, axis=-1) / np.linalg.norm(los, axis=-1)
    return np.degrees(np.arccos(np.clip(cos_z, -1.0, 1.0)))


def elevation_matrix(sat_pos: np.ndarray, ground_pos: np.ndarray) -> np.ndarray:
    """(S, C) elevations in degrees."""
    return elevation_deg(sat_pos[:, None, :], ground_pos[None, :, :])


def visible_cells(sat: SatelliteState, grid, min_elevation_deg: float) -> set[int]:
    el = elevation_deg(sat.position_ecef_m[None, :], grid.centers_ecef)
    return {int(cid) for cid in grid.cell_ids[el >= min_elevation_deg]}


def cell_edge_distance(sat: SatelliteState, cell) -> tuple[float, float]:
    """(max distance to the cell's corners and center, elevation to center)."""
    pts = cell.sample_points_ecef()
    d = np.linalg.norm(pts - sat.position_ecef_m, axis=1)
    el = elevation_deg(sat.position_ecef_m, cell.anchor_position_ecef_m)
    return float(d.max()), float(el)


def edge_distances(sat_pos: np.ndarray, sample_points: np.ndarray) -> np.ndarray:
    """Vectorised cell-edge distance: sat_pos (N, 3), sample_points (N, P, 3) -> (N,)."""
    return np.linalg.norm(sample_points - sat_pos[:, None, :], axis=-1).max(axis=-1)
