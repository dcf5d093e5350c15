"""
Frame loop.

Per frame k the satellites' positions, the rain field and the link table
are refreshed; the sensing satellites estimate SNRs, the cells rank the
satellites and deferred acceptance (relayed through the current brokers)
yields mu(k+1); each satellite then allocates its communication frames for
k+1 using the frame-k estimates. The realized throughput of frame k+1 uses
the true rates at the k+1 geometry and weather.
"""

from __future__ import annotations

import csv
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cells import CellGrid, build_grid
from .channel import LinkTable, build_link_table, rate_per_user
from .config import SimConfig
from .constants import UNMATCHED
from .frame import FrameLayout, build_layout, feedback_frames, pilot_duration, sensing_frames, sensing_time
from .matching import Matching, build_preferences, cold_start, deferred_acceptance
from .orbits import build_constellation, positions_at
from .ra import EstimationMode, baseline_modes, local_allocation, solve_centralized
from .rain import NoRain, init_rain
from .sensing import sense_links

log = logging.getLogger(__name__)

QUANTILES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)

# Cell load of the full-size scenario: 3960 cells shared by 98.4 satellites
# in view on average. Quotas are defined against this load.
FULL_SCALE_CELLS_PER_SAT = 3960 / 98.4


@dataclass
class FrameMetrics:
    frame: int
    decision_frame: int  # frame whose estimates produced this frame's matching and allocation
    n_comm: int
    n_sens: int
    n_fb: int
    mean_user_throughput: float
    mean_cell_utility: float
    mean_sat_utility: float
    unmatched_fraction: float
    broker_messages: int
    rounds: int
    matched: int
    orphans: int


@dataclass
class MetricsArchive:
    frames: list[FrameMetrics] = field(default_factory=list)
    # flat per-(frame, cell) throughput records
    sample_frame: list[int] = field(default_factory=list)
    sample_cell: list[int] = field(default_factory=list)
    sample_sat: list[int] = field(default_factory=list)
    sample_users: list[int] = field(default_factory=list)
    sample_thr: list[float] = field(default_factory=list)
    info: dict = field(default_factory=dict)
    # optional dumps, filled only when enabled in the output config
    matching_rows: list[tuple] = field(default_factory=list)
    allocation_rows: list[tuple] = field(default_factory=list)
    rain_rows: list[tuple] = field(default_factory=list)

    def add_sample(self, k, cell, sat, users, thr):
        self.sample_frame.append(int(k))
        self.sample_cell.append(int(cell))
        self.sample_sat.append(int(sat))
        self.sample_users.append(int(users))
        self.sample_thr.append(float(thr))

    @property
    def throughput(self) -> np.ndarray:
        return np.asarray(self.sample_thr, dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.sample_users, dtype=float)

    def mean_user_throughput(self) -> float:
        w = self.weights
        return float(np.dot(w, self.throughput) / w.sum()) if w.sum() else 0.0

    def unmatched_fraction(self) -> float:
        w = self.weights
        if not w.sum():
            return 0.0
        return float(w[np.asarray(self.sample_sat) == UNMATCHED].sum() / w.sum())


# ---------------------------------------------------------------------------
# statistics


def cdf(samples, weights=None) -> tuple[np.ndarray, np.ndarray]:
    """Empirical CDF at the sorted unique sample values (optionally weighted)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        log.warning("empty sample set; CDF is empty")
        return np.zeros(0), np.zeros(0)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    values, start = np.unique(x, return_index=True)
    cum = np.cumsum(w)
    ends = np.append(start[1:], len(x)) - 1
    p = cum[ends] / cum[-1]
    p[-1] = 1.0
    return values, p


def weighted_quantile(samples, q, weights=None) -> float:
    """Smallest sample value whose CDF reaches q."""
    values, p = cdf(samples, weights)
    if values.size == 0:
        return float("nan")
    i = int(np.searchsorted(p, q - 1e-12, side="left"))
    return float(values[min(i, len(values) - 1)])


def summary(archive: MetricsArchive) -> dict:
    thr, w = archive.throughput, archive.weights
    out = {
        "mean_user_throughput_bps": archive.mean_user_throughput(),
        "unmatched_fraction": archive.unmatched_fraction(),
        "mean_cell_utility": float(np.mean([f.mean_cell_utility for f in archive.frames])) if archive.frames else 0.0,
        "mean_sat_utility": float(np.mean([f.mean_sat_utility for f in archive.frames])) if archive.frames else 0.0,
        "broker_messages": int(sum(f.broker_messages for f in archive.frames)),
    }
    for q in QUANTILES:
        out[f"q{q:g}"] = weighted_quantile(thr, q, w)
    return out


# ---------------------------------------------------------------------------
# the loop


@dataclass
class _World:
    cfg: SimConfig
    grid: CellGrid
    constellation: object
    rain: object

    def table(self, k: int) -> LinkTable:
        t = k * self.cfg.frame.system_duration_s
        pos = positions_at(self.constellation, t)
        return build_link_table(k, pos, self.constellation, self.grid, self.rain.per_cell_intensity, self.cfg.ground)


def build_world(cfg: SimConfig, rng_rain) -> _World:
    grid = build_grid(cfg.grid.bbox, (cfg.grid.rows, cfg.grid.cols), cfg.grid.population, cfg.grid.active_fraction)
    const = build_constellation(cfg.active_shells, cfg.phasing)
    rain = init_rain(cfg.grid.bbox, cfg.rain, rng_rain, grid) if cfg.rain.storm_density_per_km2 > 0 else NoRain(len(grid))
    return _World(cfg, grid, const, rain)


def estimate_snr(table: LinkTable, mode: str, pilot_length: int, rng, fast_path: bool = False) -> np.ndarray:
    """Per-link SNR estimate for the given estimation mode."""
    est_mode = EstimationMode("proposed" if mode == "cb" else mode)
    sensed = None
    if est_mode is EstimationMode.PROPOSED:
        sensed = np.zeros(len(table))
        m = table.sensing
        if m.any():
            sensed[m] = sense_links(table.snr_linear[m], pilot_length, rng, fast_path)
    return baseline_modes(est_mode)(table, sensed)


def frame_layout(
    cfg: SimConfig, table: LinkTable, pref_length: int, overhead: bool, n_sens_floor: int = 0
) -> FrameLayout:
    """Frame budget for the frame whose geometry is ``table``.

    Without sensing satellites (or in the overhead-free baselines) the whole
    frame is communication. ``n_sens_floor`` pins N_S from below (used when
    N_S is frozen at its horizon maximum).
    """
    f = cfg.frame
    if not overhead or not any(s.sensing_enabled for s in cfg.active_shells):
        return build_layout(f.n_total, f.ofdma_duration_s)
    const_shells = {s.shell_id: s for s in cfg.active_shells}
    times = []
    if len(table) and table.sensing.any():
        fp = table.footprint()
        shell_by_sat = _shell_lookup(cfg)
        for s, cells in fp.items():
            shell = const_shells[shell_by_sat(s)]
            if not shell.sensing_enabled:
                continue
            rows = np.array([table.index[(s, int(c))] for c in cells])
            d_max = float(table.distance_m[rows].max())
            times.append(sensing_time(len(cells), d_max, shell.beams, pilot_duration(f.pilot_length, shell)))
    n_s = max(sensing_frames(times, f.ofdma_duration_s), n_sens_floor)
    if f.feedback_rate_bps is None:
        n_fb = f.min_feedback_frames
    else:
        n_fb = max(f.min_feedback_frames, feedback_frames(f.tuple_bits, max(pref_length, 1), f.feedback_rate_bps,
                                                           f.ofdma_duration_s))
    return build_layout(f.n_total, f.ofdma_duration_s, n_s, n_fb)


def _shell_lookup(cfg: SimConfig):
    sizes = [(s.shell_id, s.size) for s in cfg.active_shells]
    bounds = np.cumsum([n for _, n in sizes])

    def shell_of(sat_id: int) -> str:
        return sizes[int(np.searchsorted(bounds, sat_id, side="right"))][0]

    return shell_of


def _quotas(cfg: SimConfig, constellation) -> dict[int, int]:
    return {int(s): cfg.matching.quota for s in constellation.sat_ids}


def _beams(constellation) -> dict[int, int]:
    b = np.array([s.beams for s in constellation.shells])[constellation.shell_index]
    return {int(s): int(v) for s, v in zip(constellation.sat_ids, b)}


def mean_satellites_in_view(cfg: SimConfig, stride: int = 10) -> float:
    """Average number of satellites seeing at least one cell, sampled every
    ``stride`` frames over the horizon (geometry only)."""
    grid = build_grid(cfg.grid.bbox, (cfg.grid.rows, cfg.grid.cols), cfg.grid.population, cfg.grid.active_fraction)
    world = _World(cfg, grid, build_constellation(cfg.active_shells, cfg.phasing), NoRain(len(grid)))
    counts = [len(np.unique(world.table(k).sat)) for k in range(0, cfg.horizon_frames + 1, stride)]
    return float(np.mean(counts))


def scaled_quotas(cfg: SimConfig, quotas=None) -> list[int]:
    """Map full-scale quotas onto this scenario by its cells-per-satellite
    load (rounded half up, at least 1)."""
    quotas = cfg.sweep.quota if quotas is None else quotas
    world_cells = cfg.grid.rows * cfg.grid.cols
    load = world_cells / mean_satellites_in_view(cfg)
    factor = load / FULL_SCALE_CELLS_PER_SAT
    return [max(1, int(np.floor(q * factor + 0.5))) for q in quotas]


def frozen_sensing_frames(cfg: SimConfig, world: "_World") -> int:
    """Largest per-frame N_S over the horizon (geometry only)."""
    dry = _World(cfg, world.grid, world.constellation, NoRain(len(world.grid)))
    return max(frame_layout(cfg, dry.table(k), 0, True).n_sens for k in range(1, cfg.horizon_frames + 1))


def run(cfg: SimConfig, check_feasibility: bool = True) -> MetricsArchive:
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_rain = np.random.default_rng(seeds[0])
    rng_sense = np.random.default_rng(seeds[1])
    world = build_world(cfg, rng_rain)
    grid, const = world.grid, world.constellation
    mode = cfg.ra.mode
    overhead = mode in ("proposed", "cb")
    quotas = _quotas(cfg, const)
    beams = _beams(const)
    users = {int(c): int(m) for c, m in zip(grid.cell_ids, grid.users)}
    T = cfg.frame.system_duration_s

    archive = MetricsArchive()
    archive.info = {
        "cells": len(grid),
        "satellites": len(const),
        "total_users": int(grid.users.sum()),
        "weighting": "user",
        "ra_label": "CB-surrogate" if mode == "cb" else mode,
    }
    n_sens_floor = frozen_sensing_frames(cfg, world) if cfg.frame.freeze_sensing_frames and overhead else 0
    dumps = cfg.output
    table = world.table(0)
    matching: Matching | None = None

    for k in range(cfg.horizon_frames):
        # decisions at frame k
        snr_hat = estimate_snr(table, mode, cfg.frame.pilot_length, rng_sense, cfg.sensing.fast_path)
        rate_hat = rate_per_user(snr_hat, table.bandwidth_hz, table.users) if len(table) else np.zeros(0)
        prefs = build_preferences(zip(table.cell, table.sat, rate_hat))
        if matching is None:
            matching = cold_start(prefs, quotas)
        lost = ()
        if cfg.matching.broker_loss == "footprint":
            lost = [c for c, s in matching.cell_to_sat.items() if s != UNMATCHED and (s, c) not in table.index]
        rates_hat = {(int(s), int(c)): float(r) for s, c, r in zip(table.sat, table.cell, rate_hat)}
        if dumps.rain:
            archive.rain_rows.extend((k, int(c), float(v)) for c, v in zip(grid.cell_ids, world.rain.per_cell_intensity))
        nxt, blog = deferred_acceptance(
            prefs, quotas, matching,
            orphan_rescue=cfg.matching.orphan_rescue,
            irrevocable=cfg.matching.irrevocable_acceptance,
            lost_brokers=lost,
        )
        if check_feasibility:
            fp_sizes = {s: len(cs) for s, cs in table.footprint().items()}
            nxt.validate(fp_sizes)

        # the world moves to k+1; its geometry is known in advance
        world.rain.step(T)
        table_next = world.table(k + 1)
        max_pref = max((len(v) for v in prefs.cell_prefs.values()), default=0)
        layout = frame_layout(cfg, table_next, max_pref, overhead, n_sens_floor)

        if mode == "cb":
            cb_rates = rates_hat
            if cfg.ra.cb_rates == "true":
                cb_rates = {(int(s), int(c)): float(r) for s, c, r in zip(table.sat, table.cell, table.rate_per_user_bps)}
            res = solve_centralized(
                cb_rates, users, quotas, layout.n_comm, beams, cfg.frame.n_total, cfg.ra.n_iter,
                initial=nxt,
            )
            serving, pattern = res.matching, res.pattern
            if check_feasibility:
                serving.validate(fp_sizes)
        else:
            serving = nxt
            pattern, _ = local_allocation(serving, rates_hat, users, layout.n_comm, beams, cfg.frame.n_total)
        if check_feasibility:
            pattern.validate(serving, layout.n_comm, beams)
        if dumps.matching:
            archive.matching_rows.extend((k + 1, c, serving.partner(c)) for c in sorted(serving.cell_to_sat))
        if dumps.allocation:
            archive.allocation_rows.extend((k + 1, sc[0], sc[1], v) for sc, v in sorted(pattern.x.items()))

        # realized outcome of frame k+1
        true_rate = table_next.rate_per_user_bps
        tot_w = tot_thr = 0.0
        cell_util, sat_util = [], {}
        n_matched = 0
        for c in grid.cell_ids:
            c = int(c)
            s = serving.partner(c)
            m = users[c]
            if s == UNMATCHED:
                thr = 0.0
            else:
                n_matched += 1
                i = table_next.index.get((s, c))
                rho = float(true_rate[i]) if i is not None else 0.0
                thr = rho * pattern.x.get((s, c), 0) / cfg.frame.n_total
                cell_util.append(rho)
                if rho > 0:
                    sat_util[s] = sat_util.get(s, 0.0) + 1.0 / rho
                else:
                    sat_util.setdefault(s, 0.0)
            archive.add_sample(k + 1, c, s, m, thr)
            tot_w += m
            tot_thr += m * thr
        unmatched_users = sum(users[int(c)] for c in grid.cell_ids if serving.partner(int(c)) == UNMATCHED)
        archive.frames.append(
            FrameMetrics(
                frame=k + 1,
                decision_frame=k,
                n_comm=layout.n_comm,
                n_sens=layout.n_sens,
                n_fb=layout.n_fb,
                mean_user_throughput=tot_thr / tot_w if tot_w else 0.0,
                mean_cell_utility=float(np.mean(cell_util)) if cell_util else 0.0,
                mean_sat_utility=float(np.mean(list(sat_util.values()))) if sat_util else 0.0,
                unmatched_fraction=unmatched_users / tot_w if tot_w else 0.0,
                broker_messages=blog.messages,
                rounds=blog.rounds,
                matched=n_matched,
                orphans=len(grid) - n_matched,
            )
        )
        matching = serving if mode != "cb" else nxt
        table = table_next
    return archive


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, header, rows) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])

    _atomic_write(Path(path), write)


def write_archive(archive: MetricsArchive, out_dir: Path) -> list[str]:
    out_dir = Path(out_dir)
    write_csv(
        out_dir / "throughput_samples.csv",
        ["frame", "cell_id", "sat_id", "users", "throughput_bps"],
        zip(archive.sample_frame, archive.sample_cell, archive.sample_sat, archive.sample_users, archive.sample_thr),
    )
    names = list(FrameMetrics.__dataclass_fields__)
    write_csv(out_dir / "frame_metrics.csv", names, ([getattr(f, n) for n in names] for f in archive.frames))
    x, p = cdf(archive.throughput, archive.weights)
    write_csv(out_dir / "cdf.csv", ["throughput_bps", "cdf"], zip(x, p))
    files = ["throughput_samples.csv", "frame_metrics.csv", "cdf.csv"]
    optional = [
        ("matching.csv", ["frame", "cell_id", "sat_id"], archive.matching_rows),
        ("allocation.csv", ["frame", "sat_id", "cell_id", "x"], archive.allocation_rows),
        ("rain.csv", ["frame", "cell_id", "intensity_mmh"], archive.rain_rows),
    ]
    for name, header, rows in optional:
        if rows:
            write_csv(out_dir / name, header, rows)
            files.append(name)
    return files


def write_manifest(path: Path, entries: dict) -> None:
    def write(fh):
        for k, v in entries.items():
            fh.write(f"{k}={_fmt(v)}\n")

    _atomic_write(Path(path), write)
