"""
YAML run configuration.

The file is a key-value tree; see ``configs/canonical_desk.yaml`` for every
key with its default. Unknown or invalid keys raise :class:`ConfigError`
naming the dotted key and, when known, its line in the file.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .cells import BBox, CsvPopulation, SyntheticPopulation
from .channel import GroundParams
from .orbits import OrbitalShell, WalkerPhasing
from .rain import RainParams

REQUIRED_SECTIONS = ("constellation", "grid", "rain", "frame")
BAND_MODES = ("multi", "s_only", "k_only")
RA_MODES = ("proposed", "cb", "no_sensing", "full_csi")
BROKER_LOSS = ("never", "footprint")


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = ""
        if key:
            where += f"'{key}'"
        if line:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)
        self.key = key
        self.line = line


# ---------------------------------------------------------------------------
# raw tree + line numbers


def _line_map(node, prefix="", out=None) -> dict[str, int]:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            key = f"{prefix}.{i}"
            out[key] = v.start_mark.line + 1
            _line_map(v, key, out)
    return out


def read_tree(text: str) -> tuple[dict, dict[str, int]]:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None)
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    return data, (_line_map(node) if node is not None else {})


def apply_override(tree: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place (value parsed as YAML)."""
    if "=" not in assignment:
        raise ConfigError(f"override must look like key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    parts = key.split(".")
    node: Any = tree
    for i, p in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[int(p)]
            continue
        if p not in node or node[p] is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, (dict, list)):
            raise ConfigError("cannot descend into a scalar", key=".".join(parts[: i + 1]))
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


# ---------------------------------------------------------------------------
# typed config


@dataclass
class GridConfig:
    bbox: BBox
    rows: int
    cols: int
    active_fraction: float = 0.001
    population: Any = field(default_factory=SyntheticPopulation)


@dataclass
class FrameConfig:
    n_total: int = 1000
    ofdma_duration_s: float = 0.01
    pilot_length: int = 256
    tuple_bits: int = 96
    feedback_rate_bps: float | None = None
    min_feedback_frames: int = 1
    freeze_sensing_frames: bool = False

    @property
    def system_duration_s(self) -> float:
        return self.n_total * self.ofdma_duration_s


@dataclass
class MatchingConfig:
    quota: int = 100
    orphan_rescue: bool = False
    irrevocable_acceptance: bool = False
    broker_loss: str = "never"


@dataclass
class RAConfig:
    mode: str = "proposed"
    n_iter: int = 20
    cb_rates: str = "estimated"


@dataclass
class SensingConfig:
    fast_path: bool = False
    elevation_deg: float = 30.0
    rain_grid: list[float] = field(default_factory=lambda: [0.5, 2, 4, 6, 8, 10, 12, 14])
    pilot_grid: list[int] = field(default_factory=lambda: [256, 1024, 4096])
    trials: int = 10_000
    shell: str | None = None


@dataclass
class AttenuationConfig:
    rain_grid: list[float] = field(default_factory=lambda: [0, 2, 4, 6, 8, 8.77, 10, 12, 14, 16, 18, 20])
    elevation_grid: list[float] = field(default_factory=lambda: [25, 30, 45, 60, 90])
    shell: str | None = None


@dataclass
class SweepConfig:
    quota: list[int] = field(default_factory=lambda: [10, 25, 50, 100, 1000])
    pilot: list[int] = field(default_factory=lambda: [4, 256, 1024, 4096])
    band_mode: list[str] = field(default_factory=lambda: list(BAND_MODES))
    ra_mode: list[str] = field(default_factory=lambda: list(RA_MODES))


@dataclass
class OutputConfig:
    dir: str = "out"
    matching: bool = False
    allocation: bool = False
    rain: bool = False


@dataclass
class SimConfig:
    shells: list[OrbitalShell]
    phasing: WalkerPhasing
    band_mode: str
    grid: GridConfig
    ground: GroundParams
    rain: RainParams
    frame: FrameConfig
    matching: MatchingConfig
    ra: RAConfig
    sensing: SensingConfig
    attenuation: AttenuationConfig
    sweep: SweepConfig
    horizon_frames: int = 200
    seed: int = 0
    output: OutputConfig = field(default_factory=OutputConfig)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def active_shells(self) -> list[OrbitalShell]:
        if self.band_mode == "multi":
            return list(self.shells)
        band = "S" if self.band_mode == "s_only" else "K"
        return [s for s in self.shells if s.band.upper() == band]

    def shell(self, shell_id: str | None) -> OrbitalShell:
        """Named shell, or the first sensing shell when None."""
        for s in self.shells:
            if (shell_id is None and s.sensing_enabled) or s.shell_id == shell_id:
                return s
        raise ConfigError(f"no shell {shell_id!r}" if shell_id else "no sensing-enabled shell configured")

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


_SHELL_KEYS = {
    "id", "band", "altitude_km", "inclination_deg", "planes", "total_satellites", "sats_per_plane",
    "carrier_ghz", "bandwidth_mhz", "tx_power_w", "antenna_gain_dbi", "beams", "sensing",
    "symbol_duration_us", "symbol_bandwidth_khz", "pointing_loss_db", "min_elevation_deg",
    "rain_coeffs",
}


class _Reader:
    """Pulls typed values out of the raw tree, remembering line numbers."""

    def __init__(self, lines: dict[str, int]):
        self.lines = lines

    def error(self, key: str, msg: str) -> ConfigError:
        line = self.lines.get(key)
        parent = key
        while line is None and "." in parent:
            parent = parent.rsplit(".", 1)[0]
            line = self.lines.get(parent)
        return ConfigError(msg, key=key, line=line)

    def section(self, tree: dict, key: str, allowed: set[str], required: bool = False) -> dict:
        if key not in tree or tree[key] is None:
            if required:
                raise ConfigError(f"missing required section '{key}'", key=key)
            return {}
        sec = tree[key]
        if not isinstance(sec, dict):
            raise self.error(key, "expected a mapping")
        self.check_keys(sec, key, allowed)
        return sec

    def check_keys(self, sec: dict, prefix: str, allowed: set[str]) -> None:
        for k in sec:
            if k not in allowed:
                raise self.error(f"{prefix}.{k}", f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def get_top(self, tree: dict, key: str, typ, default=...):
        return self.get(tree, "", key, typ, default)

    def get(self, sec: dict, prefix: str, key: str, typ, default=..., choices=None):
        full = f"{prefix}.{key}" if prefix else key
        if key not in sec or sec[key] is None:
            if default is ...:
                raise self.error(full, "required key is missing")
            return default
        val = sec[key]
        try:
            if typ is bool:
                if not isinstance(val, bool):
                    raise TypeError
                out = val
            elif typ is int:
                if isinstance(val, bool) or float(val) != int(float(val)):
                    raise TypeError
                out = int(float(val))
            elif typ is float:
                if isinstance(val, bool):
                    raise TypeError
                out = float(val)
            elif typ is list:
                if not isinstance(val, list):
                    raise TypeError
                out = val
            else:
                out = typ(val)
        except (TypeError, ValueError):
            raise self.error(full, f"expected {typ.__name__}, got {val!r}") from None
        if choices is not None and out not in choices:
            raise self.error(full, f"must be one of {', '.join(map(str, choices))}, got {out!r}")
        return out


def config_from_tree(tree: dict, lines: dict[str, int] | None = None) -> SimConfig:
    rd = _Reader(lines or {})
    top_allowed = set(REQUIRED_SECTIONS) | {
        "ground", "matching", "ra", "sensing", "attenuation", "sweep", "output", "seed", "horizon_frames",
    }
    for k in tree:
        if k not in top_allowed:
            raise ConfigError("unknown top-level key", key=k, line=rd.lines.get(k))

    # constellation
    con = rd.section(tree, "constellation", {"shells", "phase_factor", "raan_offset_deg", "band_mode"}, True)
    raw_shells = rd.get(con, "constellation", "shells", list)
    if not raw_shells:
        raise rd.error("constellation.shells", "at least one shell is required")
    shells = []
    for i, sh in enumerate(raw_shells):
        p = f"constellation.shells.{i}"
        if not isinstance(sh, dict):
            raise rd.error(p, "expected a mapping")
        rd.check_keys(sh, p, _SHELL_KEYS)
        planes = rd.get(sh, p, "planes", int)
        total = rd.get(sh, p, "total_satellites", int, None)
        spp = rd.get(sh, p, "sats_per_plane", int, None)
        if spp is None:
            if total is None:
                raise rd.error(f"{p}.total_satellites", "give total_satellites or sats_per_plane")
            if total % planes:
                raise rd.error(f"{p}.total_satellites", f"{total} satellites do not split over {planes} planes")
            spp = total // planes
        sensing = rd.get(sh, p, "sensing", bool, False)
        sym_us = rd.get(sh, p, "symbol_duration_us", float, None)
        sym_khz = rd.get(sh, p, "symbol_bandwidth_khz", float, None)
        coeffs = rd.get(sh, p, "rain_coeffs", list, None)
        try:
            shells.append(
                OrbitalShell(
                    shell_id=str(rd.get(sh, p, "id", str)),
                    band=rd.get(sh, p, "band", str, ""),
                    altitude_m=rd.get(sh, p, "altitude_km", float) * 1e3,
                    inclination_deg=rd.get(sh, p, "inclination_deg", float),
                    num_planes=planes,
                    sats_per_plane=spp,
                    total_satellites=total,
                    carrier_hz=rd.get(sh, p, "carrier_ghz", float) * 1e9,
                    bandwidth_hz=rd.get(sh, p, "bandwidth_mhz", float) * 1e6,
                    tx_power_w=rd.get(sh, p, "tx_power_w", float),
                    antenna_gain_db=rd.get(sh, p, "antenna_gain_dbi", float),
                    beams=rd.get(sh, p, "beams", int),
                    sensing_enabled=sensing,
                    symbol_duration_s=sym_us * 1e-6 if sym_us is not None else None,
                    symbol_bandwidth_hz=sym_khz * 1e3 if sym_khz is not None else None,
                    pointing_loss_db=rd.get(sh, p, "pointing_loss_db", float, 0.0),
                    min_elevation_deg=rd.get(sh, p, "min_elevation_deg", float, 25.0),
                    rain_coeffs=tuple(float(v) for v in coeffs) if coeffs else None,
                )
            )
        except ValueError as exc:
            raise rd.error(p, str(exc)) from None
    phasing = WalkerPhasing(
        phase_factor=rd.get(con, "constellation", "phase_factor", int, 0),
        raan_offset_deg=rd.get(con, "constellation", "raan_offset_deg", float, 0.0),
    )
    band_mode = rd.get(con, "constellation", "band_mode", str, "multi", BAND_MODES)

    # grid
    g = rd.section(tree, "grid", {"bbox", "rows", "cols", "active_fraction", "population"}, True)
    bb = g.get("bbox")
    if not isinstance(bb, dict):
        raise rd.error("grid.bbox", "expected a mapping with lat_min, lon_min, lat_max, lon_max")
    rd.check_keys(bb, "grid.bbox", {"lat_min", "lon_min", "lat_max", "lon_max"})
    try:
        bbox = BBox(*(rd.get(bb, "grid.bbox", k, float) for k in ("lat_min", "lon_min", "lat_max", "lon_max")))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise rd.error("grid.bbox", str(exc)) from None
    pop = g.get("population") or {}
    rd.check_keys(pop, "grid.population", {"kind", "median", "sigma", "seed", "path"})
    kind = rd.get(pop, "grid.population", "kind", str, "synthetic", ("synthetic", "csv"))
    if kind == "csv":
        population = CsvPopulation(rd.get(pop, "grid.population", "path", str))
    else:
        population = SyntheticPopulation(
            median=rd.get(pop, "grid.population", "median", float, 5e4),
            sigma=rd.get(pop, "grid.population", "sigma", float, 1.0),
            seed=rd.get(pop, "grid.population", "seed", int, 0),
        )
    grid = GridConfig(
        bbox=bbox,
        rows=rd.get(g, "grid", "rows", int),
        cols=rd.get(g, "grid", "cols", int),
        active_fraction=rd.get(g, "grid", "active_fraction", float, 0.001),
        population=population,
    )
    if not 0 <= grid.active_fraction <= 1:
        raise rd.error("grid.active_fraction", "must be in [0, 1]")

    gr = rd.section(tree, "ground", {"antenna_gain_dbi", "noise_psd_dbm_hz", "rain_height_km", "polarization"})
    ground = GroundParams(
        antenna_gain_db=rd.get(gr, "ground", "antenna_gain_dbi", float, 0.0),
        noise_psd_dbm_hz=rd.get(gr, "ground", "noise_psd_dbm_hz", float, -176.31),
        rain_height_m=rd.get(gr, "ground", "rain_height_km", float, 4.0) * 1e3,
        polarization=rd.get(gr, "ground", "polarization", str, "H", ("H", "V")),
    )

    r = rd.section(
        tree, "rain",
        {"storm_density_per_km2", "mean_intensity_mmh", "mean_diameter_km", "mean_episode_h", "mean_gap_h"},
        True,
    )
    try:
        rain = RainParams(
            storm_density_per_km2=rd.get(r, "rain", "storm_density_per_km2", float, 8.4e-4),
            mean_intensity_mmh=rd.get(r, "rain", "mean_intensity_mmh", float, 8.77),
            mean_diameter_km=rd.get(r, "rain", "mean_diameter_km", float, 50.0),
            mean_episode_h=rd.get(r, "rain", "mean_episode_h", float, 1.886),
            mean_gap_h=rd.get(r, "rain", "mean_gap_h", float, 5.376),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise rd.error("rain", str(exc)) from None

    f = rd.section(
        tree, "frame",
        {"n_total", "ofdma_duration_ms", "pilot_length", "tuple_bits", "feedback_rate_bps",
         "min_feedback_frames", "freeze_sensing_frames"},
        True,
    )
    frame = FrameConfig(
        n_total=rd.get(f, "frame", "n_total", int, 1000),
        ofdma_duration_s=rd.get(f, "frame", "ofdma_duration_ms", float, 10.0) * 1e-3,
        pilot_length=rd.get(f, "frame", "pilot_length", int, 256),
        tuple_bits=rd.get(f, "frame", "tuple_bits", int, 96),
        feedback_rate_bps=rd.get(f, "frame", "feedback_rate_bps", float, None),
        min_feedback_frames=rd.get(f, "frame", "min_feedback_frames", int, 1),
        freeze_sensing_frames=rd.get(f, "frame", "freeze_sensing_frames", bool, False),
    )
    if frame.pilot_length < 2:
        raise rd.error("frame.pilot_length", "must be >= 2")
    if frame.n_total < 1:
        raise rd.error("frame.n_total", "must be >= 1")

    m = rd.section(tree, "matching", {"quota", "orphan_rescue", "irrevocable_acceptance", "broker_loss"})
    matching = MatchingConfig(
        quota=rd.get(m, "matching", "quota", int, 100),
        orphan_rescue=rd.get(m, "matching", "orphan_rescue", bool, False),
        irrevocable_acceptance=rd.get(m, "matching", "irrevocable_acceptance", bool, False),
        broker_loss=rd.get(m, "matching", "broker_loss", str, "never", BROKER_LOSS),
    )
    if matching.quota < 0:
        raise rd.error("matching.quota", "must be >= 0")

    a = rd.section(tree, "ra", {"mode", "n_iter", "cb_rates"})
    ra = RAConfig(
        mode=rd.get(a, "ra", "mode", str, "proposed", RA_MODES),
        n_iter=rd.get(a, "ra", "n_iter", int, 20),
        cb_rates=rd.get(a, "ra", "cb_rates", str, "estimated", ("estimated", "true")),
    )

    s = rd.section(tree, "sensing", {"fast_path", "elevation_deg", "rain_grid", "pilot_grid", "trials", "shell"})
    d = SensingConfig()
    sensing = SensingConfig(
        fast_path=rd.get(s, "sensing", "fast_path", bool, False),
        elevation_deg=rd.get(s, "sensing", "elevation_deg", float, d.elevation_deg),
        rain_grid=[float(v) for v in rd.get(s, "sensing", "rain_grid", list, d.rain_grid)],
        pilot_grid=[int(v) for v in rd.get(s, "sensing", "pilot_grid", list, d.pilot_grid)],
        trials=rd.get(s, "sensing", "trials", int, d.trials),
        shell=rd.get(s, "sensing", "shell", str, None),
    )

    at = rd.section(tree, "attenuation", {"rain_grid", "elevation_grid", "shell"})
    da = AttenuationConfig()
    attenuation = AttenuationConfig(
        rain_grid=[float(v) for v in rd.get(at, "attenuation", "rain_grid", list, da.rain_grid)],
        elevation_grid=[float(v) for v in rd.get(at, "attenuation", "elevation_grid", list, da.elevation_grid)],
        shell=rd.get(at, "attenuation", "shell", str, None),
    )

    sw = rd.section(tree, "sweep", {"quota", "pilot", "band_mode", "ra_mode"})
    dsw = SweepConfig()
    sweep = SweepConfig(
        quota=[int(v) for v in rd.get(sw, "sweep", "quota", list, dsw.quota)],
        pilot=[int(v) for v in rd.get(sw, "sweep", "pilot", list, dsw.pilot)],
        band_mode=[str(v) for v in rd.get(sw, "sweep", "band_mode", list, dsw.band_mode)],
        ra_mode=[str(v) for v in rd.get(sw, "sweep", "ra_mode", list, dsw.ra_mode)],
    )

    out = rd.section(tree, "output", {"dir", "dump_matching", "dump_allocation", "dump_rain"})
    cfg = SimConfig(
        shells=shells,
        phasing=phasing,
        band_mode=band_mode,
        grid=grid,
        ground=ground,
        rain=rain,
        frame=frame,
        matching=matching,
        ra=ra,
        sensing=sensing,
        attenuation=attenuation,
        sweep=sweep,
        horizon_frames=rd.get_top(tree, "horizon_frames", int, 200),
        seed=rd.get_top(tree, "seed", int, 0),
        output=OutputConfig(
            dir=rd.get(out, "output", "dir", str, "out"),
            matching=rd.get(out, "output", "dump_matching", bool, False),
            allocation=rd.get(out, "output", "dump_allocation", bool, False),
            rain=rd.get(out, "output", "dump_rain", bool, False),
        ),
        raw=copy.deepcopy(tree),
    )
    if cfg.horizon_frames < 1:
        raise ConfigError("must be >= 1", key="horizon_frames", line=rd.lines.get("horizon_frames"))
    if not cfg.active_shells:
        raise ConfigError(f"band_mode {band_mode!r} leaves no shell (check the shells' band labels)",
                          key="constellation.band_mode", line=rd.lines.get("constellation.band_mode"))
    return cfg


def load_config(path: str | Path | None = None, overrides: list[str] = (), text: str | None = None) -> SimConfig:
    """Load a YAML config file (or ``text``) and apply ``key=value`` overrides."""
    if text is None:
        text = Path(path).read_text()
    tree, lines = read_tree(text)
    for o in overrides:
        apply_override(tree, o)
    return config_from_tree(tree, lines)


def bundled_config_path(name: str = "canonical_desk.yaml") -> Path:
    return Path(str(resources.files("ntnisac") / "configs" / name))


def with_overrides(cfg: SimConfig, overrides: list[str]) -> SimConfig:
    tree = copy.deepcopy(cfg.raw)
    for o in overrides:
        apply_override(tree, o)
    return config_from_tree(tree)
