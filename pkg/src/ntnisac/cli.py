"""Command-line entry point: ``ntnisac {run,nmse,attenuation,sweep}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
Outputs go to ``--out``, else ``$NTNISAC_OUTPUT_ROOT/<command>``, else the
config's ``output.dir``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path


from . import __version__
from .channel import rain_attenuation, rain_path_length, shell_rain_coeffs
from .config import ConfigError, SimConfig, bundled_config_path, load_config, with_overrides
from .constants import linear_to_db
from .sensing import nmse_sweep
from .sim import run, scaled_quotas, summary, write_archive, write_csv, write_manifest

log = logging.getLogger("ntnisac")

OUTPUT_ROOT_ENV = "NTNISAC_OUTPUT_ROOT"
SWEEP_AXES = {
    "quota": "matching.quota",
    "pilot": "frame.pilot_length",
    "band_mode": "constellation.band_mode",
    "ra_mode": "ra.mode",
}


def tool_version() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _flatten(tree, prefix=""):
    if isinstance(tree, dict):
        for k in sorted(tree, key=str):
            yield from _flatten(tree[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(tree, list) and any(isinstance(v, (dict, list)) for v in tree):
        for i, v in enumerate(tree):
            yield from _flatten(v, f"{prefix}.{i}")
    else:
        yield prefix, tree


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _out_dir(args, cfg: SimConfig, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / command
    return Path(cfg.output.dir)


def _load(args) -> SimConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    path = args.config or bundled_config_path()
    try:
        return load_config(path, overrides)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def _manifest(cfg: SimConfig, out: Path, files: list[str], started: str, command: str, extra=None) -> None:
    entries = {
        "command": command,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "version": tool_version(),
        "started": started,
        "finished": _now(),
        "files": ",".join(files),
        "throughput_weighting": "user",
    }
    if command in ("run", "sweep"):
        entries["ra_label"] = "CB-surrogate" if cfg.ra.mode == "cb" else cfg.ra.mode
    entries.update(extra or {})
    for k, v in _flatten(cfg.raw):
        entries[f"config.{k}"] = v
    write_manifest(out / "manifest.txt", entries)


def run_to_dir(cfg: SimConfig, out: Path, command: str = "run") -> dict:
    started = _now()
    archive = run(cfg)
    files = write_archive(archive, out)
    stats = summary(archive)
    _manifest(cfg, out, files, started, command, {f"summary.{k}": v for k, v in stats.items()})
    return stats


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "run")
    stats = run_to_dir(cfg, out)
    print(f"mean per-user throughput {stats['mean_user_throughput_bps'] / 1e6:.3f} Mbps, "
          f"unmatched {stats['unmatched_fraction']:.3%}; archive in {out}")
    return 0


def cmd_nmse(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "nmse")
    started = _now()
    s = cfg.sensing
    rows = nmse_sweep(cfg.shell(s.shell), cfg.ground, s.rain_grid, s.pilot_grid, s.trials, cfg.seed, s.elevation_deg)
    write_csv(
        out / "nmse.csv",
        ["rain_mmh", "L_p", "nmse_snr", "crlb_norm", "nmse_att"],
        ((r.rain_mmh, r.pilot_length, r.nmse_snr, r.crlb_norm, r.nmse_att) for r in rows),
    )
    _manifest(cfg, out, ["nmse.csv"], started, "nmse")
    print(f"{len(rows)} rows written to {out / 'nmse.csv'}")
    return 0


def attenuation_table(cfg: SimConfig) -> list[tuple[float, float, float]]:
    a = cfg.attenuation
    shell = cfg.shell(a.shell)
    coeffs = shell_rain_coeffs(shell, cfg.ground)
    rows = []
    for r in a.rain_grid:
        for el in a.elevation_grid:
            att = rain_attenuation(r, rain_path_length(el, cfg.ground.rain_height_m), coeffs)
            rows.append((float(r), float(el), float(linear_to_db(att))))
    return rows


def cmd_attenuation(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "attenuation")
    started = _now()
    write_csv(out / "attenuation.csv", ["rain_mmh", "elevation_deg", "atten_db"], attenuation_table(cfg))
    _manifest(cfg, out, ["attenuation.csv"], started, "attenuation")
    print(f"written {out / 'attenuation.csv'}")
    return 0


def _sweep_point(job):
    cfg, out, label = job
    return label, run_to_dir(cfg, out, "sweep")


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = _out_dir(args, cfg, "sweep")
    axis = args.axis
    if args.values:
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    else:
        values = list(getattr(cfg.sweep, axis))
        if axis == "quota" and not args.raw_quotas:
            values = scaled_quotas(cfg, values)
    jobs = []
    for v in values:
        point = with_overrides(cfg, [f"{SWEEP_AXES[axis]}={v}"])
        jobs.append((point, out / f"{axis}={v}", str(v)))
    started = _now()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    keys = list(results[0][1])
    write_csv(out / "comparison.csv", [axis] + keys, ([label] + [st[k] for k in keys] for label, st in results))
    # transposed view: one column per sweep point
    write_csv(
        out / "comparison_wide.csv",
        ["metric"] + [f"{axis}={label}" for label, _ in results],
        ([k] + [st[k] for _, st in results] for k in keys),
    )
    _manifest(cfg, out, ["comparison.csv", "comparison_wide.csv"], started, f"sweep {axis}",
              {"sweep.axis": axis, "sweep.values": ",".join(label for label, _ in results)})
    for label, st in results:
        print(f"{axis}={label}: {st['mean_user_throughput_bps'] / 1e6:.3f} Mbps, unmatched {st['unmatched_fraction']:.3%}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntnisac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", "-c", help="YAML config (default: bundled canonical_desk.yaml)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int, help="shorthand for --set seed=N")
        sp.add_argument("--out", "-o", help="output directory")

    common(sub.add_parser("run", help="simulate and write the metrics archive"))
    common(sub.add_parser("nmse", help="estimator NMSE over rain intensity and pilot length"))
    common(sub.add_parser("attenuation", help="rain attenuation over intensity and elevation"))
    sw = sub.add_parser("sweep", help="repeat 'run' along one axis")
    common(sw)
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", help="comma-separated values (default: the config's sweep grid)")
    sw.add_argument("--raw-quotas", action="store_true",
                    help="use quota values as given instead of scaling them to the scenario's cell load")
    sw.add_argument("--jobs", "-j", type=int, default=1, help="parallel processes")
    return p


COMMANDS = {"run": cmd_run, "nmse": cmd_nmse, "attenuation": cmd_attenuation, "sweep": cmd_sweep}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported, not swallowed
        if args.verbose:
            log.exception("run failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
