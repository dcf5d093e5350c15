import csv

import pytest
import yaml

from conftest import desk_config
from ntnisac import cli
from ntnisac.config import ConfigError, apply_override, bundled_config_path, load_config, with_overrides

DESK = bundled_config_path().read_text()


def test_desk_config_values():
    cfg = desk_config()
    assert cfg.seed == 42 and cfg.horizon_frames == 200
    leo, vleo = cfg.shells
    assert (leo.size, vleo.size) == (720, 1584)
    assert vleo.carrier_hz == 20e9 and vleo.bandwidth_hz == 400e6
    assert vleo.symbol_duration_s == pytest.approx(71.35e-6)
    assert cfg.frame.system_duration_s == pytest.approx(10.0)
    assert cfg.ground.rain_height_m == 4000.0
    assert cfg.shell(None) is vleo


@pytest.mark.parametrize("mode,bands", [("multi", ["S", "K"]), ("s_only", ["S"]), ("k_only", ["K"])])
def test_band_modes(mode, bands):
    assert [s.band for s in desk_config(f"constellation.band_mode={mode}").active_shells] == bands


def test_overrides_parse_yaml_values():
    tree = {"a": {"b": [{"c": 1}]}}
    apply_override(tree, "a.b.0.c=2.5")
    apply_override(tree, "x.y=[1, 2]")
    apply_override(tree, "z=null")
    assert tree == {"a": {"b": [{"c": 2.5}]}, "x": {"y": [1, 2]}, "z": None}
    with pytest.raises(ConfigError, match="key=value"):
        apply_override(tree, "novalue")
    with pytest.raises(ConfigError, match="scalar"):
        apply_override(tree, "a.b.0.c.d=1")


def test_hash_tracks_content():
    a, b = desk_config(), desk_config()
    assert a.config_hash() == b.config_hash()
    assert desk_config("seed=1").config_hash() != a.config_hash()
    assert with_overrides(a, ["seed=1"]).config_hash() == desk_config("seed=1").config_hash()


def test_unknown_key_reports_line():
    text = DESK.replace("  pilot_length: 256", "  pilot_lenght: 256")
    line = text.splitlines().index("  pilot_lenght: 256") + 1
    with pytest.raises(ConfigError) as err:
        load_config(text=text)
    assert err.value.key == "frame.pilot_lenght" and err.value.line == line
    assert f"(line {line})" in str(err.value)


@pytest.mark.parametrize("override,fragment", [
    ("frame.pilot_length=abc", "expected int"),
    ("ra.mode=magic", "must be one of"),
    ("matching.broker_loss=sometimes", "must be one of"),
    ("horizon_frames=0", ">= 1"),
    ("bogus=1", "unknown top-level key"),
])
def test_invalid_values(override, fragment):
    with pytest.raises(ConfigError, match=fragment):
        desk_config(override)


def test_missing_section_and_malformed_yaml():
    with pytest.raises(ConfigError, match="missing required section 'rain'"):
        tree = yaml.safe_load(DESK)
        del tree["rain"]
        load_config(text=yaml.safe_dump(tree))
    with pytest.raises(ConfigError, match="malformed YAML"):
        load_config(text="a: [1, 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(text="- 1\n")


def test_cli_attenuation_and_manifest(tmp_path):
    assert cli.main(["attenuation", "--out", str(tmp_path)]) == 0
    with open(tmp_path / "attenuation.csv") as fh:
        rows = {(float(r["rain_mmh"]), float(r["elevation_deg"])): float(r["atten_db"]) for r in csv.DictReader(fh)}
    assert rows[(8.77, 30.0)] == pytest.approx(6.5326, abs=1e-4)
    assert rows[(0.0, 90.0)] == 0.0
    manifest = dict(line.split("=", 1) for line in (tmp_path / "manifest.txt").read_text().splitlines())
    assert manifest["command"] == "attenuation"
    assert manifest["seed"] == "42"
    assert manifest["config.frame.pilot_length"] == "256"
    assert len(manifest["config_hash"]) == 64


def test_cli_run_and_env_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("NTNISAC_OUTPUT_ROOT", str(tmp_path))
    argv = ["run", "--seed", "3", "--set", "horizon_frames=3", "--set", "grid.rows=3", "--set", "grid.cols=3"]
    assert cli.main(argv) == 0
    out = tmp_path / "run"
    for name in ("throughput_samples.csv", "frame_metrics.csv", "cdf.csv", "manifest.txt"):
        assert (out / name).exists()
    text = (out / "manifest.txt").read_text()
    assert "seed=3" in text and "ra_label=proposed" in text and "summary.mean_user_throughput_bps=" in text


def test_cli_nmse_small(tmp_path):
    argv = ["nmse", "-o", str(tmp_path), "--set", "sensing.trials=50", "--set", "sensing.rain_grid=[1, 5]",
            "--set", "sensing.pilot_grid=[16]"]
    assert cli.main(argv) == 0
    with open(tmp_path / "nmse.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["L_p"] for r in rows] == ["16", "16"]
    assert list(rows[0]) == ["rain_mmh", "L_p", "nmse_snr", "crlb_norm", "nmse_att"]


def test_cli_sweep(tmp_path):
    argv = ["sweep", "-o", str(tmp_path), "--axis", "quota", "--values", "1,50",
            "--set", "horizon_frames=3", "--set", "grid.rows=3", "--set", "grid.cols=3"]
    assert cli.main(argv) == 0
    with open(tmp_path / "comparison.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["quota"] for r in rows] == ["1", "50"]
    assert (tmp_path / "quota=1" / "manifest.txt").exists()
    assert (tmp_path / "comparison_wide.csv").read_text().startswith("metric,quota=1,quota=50")


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["run", "--set", "ra.mode=magic", "-o", str(tmp_path)]) == 1
    assert "config error" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text(DESK.replace("n_total: 1000", "n_total: 1"))
    # a one-frame budget cannot hold sensing plus feedback
    assert cli.main(["run", "--config", str(bad), "-o", str(tmp_path / "o"), "--set", "horizon_frames=2"]) == 2
    assert "error:" in capsys.readouterr().err
