import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from wbancoex.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from wbancoex.cli import commands
from wbancoex.cli.config import load_config
from wbancoex.errors import ConfigError, ValidationError
from wbancoex.link import SinrSeries

BASE = {
    "run": {"seed": "5", "duration_s": "20", "subjects_of_interest": "1", "subjects": "1, 2",
            "shadowing": "full"},
    "wban": {"hub_site": "chest", "sensor_sites": "left_hip, right_hip, left_ankle",
             "relay_mode": "varying"},
}


def write_config(path: Path, overrides=None, drop=()):
    sections = {k: dict(v) for k, v in BASE.items()}
    for sec, kv in (overrides or {}).items():
        sections.setdefault(sec, {}).update(kv)
    for sec, key in drop:
        del sections[sec][key]
    lines = []
    for sec, kv in sections.items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in kv.items())
    path.write_text("\n".join(lines) + "\n")
    return path


def cli(cmd, cfg, out, *extra):
    return main([cmd, "--config", str(cfg), "--out", str(out), *extra])


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def manifest(d: Path) -> dict:
    return json.loads((d / "manifest.json").read_text())


# --- config errors -----------------------------------------------------------------

def test_missing_required_key_names_it(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini", drop=[("wban", "relay_mode")])
    assert cli("synth", cfg, tmp_path / "out") == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "relay_mode" in err and "[wban]" in err
    with pytest.raises(ConfigError, match="duration_s"):
        load_config(write_config(tmp_path / "d.ini", drop=[("run", "duration_s")]))


@pytest.mark.parametrize("override", [
    {"run": {"duration_s": "-3"}},
    {"run": {"duration_s": "ten"}},
    {"run": {"shadowing": "heavy"}},
    {"wban": {"relay_mode": "sometimes"}},
    {"wban": {"hub_site": "knee"}},
    {"run": {"subjects": "1"}},
    {"run": {"channel_source": "traces"}},
    {"traces": {"split_index": "half"}},
])
def test_bad_values_are_config_errors(tmp_path, override):
    cfg = write_config(tmp_path / "c.ini", override)
    assert cli("run", cfg, tmp_path / "out") == EXIT_CONFIG


def test_unreadable_config_and_bad_seed(tmp_path):
    assert cli("run", tmp_path / "nope.ini", tmp_path / "out") == EXIT_CONFIG
    cfg = write_config(tmp_path / "c.ini")
    assert cli("run", cfg, tmp_path / "out", "--seed", "-1") == EXIT_CONFIG


def test_config_records_seed_override_and_hash(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.ini"), seed=99)
    assert cfg.seed == 99 and len(cfg.sha256) == 64
    assert [a.name for a in cfg.analysis_sets] == ["S1_I2"]


# --- synth ---------------------------------------------------------------------------

def test_synth_fixed_relay_scenario(tmp_path):
    cfg = write_config(tmp_path / "c.ini", {"wban": {"relay_mode": "fixed_hips",
                                                     "sensor_sites": "head, left_ankle, back"}})
    assert cli("synth", cfg, tmp_path / "out") == EXIT_OK
    d = tmp_path / "out" / "synth" / "hub-chest_shadow-full" / "S1_I2"
    names = [p.stem.split("__") for p in d.glob("*.csv")]
    intra = [n for n in names if n[0].split(".")[0] == n[1].split(".")[0]]
    victim = [n for n in names if n[0].startswith("S2.")]
    assert len(intra) >= 3 and len(victim) >= 3
    # hub and both hip relays are victims
    assert {rx for _, rx in victim} == {"S1.chest", "S1.left_hip", "S1.right_hip"}
    first = (d / f"{names[0][0]}__{names[0][1]}.csv").read_text().splitlines()
    assert "# seed=5" in first and any(l.startswith("# config_sha256=") for l in first)


def test_synth_is_byte_identical_for_a_repeated_seed(tmp_path):
    cfg = write_config(tmp_path / "c.ini")
    assert cli("synth", cfg, tmp_path / "a") == EXIT_OK
    assert cli("synth", cfg, tmp_path / "b") == EXIT_OK
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert cli("synth", cfg, tmp_path / "c", "--seed", "6") == EXIT_OK
    assert tree(tmp_path / "a") != tree(tmp_path / "c")


def test_refuses_to_clobber_foreign_directory(tmp_path):
    cfg = write_config(tmp_path / "c.ini")
    (tmp_path / "out" / "synth").mkdir(parents=True)
    (tmp_path / "out" / "synth" / "precious.txt").write_text("x")
    assert cli("synth", cfg, tmp_path / "out") == EXIT_DATA
    assert (tmp_path / "out" / "synth" / "precious.txt").exists()


# --- run -----------------------------------------------------------------------------

def test_ten_result_sets(tmp_path):
    cfg = write_config(tmp_path / "c.ini", {"run": {"duration_s": "3", "subjects_of_interest": "1, 2",
                                                    "subjects": "1, 2, 3, 4, 5, 6"}})
    assert cli("run", cfg, tmp_path / "out") == EXIT_OK
    sets = sorted(p.name for p in (tmp_path / "out" / "runs" / "hub-chest_shadow-full").iterdir())
    assert len(sets) == 10 and sets[0] == "S1_I2" and "S2_I1" in sets
    assert manifest(tmp_path / "out" / "runs")["complete"] is True


def test_relay_mode_none_gives_single_link_only(tmp_path):
    cfg = write_config(tmp_path / "c.ini", {"wban": {"relay_mode": "none"}})
    assert cli("run", cfg, tmp_path / "out") == EXIT_OK
    d = tmp_path / "out" / "runs" / "hub-chest_shadow-full" / "S1_I2"
    assert sorted(p.name for p in d.iterdir()) == ["packets_single_link.csv", "schedule.csv",
                                                   "series_single_link.csv"]


def test_interrupted_run_is_marked_incomplete(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.ini", {"run": {"subjects": "1, 2, 3"}})
    real = commands._run_unit
    calls = []

    def flaky(c, unit, root):
        calls.append(unit)
        if len(calls) > 1:
            raise ValidationError("simulated interruption")
        return real(c, unit, root)

    monkeypatch.setattr(commands, "_run_unit", flaky)
    assert cli("run", cfg, tmp_path / "out") == EXIT_DATA
    runs = tmp_path / "out" / "runs"
    assert manifest(runs)["complete"] is False
    assert (runs / "hub-chest_shadow-full" / "S1_I2" / "series_single_link.csv").is_file()
    monkeypatch.setattr(commands, "_run_unit", real)
    assert cli("run", cfg, tmp_path / "out") == EXIT_OK
    assert manifest(runs)["complete"] is True


# --- stats and report ---------------------------------------------------------------

def test_full_pipeline(tmp_path):
    cfg = write_config(tmp_path / "c.ini", {"run": {"shadowing": "none, full"}})
    out = tmp_path / "out"
    for cmd in ("synth", "run", "stats", "report"):
        assert cli(cmd, cfg, out) == EXIT_OK, cmd
        assert manifest(out / ("runs" if cmd == "run" else cmd))["complete"] is True
    s = json.loads((out / "stats" / "hub-chest_shadow-full" / "S1_I2" / "summary.json").read_text())
    assert set(s["schemes"]) == {"single_link", "opportunistic", "selection_combining"}
    assert s["seed"] == 5 and s["interference"]["n_packets"] > 0
    for scheme in s["schemes"]:
        for kind in ("outage", "lcr", "aod"):
            assert (out / "stats" / "hub-chest_shadow-full" / "S1_I2" / f"{scheme}_{kind}.csv").is_file()
            assert (out / "stats" / "hub-chest_shadow-full" / "average" / f"{scheme}_{kind}.csv").is_file()
    rep = json.loads((out / "report" / "summary.json").read_text())
    assert set(rep["variants"]) == {"hub-chest_shadow-none", "hub-chest_shadow-full"}
    figs = {p.name for p in (out / "report").iterdir() if p.is_dir()}
    assert {"outage_by_hub_and_shadowing", "lcr_by_subject"} <= figs


def test_stats_before_run_is_a_data_error(tmp_path):
    cfg = write_config(tmp_path / "c.ini")
    assert cli("stats", cfg, tmp_path / "out") == EXIT_DATA
    assert cli("report", cfg, tmp_path / "out") == EXIT_DATA


def test_empty_series_file_is_a_data_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini")
    out = tmp_path / "out"
    assert cli("run", cfg, out) == EXIT_OK
    f = out / "runs" / "hub-chest_shadow-full" / "S1_I2" / "series_opportunistic.csv"
    lines = f.read_text().splitlines(keepends=True)
    f.write_text("".join(l for l in lines if l.startswith("#") or l.startswith("time_s")))
    capsys.readouterr()
    assert cli("stats", cfg, out) == EXIT_DATA
    assert "series_opportunistic.csv" in capsys.readouterr().err
    assert manifest(out / "stats")["complete"] is False


def test_normal_fit_skips_theory_with_a_note(tmp_path):
    cfg = load_config(write_config(tmp_path / "c.ini"))
    x = np.random.default_rng(0).normal(16.3322, 5.1008, 20_000)
    x = x[x > 0]
    series = SinrSeries("single_link", 0.04, 10 * np.log10(x))
    info = commands.scheme_stats(cfg, series, tmp_path, {"seed": 5})
    assert info["fit"]["family"] == "normal"
    assert "skipped" in info["theory_note"]
    assert (tmp_path / "single_link_theory_outage.csv").is_file()
    assert not (tmp_path / "single_link_theory_lcr.csv").exists()


def test_trace_driven_mode_reads_synth_output(tmp_path):
    cfg = write_config(tmp_path / "c.ini")
    out = tmp_path / "out"
    assert cli("synth", cfg, out) == EXIT_OK
    assert cli("run", cfg, out) == EXIT_OK
    tcfg = write_config(tmp_path / "t.ini", {"run": {"channel_source": "traces"},
                                             "traces": {"dir": "out/synth/hub-chest_shadow-full"}})
    assert cli("run", tcfg, tmp_path / "tout") == EXIT_OK
    rel = Path("hub-chest_shadow-full") / "S1_I2" / "series_opportunistic.csv"

    def body(p):
        return [l for l in p.read_text().splitlines() if not l.startswith("#")]

    assert body(out / "runs" / rel) == body(tmp_path / "tout" / "runs" / rel)


def test_trace_driven_mode_reports_missing_link(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.ini")
    assert cli("synth", cfg, tmp_path / "out") == EXIT_OK
    d = tmp_path / "out" / "synth" / "hub-chest_shadow-full" / "S1_I2"
    (d / "S2.left_hip__S1.left_ankle.csv").unlink()
    tcfg = write_config(tmp_path / "t.ini", {"run": {"channel_source": "traces"},
                                             "traces": {"dir": "out/synth/hub-chest_shadow-full"}})
    capsys.readouterr()
    assert cli("run", tcfg, tmp_path / "tout") == EXIT_DATA
    assert "S2.left_hip -> S1.left_ankle" in capsys.readouterr().err


def test_outputs_do_not_depend_on_worker_count(tmp_path):
    cfg = write_config(tmp_path / "c.ini", {"run": {"duration_s": "10", "subjects": "1, 2, 3"}})
    for name, workers in (("w1", "1"), ("w2", "2")):
        for cmd in ("synth", "run", "stats"):
            assert cli(cmd, cfg, tmp_path / name, "--workers", workers) == EXIT_OK
    cmp = filecmp.dircmp(tmp_path / "w1", tmp_path / "w2")
    assert tree(tmp_path / "w1") == tree(tmp_path / "w2"), cmp.diff_files
