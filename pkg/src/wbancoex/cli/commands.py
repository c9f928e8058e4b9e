"""Subcommand implementations.

Output tree under ``--out``::

    synth/<variant>/<set>/<tx>__<rx>.csv
    runs/<variant>/<set>/{series,packets}_<scheme>.csv, schedule.csv
    stats/<variant>/<set>/<scheme>_<kind>.csv, <scheme>_theory_<kind>.csv, summary.json
    stats/<variant>/average[_S<k>]/<scheme>_<kind>.csv, summary.json
    report/<figure>/<curve>.csv, report/summary.json

Each subcommand directory carries a ``manifest.json`` whose ``complete``
flag only turns true once every analysis set has been written.
"""

from __future__ import annotations

import json
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..channel import (
    extract_large_scale,
    load_traces,
    overlay,
    resample,
    save_trace,
    split_trace,
)
from ..errors import DegenerateInputError, ParameterError, ValidationError
from ..link import (
    SCHEMES,
    load_packet_log,
    load_series,
    run_experiment,
    save_packet_log,
    save_series,
)
from ..mac import build_superframe, export_schedule, schedule_cycles, superframe_length
from ..scenario import AnalysisSet, ScenarioConfig, build_scenario, has_link, seed_sequence, synthesize_traces
from ..stats.correlation import cross_correlation, independence_check
from ..stats.curves import (
    CURVE_KINDS,
    THEORY_FAMILIES,
    ThresholdCurve,
    aod_curve,
    average_curves,
    lcr_curve,
    load_curve,
    outage_probability,
    outage_threshold,
    save_curve,
    theoretical_curves,
)
from ..stats.fitting import fit_best_distribution
from .config import FORMAT_TAG, RunConfig, variant_name, with_hub

OUTAGE_LEVELS = (0.1, 0.01)


# --- small helpers -------------------------------------------------------------------

def _dump_json(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n",
                    encoding="utf-8", newline="\n")


def _fresh_dir(path: Path):
    """Remove a previous output of the same subcommand (only if it carries our manifest)."""
    if path.exists():
        if not (path / "manifest.json").is_file():
            raise ValidationError(f"{path} exists and is not a previous output directory")
        shutil.rmtree(path)
    path.mkdir(parents=True)


def _manifest(cfg: RunConfig, sub: str, params: dict, complete: bool) -> dict:
    return {
        "format": FORMAT_TAG,
        "subcommand": sub,
        "config_path": cfg.path,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
        "output_dir": sub if sub != "run" else "runs",
        "params": params,
        "complete": complete,
    }


def _units(cfg: RunConfig) -> list[tuple[str, str, AnalysisSet]]:
    return [(h, s, a) for h, s in cfg.variants for a in cfg.analysis_sets]


def _execute(fn, cfg: RunConfig, units, root: Path) -> list:
    """Run ``fn(cfg, unit, root)`` for every unit; results come back in unit order."""
    if cfg.workers == 1 or len(units) == 1:
        return [fn(cfg, u, root) for u in units]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, [cfg] * len(units), units, [root] * len(units)))


def _with_manifest(cfg: RunConfig, out: Path, sub: str, params: dict, fn) -> Path:
    d = out / ("runs" if sub == "run" else sub)
    _fresh_dir(d)
    _dump_json(_manifest(cfg, sub, params, False), d / "manifest.json")
    fn(d)
    _dump_json(_manifest(cfg, sub, params, True), d / "manifest.json")
    return d


def _stamp(cfg: RunConfig, **extra) -> dict:
    out = {"seed": cfg.seed, "config_sha256": cfg.sha256}
    out.update(extra)
    return out


def _set_dir(root: Path, hub: str, shadow: str, aset: AnalysisSet) -> Path:
    return root / variant_name(hub, shadow) / aset.name


def scenario_for(cfg: RunConfig, hub: str, shadow: str, aset: AnalysisSet,
                 available=None) -> ScenarioConfig:
    woi = replace(with_hub(cfg.wban, hub), network_id=f"S{aset.subject_of_interest}")
    itf = replace(cfg.interferer, network_id=f"S{aset.interferer}")
    return build_scenario([woi, itf], motion=cfg.motion, shadowing=shadow,
                          channel_source=cfg.channel_source, available_links=available)


def _trace_name(link) -> str:
    return f"{link[0]}__{link[1]}.csv"


# --- channel acquisition ------------------------------------------------------------

def synthetic_traces(cfg: RunConfig, scen: ScenarioConfig, aset: AnalysisSet):
    return synthesize_traces(
        scen, cfg.duration_s, cfg.seed, subject=aset.subject_of_interest, set_name=aset.name,
        spec=cfg.fading, onbody_sigma_db=cfg.onbody_sigma_db,
        onbody_coherence_s=cfg.onbody_coherence_s, onbody_dt=cfg.onbody_dt_s,
        target_dt=cfg.resample_dt_s)


def _lookup(traces, link):
    if link in traces:
        return traces[link]
    rev = traces.get((link[1], link[0]))
    return None if rev is None else rev.replace(link_id=link)


def measured_traces(cfg: RunConfig, hub: str, shadow: str, aset: AnalysisSet):
    """Load, split, resample and (optionally) overlay user-supplied traces."""
    base = cfg.traces.directory
    d = base / aset.name if (base / aset.name).is_dir() else base
    files = sorted(d.glob("*.csv"))
    if not files:
        raise ValidationError(f"no trace files in {d}")
    raw = load_traces(files)
    proto = scenario_for(replace(cfg, channel_source="synthetic"), hub, shadow, aset)
    out: dict = {}
    for link in proto.intra_links:
        tr = _lookup(raw, link)
        if tr is None:
            continue
        if cfg.traces.split_index is not None:
            head, tail = split_trace(tr, cfg.traces.split_index)
            tr = head if cfg.traces.segment == "head" else tail
        out[link] = resample(tr, cfg.resample_dt_s)
    hub_node = proto.woi.hub
    for link in proto.inter_links:
        tr = _lookup(raw, link)
        if tr is not None:
            out[link] = resample(tr, cfg.resample_dt_s)
            continue
        if not cfg.traces.overlay_missing or link[1] == hub_node:
            continue
        # inter-body channel to a relay: channel to the hub plus the relay's
        # mean-removed on-body shadowing towards the hub
        to_hub = _lookup(raw, (link[0], hub_node))
        onbody = _lookup(out, (link[1], hub_node))
        if to_hub is None or onbody is None:
            continue
        ls = extract_large_scale(onbody)
        ls = ls.replace(samples=ls.samples - ls.samples.mean())
        out[link] = overlay(resample(to_hub, cfg.resample_dt_s), ls).replace(link_id=link)
    scenario_for(cfg, hub, shadow, aset, available=out.keys())  # coverage check
    return out


def _traces_for(cfg, hub, shadow, aset, traces_root: Path | None):
    if cfg.channel_source == "traces":
        return measured_traces(cfg, hub, shadow, aset)
    scen = scenario_for(cfg, hub, shadow, aset)
    d = None if traces_root is None else _set_dir(traces_root, hub, shadow, aset)
    if d is not None and d.is_dir():
        loaded = load_traces(sorted(d.glob("*.csv")))
        missing = [l for l in scen.required_links if not has_link(loaded, l)]
        if missing:
            raise ValidationError(f"{d}: missing trace for link {missing[0][0]} -> {missing[0][1]}")
        return loaded
    return synthetic_traces(cfg, scen, aset)


# --- synth ---------------------------------------------------------------------------

def _synth_unit(cfg: RunConfig, unit, root: Path) -> int:
    hub, shadow, aset = unit
    scen = scenario_for(cfg, hub, shadow, aset)
    traces = synthetic_traces(cfg, scen, aset)
    d = _set_dir(root, hub, shadow, aset)
    d.mkdir(parents=True)
    for link in scen.required_links:
        save_trace(traces[link], d / _trace_name(link), _stamp(cfg, shadowing=shadow))
    return len(scen.required_links)


def cmd_synth(cfg: RunConfig, out: Path) -> Path:
    if cfg.channel_source != "synthetic":
        raise ValidationError("synth needs channel_source = synthetic")
    params = {"duration_s": cfg.duration_s, "resample_dt_s": cfg.resample_dt_s,
              "variants": [variant_name(*v) for v in cfg.variants],
              "sets": [a.name for a in cfg.analysis_sets]}
    return _with_manifest(cfg, out, "synth", params,
                          lambda d: _execute(_synth_unit, cfg, _units(cfg), d))


# --- run -----------------------------------------------------------------------------

def run_set(cfg: RunConfig, hub: str, shadow: str, aset: AnalysisSet, traces_root: Path | None = None):
    """Schedule and simulate one analysis set; returns ``(result, schedule)``."""
    traces = _traces_for(cfg, hub, shadow, aset, traces_root)
    available = traces.keys() if cfg.channel_source == "traces" else None
    scen = scenario_for(cfg, hub, shadow, aset, available=available)
    frames = {c.network_id: build_superframe(c, cfg.slot_s) for c in scen.networks}
    td = max(superframe_length(f) for f in frames.values())
    mac_seed = int(seed_sequence(cfg.seed, "mac", aset.name, hub).generate_state(1)[0])
    schedule = schedule_cycles(len(frames), td, cfg.duration_s, mac_seed, frames)
    result = run_experiment(scen, traces, schedule, seed=cfg.seed,
                            decision_block=cfg.decision_block, noise_dbm=cfg.noise_dbm)
    return result, schedule


def _run_unit(cfg: RunConfig, unit, root: Path) -> int:
    hub, shadow, aset = unit
    traces_root = root.parent / "synth"
    result, schedule = run_set(cfg, hub, shadow, aset, traces_root)
    d = _set_dir(root, hub, shadow, aset)
    d.mkdir(parents=True)
    stamp = _stamp(cfg, set=aset.name, variant=variant_name(hub, shadow))
    export_schedule(schedule, d / "schedule.csv", stamp)
    for scheme, series in result.series.items():
        save_series(series, d / f"series_{scheme}.csv", stamp)
        save_packet_log(result.packets[scheme], d / f"packets_{scheme}.csv", stamp)
    return len(result.series["single_link"])


def cmd_run(cfg: RunConfig, out: Path) -> Path:
    params = {"duration_s": cfg.duration_s, "slot_s": cfg.slot_s,
              "decision_block": cfg.decision_block, "noise_dbm": cfg.noise_dbm,
              "channel_source": cfg.channel_source, "relay_mode": cfg.wban.relay_mode,
              "variants": [variant_name(*v) for v in cfg.variants],
              "sets": [a.name for a in cfg.analysis_sets]}
    return _with_manifest(cfg, out, "run", params,
                          lambda d: _execute(_run_unit, cfg, _units(cfg), d))


# --- stats ---------------------------------------------------------------------------

def _finite(x):
    x = float(x)
    return x if np.isfinite(x) else None


def scheme_stats(cfg: RunConfig, series, d: Path, stamp: dict) -> dict:
    th = np.asarray(cfg.stats.thresholds_db)
    curves = {"outage": outage_probability(series, th), "lcr": lcr_curve(series, th),
              "aod": aod_curve(series, th)}
    for kind, c in curves.items():
        save_curve(c, d / f"{series.scheme}_{kind}.csv", stamp)
    info: dict = {"n": len(series), "dt_packet": series.dt_packet}
    for p in OUTAGE_LEVELS:
        info[f"outage_{p:g}_threshold_db"] = _finite(outage_threshold(series, p))
    try:
        fit = fit_best_distribution(series.linear, cfg.stats.families)
    except (DegenerateInputError, ParameterError) as exc:
        info["fit"] = None
        info["theory_note"] = f"no fit: {exc}"
        return info
    info["fit"] = fit.as_dict()
    theory = theoretical_curves(fit, th, cfg.stats.doppler_hz)
    for kind, c in theory.items():
        save_curve(c, d / f"{series.scheme}_theory_{kind}.csv", {**stamp, "family": fit.family})
    if fit.family not in THEORY_FAMILIES:
        info["theory_note"] = (f"theoretical LCR/AOD skipped: defined for {list(THEORY_FAMILIES)} "
                               f"only, best fit is {fit.family}")
    else:
        info["theory_note"] = ""
    return info


def interference_summary(cfg: RunConfig, log) -> dict:
    """Correlation between desired and interfering power over interfered packets."""
    hit = np.isfinite(log.interf_dbm)
    s = 10.0 ** (log.signal_dbm[hit] / 10.0)
    i = 10.0 ** (log.interf_dbm[hit] / 10.0)
    out: dict = {"n_interfered": int(hit.sum()), "n_packets": len(log)}
    try:
        out["cross_correlation"] = cross_correlation(s, i)
        ind = independence_check(s, i, cfg.stats.independence_bins)
        out["independence"] = {"score": ind.score, "bins": ind.bins, "n": ind.n,
                               "undersampled": ind.undersampled}
    except (DegenerateInputError, ParameterError) as exc:
        out["cross_correlation"] = None
        out["independence"] = None
        out["note"] = str(exc)
    return out


def _stats_unit(cfg: RunConfig, unit, root: Path) -> dict:
    hub, shadow, aset = unit
    src = _set_dir(root.parent / "runs", hub, shadow, aset)
    if not src.is_dir():
        raise ValidationError(f"no run outputs in {src}; run the 'run' subcommand first")
    d = _set_dir(root, hub, shadow, aset)
    d.mkdir(parents=True)
    stamp = _stamp(cfg, set=aset.name, variant=variant_name(hub, shadow))
    summary = {**stamp, "schemes": {}}
    for scheme in SCHEMES:
        f = src / f"series_{scheme}.csv"
        if f.is_file():
            summary["schemes"][scheme] = scheme_stats(cfg, load_series(f), d, stamp)
    if not summary["schemes"]:
        raise ValidationError(f"no series files in {src}")
    summary["interference"] = interference_summary(cfg, load_packet_log(src / "packets_single_link.csv"))
    _dump_json(summary, d / "summary.json")
    return summary


def _average(cfg, root: Path, hub, shadow, sets, name, summaries):
    vdir = root / variant_name(hub, shadow)
    d = vdir / name
    d.mkdir()
    stamp = _stamp(cfg, variant=variant_name(hub, shadow), sets=" ".join(a.name for a in sets))
    agg: dict = {**stamp, "schemes": {}}
    for scheme in SCHEMES:
        have = [a for a in sets if scheme in summaries[a.name]["schemes"]]
        if not have:
            continue
        entry = {"n_sets": len(have)}
        for kind in CURVE_KINDS:
            c = average_curves(load_curve(vdir / a.name / f"{scheme}_{kind}.csv") for a in have)
            save_curve(c, d / f"{scheme}_{kind}.csv", stamp)
            if kind == "outage":
                for p in OUTAGE_LEVELS:
                    entry[f"outage_{p:g}_threshold_db"] = _curve_threshold(c, p)
        for kind in CURVE_KINDS:
            # theory curves exist only where the set's best fit supports them
            files = [vdir / a.name / f"{scheme}_theory_{kind}.csv" for a in have]
            files = [f for f in files if f.is_file()]
            if files:
                c = average_curves(load_curve(f) for f in files)
                save_curve(c, d / f"{scheme}_theory_{kind}.csv", {**stamp, "n_sets": len(files)})
                entry[f"n_sets_theory_{kind}"] = len(files)
        agg["schemes"][scheme] = entry
    _dump_json(agg, d / "summary.json")


def _curve_threshold(curve: ThresholdCurve, p: float):
    """First grid threshold at which an averaged outage curve reaches ``p``."""
    idx = np.nonzero(curve.values >= p)[0]
    return float(curve.thresholds_db[idx[0]]) if idx.size else None


def cmd_stats(cfg: RunConfig, out: Path) -> Path:
    params = {"doppler_hz": cfg.stats.doppler_hz, "families": list(cfg.stats.families),
              "threshold_min_db": cfg.stats.thresholds_db[0],
              "threshold_max_db": cfg.stats.thresholds_db[-1],
              "n_thresholds": len(cfg.stats.thresholds_db),
              "independence_bins": cfg.stats.independence_bins}

    def body(d: Path):
        units = _units(cfg)
        results = _execute(_stats_unit, cfg, units, d)
        summaries: dict = {}
        for (hub, shadow, aset), s in zip(units, results):
            summaries.setdefault((hub, shadow), {})[aset.name] = s
        for hub, shadow in cfg.variants:
            sets = cfg.analysis_sets
            _average(cfg, d, hub, shadow, sets, "average", summaries[(hub, shadow)])
            for soi in cfg.subjects_of_interest:
                sub = [a for a in sets if a.subject_of_interest == soi]
                if sub:
                    _average(cfg, d, hub, shadow, sub, f"average_S{soi}", summaries[(hub, shadow)])

    return _with_manifest(cfg, out, "stats", params, body)


# --- report --------------------------------------------------------------------------

def cmd_report(cfg: RunConfig, out: Path) -> Path:
    """Collect averaged curves into one directory per figure type."""

    def body(d: Path):
        stats = out / "stats"
        if not (stats / "manifest.json").is_file():
            raise ValidationError(f"no stats outputs in {stats}; run the 'stats' subcommand first")
        if not json.loads((stats / "manifest.json").read_text())["complete"]:
            raise ValidationError(f"{stats} is marked incomplete")
        stamp = _stamp(cfg)
        gains: dict = {}
        for hub, shadow in cfg.variants:
            v = variant_name(hub, shadow)
            groups = ["average"] + [f"average_S{k}" for k in cfg.subjects_of_interest]
            for g in groups:
                src = stats / v / g
                if not src.is_dir():
                    continue
                for f in sorted(src.glob("*.csv")):
                    scheme, kind = f.stem.rsplit("_", 1)
                    fig = f"{kind}_by_hub_and_shadowing" if g == "average" else f"{kind}_by_subject"
                    dst = d / fig
                    dst.mkdir(exist_ok=True)
                    label = f"{v}__{scheme}" if g == "average" else f"{v}__{g}__{scheme}"
                    save_curve(load_curve(f), dst / f"{label}.csv",
                               {**stamp, "variant": v, "group": g, "scheme": scheme})
            avg = json.loads((stats / v / "average" / "summary.json").read_text())["schemes"]
            sl = avg.get("single_link", {})
            entry = {}
            for scheme in ("opportunistic", "selection_combining"):
                if scheme in avg:
                    for p in OUTAGE_LEVELS:
                        key = f"outage_{p:g}_threshold_db"
                        a, b = avg[scheme].get(key), sl.get(key)
                        entry[f"{scheme}_gain_db_at_{p:g}"] = (None if a is None or b is None
                                                               else a - b)
            gains[v] = {"thresholds": avg, "gains_over_single_link": entry}
        _dump_json({**stamp, "format": FORMAT_TAG, "variants": gains}, d / "summary.json")

    return _with_manifest(cfg, out, "report", {"variants": [variant_name(*v) for v in cfg.variants]},
                          body)


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "stats": cmd_stats, "report": cmd_report}
