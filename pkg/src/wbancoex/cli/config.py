"""Experiment configuration: sectioned ``key = value`` text (see docs/config.md)."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..channel import SHADOW_LEVELS, FadingSpec
from ..errors import ConfigError, WbanError
from ..link import DECISION_MODES, NOISE_DBM
from ..scenario import (
    CHANNEL_SOURCES,
    AnalysisSet,
    MotionModel,
    WbanConfig,
    enumerate_analysis_sets,
    parse_list,
    site,
)
from ..stats.fitting import FAMILIES

FORMAT_TAG = "wbancoex-run/1"

REQUIRED = {
    "run": ("duration_s",),
    "wban": ("hub_site", "sensor_sites", "relay_mode"),
}


@dataclass(frozen=True)
class TracesConfig:
    directory: Path | None = None
    split_index: int | None = None
    segment: str = "tail"
    overlay_missing: bool = False


@dataclass(frozen=True)
class StatsConfig:
    doppler_hz: float = 1.0
    thresholds_db: tuple[float, ...] = tuple(np.round(np.arange(-40.0, 60.0 + 1e-9, 0.5), 6))
    families: tuple[str, ...] = FAMILIES
    independence_bins: int = 20


@dataclass(frozen=True)
class RunConfig:
    path: str
    sha256: str
    seed: int
    duration_s: float
    slot_s: float
    resample_dt_s: float
    decision_block: str
    noise_dbm: float
    subjects_of_interest: tuple[int, ...]
    subjects: tuple[int, ...]
    hub_sites: tuple[str, ...]
    shadowing: tuple[str, ...]
    channel_source: str
    workers: int
    wban: WbanConfig
    interferer: WbanConfig
    fading: FadingSpec
    onbody_sigma_db: float
    onbody_coherence_s: float
    onbody_dt_s: float
    motion: MotionModel
    traces: TracesConfig = field(default_factory=TracesConfig)
    stats: StatsConfig = field(default_factory=StatsConfig)

    @property
    def analysis_sets(self) -> list[AnalysisSet]:
        return enumerate_analysis_sets(self.subjects_of_interest, self.subjects)

    @property
    def variants(self) -> list[tuple[str, str]]:
        """(hub_site, shadowing) combinations, in a fixed order."""
        return [(h, s) for h in self.hub_sites for s in self.shadowing]

    def header(self) -> dict[str, object]:
        return {"format": FORMAT_TAG, "seed": self.seed, "config_sha256": self.sha256}


def variant_name(hub_site: str, shadowing: str) -> str:
    return f"hub-{hub_site}_shadow-{shadowing}"


def with_hub(cfg: WbanConfig, hub_site) -> WbanConfig:
    """Move the hub; a sensor already at the new site takes the old hub site."""
    new = site(hub_site)
    sensors = tuple(cfg.hub_site if s == new else s for s in cfg.sensor_sites)
    return replace(cfg, hub_site=new, sensor_sites=sensors)


def _get(cp, section, key, default=None):
    if cp.has_option(section, key):
        value = cp.get(section, key).strip()
        if value != "":
            return value
    if default is None:
        raise ConfigError(f"missing required key '{key}' in section [{section}]")
    return default


def _num(cp, section, key, default=None, kind=float):
    raw = _get(cp, section, key, None if default is None else str(default))
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _ints(raw, where):
    try:
        return tuple(int(v) for v in parse_list(raw))
    except ValueError:
        raise ConfigError(f"{where}: expected a comma-separated list of integers") from None


def _choice(value, allowed, where):
    if value not in allowed:
        raise ConfigError(f"{where}: {value!r} is not one of {list(allowed)}")
    return value


def load_config(path, seed: int | None = None, workers: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(raw.decode("utf-8"), source=str(path))
    except (configparser.Error, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    for section, keys in REQUIRED.items():
        for key in keys:
            _get(cp, section, key)
    for sec in ("run", "wban", "interferer", "channel", "motion", "traces", "stats"):
        if not cp.has_section(sec):
            cp.add_section(sec)
    try:
        return _build(cp, path, hashlib.sha256(raw).hexdigest(), seed, workers)
    except WbanError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def _build(cp, path, sha, seed_override, workers_override) -> RunConfig:
    seed = seed_override if seed_override is not None else _num(cp, "run", "seed", 1, int)
    wban = WbanConfig(
        network_id="S0",
        hub_site=_get(cp, "wban", "hub_site"),
        sensor_sites=tuple(parse_list(_get(cp, "wban", "sensor_sites"))),
        relay_mode=_get(cp, "wban", "relay_mode"),
        tx_power_dbm=_num(cp, "wban", "tx_power_dbm", 0.0),
    )
    interferer = WbanConfig(
        network_id="S1",
        hub_site=_get(cp, "interferer", "hub_site", wban.hub_site.value),
        sensor_sites=tuple(parse_list(_get(cp, "interferer", "sensor_sites",
                                           ",".join(s.value for s in wban.sensor_sites)))),
        relay_mode="none",
        tx_power_dbm=_num(cp, "interferer", "tx_power_dbm", 0.0),
    )
    hub_sites = tuple(site(h).value for h in parse_list(_get(cp, "run", "hub_sites", wban.hub_site.value)))
    shadowing = tuple(_choice(s, SHADOW_LEVELS, "[run] shadowing")
                      for s in parse_list(_get(cp, "run", "shadowing", "full")))
    if not hub_sites or not shadowing:
        raise ConfigError("[run] hub_sites and shadowing must be non-empty")
    for h in hub_sites:
        with_hub(wban, h)  # validates the topology for every swept hub site
    fading = FadingSpec(
        doppler_hz=_num(cp, "channel", "doppler_hz", 2.0),
        path_loss_exponent=_num(cp, "channel", "path_loss_exponent", 2.0),
        shadow_offset_db=_num(cp, "channel", "shadow_offset_db", -40.0),
        reference_gain_db=_num(cp, "channel", "reference_gain_db", -40.0),
    )
    motion = MotionModel(
        corridor_length=_num(cp, "motion", "corridor_length", 6.0),
        corridor_width=_num(cp, "motion", "corridor_width", 0.5),
        walking_speed=_num(cp, "motion", "walking_speed", 1.2),
        min_separation=_num(cp, "motion", "min_separation", 0.5),
    )
    tdir = _get(cp, "traces", "dir", "")
    traces = TracesConfig(
        directory=(path.parent / tdir) if tdir else None,
        split_index=(_num(cp, "traces", "split_index", kind=int)
                     if _get(cp, "traces", "split_index", "") else None),
        segment=_choice(_get(cp, "traces", "segment", "tail"), ("head", "tail"), "[traces] segment"),
        overlay_missing=_get(cp, "traces", "overlay_missing", "false").lower() in ("1", "true", "yes"),
    )
    lo = _num(cp, "stats", "threshold_min_db", -40.0)
    hi = _num(cp, "stats", "threshold_max_db", 60.0)
    step = _num(cp, "stats", "threshold_step_db", 0.5)
    if not (hi > lo and step > 0):
        raise ConfigError("[stats] threshold grid needs threshold_max_db > threshold_min_db and step > 0")
    families = tuple(parse_list(_get(cp, "stats", "families", ",".join(FAMILIES))))
    for f in families:
        _choice(f, FAMILIES, "[stats] families")
    stats = StatsConfig(
        doppler_hz=_num(cp, "stats", "doppler_hz", 1.0),
        thresholds_db=tuple(np.round(np.arange(lo, hi + step * 1e-6, step), 6).tolist()),
        families=families,
        independence_bins=_num(cp, "stats", "independence_bins", 20, int),
    )
    source = _choice(_get(cp, "run", "channel_source", "synthetic"), CHANNEL_SOURCES,
                     "[run] channel_source")
    if source == "traces" and traces.directory is None:
        raise ConfigError("missing required key 'dir' in section [traces] (channel_source = traces)")
    cfg = RunConfig(
        path=str(path),
        sha256=sha,
        seed=int(seed),
        duration_s=_num(cp, "run", "duration_s"),
        slot_s=_num(cp, "run", "slot_s", 0.01),
        resample_dt_s=_num(cp, "run", "resample_dt_s", 0.12),
        decision_block=_choice(_get(cp, "run", "decision_block", "start_of_superframe"),
                               DECISION_MODES, "[run] decision_block"),
        noise_dbm=_num(cp, "run", "noise_dbm", NOISE_DBM),
        subjects_of_interest=_ints(_get(cp, "run", "subjects_of_interest", "1, 2"),
                                   "[run] subjects_of_interest"),
        subjects=_ints(_get(cp, "run", "subjects", "1, 2, 3, 4, 5, 6"), "[run] subjects"),
        hub_sites=hub_sites,
        shadowing=shadowing,
        channel_source=source,
        workers=workers_override if workers_override is not None else _num(cp, "run", "workers", 1, int),
        wban=wban,
        interferer=interferer,
        fading=fading,
        onbody_sigma_db=_num(cp, "channel", "onbody_sigma_db", 6.0),
        onbody_coherence_s=_num(cp, "channel", "onbody_coherence_s", 2.087),
        onbody_dt_s=_num(cp, "channel", "onbody_dt_s", 0.015),
        motion=motion,
        traces=traces,
        stats=stats,
    )
    if cfg.duration_s <= 0 or cfg.slot_s <= 0 or cfg.resample_dt_s <= 0:
        raise ConfigError("[run] duration_s, slot_s and resample_dt_s must be positive")
    if not cfg.analysis_sets:
        raise ConfigError("[run] subjects produce no analysis set")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg
