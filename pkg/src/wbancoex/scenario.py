"""WBAN topologies, relay modes, analysis sets and the two-subject motion model."""

from __future__ import annotations

import enum
import itertools
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .channel import (
    SHADOW_LEVELS,
    ChannelTrace,
    FadingSpec,
    gen_interbody,
    gen_onbody,
    resample,
)
from .errors import ParameterError, ValidationError

Link = tuple[str, str]

RELAY_MODES = ("varying", "fixed_hips", "none")
CHANNEL_SOURCES = ("synthetic", "traces")


class BodySite(str, enum.Enum):
    chest = "chest"
    left_hip = "left_hip"
    right_hip = "right_hip"
    left_ankle = "left_ankle"
    right_ankle = "right_ankle"
    left_wrist = "left_wrist"
    right_wrist = "right_wrist"
    left_upper_arm = "left_upper_arm"
    head = "head"
    back = "back"

    def __str__(self):
        return self.value


HUB_SITES = (BodySite.chest, BodySite.left_hip, BodySite.right_hip)
# remaining channel-sounder sites, used for the last sensor of the varied-relay setup
SOUNDER_SITES = (BodySite.left_ankle, BodySite.right_ankle, BodySite.left_wrist,
                 BodySite.right_wrist, BodySite.left_upper_arm, BodySite.head, BodySite.back)

# Rough standing-posture coordinates (m): x lateral (left < 0), y height, z front.
_SITE_XYZ = {
    BodySite.head: (0.0, 1.65, 0.0),
    BodySite.chest: (0.0, 1.30, 0.12),
    BodySite.back: (0.0, 1.30, -0.12),
    BodySite.left_upper_arm: (-0.22, 1.30, 0.0),
    BodySite.left_wrist: (-0.25, 0.85, 0.05),
    BodySite.right_wrist: (0.25, 0.85, 0.05),
    BodySite.left_hip: (-0.17, 0.95, 0.0),
    BodySite.right_hip: (0.17, 0.95, 0.0),
    BodySite.left_ankle: (-0.10, 0.08, 0.0),
    BodySite.right_ankle: (0.10, 0.08, 0.0),
}


def site(value) -> BodySite:
    try:
        return BodySite(str(value).strip())
    except ValueError:
        raise ParameterError(
            f"unknown body site {value!r}; expected one of {[s.value for s in BodySite]}") from None


def onbody_mean_gain_db(a, b) -> float:
    """Synthetic mean on-body path gain between two sites.

    Log-distance law (exponent 3, -45 dB at 10 cm) plus 10 dB when the link
    wraps between the front and the back of the torso.
    """
    pa, pb = np.array(_SITE_XYZ[site(a)]), np.array(_SITE_XYZ[site(b)])
    d = max(float(np.linalg.norm(pa - pb)), 0.05)
    gain = -45.0 - 30.0 * math.log10(d / 0.1)
    if pa[2] * pb[2] < 0:
        gain -= 10.0
    return gain


def node_id(network_id: str, body_site) -> str:
    return f"{network_id}.{site(body_site).value}"


def node_site(node: str) -> BodySite:
    return site(node.rsplit(".", 1)[1])


@dataclass(frozen=True)
class WbanConfig:
    network_id: str
    hub_site: BodySite
    sensor_sites: tuple[BodySite, ...]
    relay_mode: str = "none"
    tx_power_dbm: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "network_id", str(self.network_id))
        object.__setattr__(self, "hub_site", site(self.hub_site))
        object.__setattr__(self, "sensor_sites", tuple(site(s) for s in self.sensor_sites))
        if "." in self.network_id or not self.network_id:
            raise ParameterError(f"invalid network id {self.network_id!r}")
        if self.relay_mode not in RELAY_MODES:
            raise ParameterError(f"relay_mode must be one of {RELAY_MODES}, got {self.relay_mode!r}")
        if not self.sensor_sites:
            raise ParameterError("sensor_sites must be non-empty")
        if len(set(self.sensor_sites)) != len(self.sensor_sites):
            raise ParameterError("duplicate sensor site")
        if self.hub_site in self.sensor_sites:
            raise ParameterError("hub_site must not be a sensor site")
        if self.relay_mode == "fixed_hips":
            hips = {BodySite.left_hip, BodySite.right_hip}
            if self.hub_site in hips or hips & set(self.sensor_sites):
                raise ParameterError("fixed_hips mode reserves both hips for the relays")
        if self.relay_mode == "varying" and len(self.sensor_sites) != 3:
            raise ParameterError("varying relay mode needs exactly 3 sensors")

    @property
    def hub(self) -> str:
        return node_id(self.network_id, self.hub_site)

    @property
    def sensors(self) -> tuple[str, ...]:
        return tuple(node_id(self.network_id, s) for s in self.sensor_sites)

    @property
    def fixed_relays(self) -> tuple[str, ...]:
        if self.relay_mode != "fixed_hips":
            return ()
        return (node_id(self.network_id, BodySite.left_hip),
                node_id(self.network_id, BodySite.right_hip))

    @property
    def two_hop(self) -> bool:
        return self.relay_mode != "none"

    def relay_candidates(self, sensor_index: int) -> tuple[str, ...]:
        """Relay-1 and relay-2 for a given active sensor (empty in star mode)."""
        if self.relay_mode == "fixed_hips":
            return self.fixed_relays
        if self.relay_mode == "varying":
            # the two idle sensors, rotating with the slot order
            n = len(self.sensors)
            return tuple(self.sensors[(sensor_index + k) % n] for k in (1, 2))
        return ()

    @property
    def receivers(self) -> tuple[str, ...]:
        """Nodes that decode packets of this network (interference victims)."""
        if self.relay_mode == "fixed_hips":
            return (self.hub,) + self.fixed_relays
        if self.relay_mode == "varying":
            return (self.hub,) + self.sensors
        return (self.hub,)


@dataclass(frozen=True)
class MotionModel:
    corridor_length: float = 6.0
    corridor_width: float = 0.5
    walking_speed: float = 1.2
    min_separation: float = 0.5

    def __post_init__(self):
        for name in ("corridor_length", "corridor_width", "walking_speed", "min_separation"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.min_separation > self.corridor_length:
            raise ParameterError("min_separation must not exceed corridor_length")

    @property
    def pass_duration(self) -> float:
        """Time from opposite ends, through the passing, back to full separation."""
        return self.corridor_length / self.walking_speed


@dataclass(frozen=True)
class AnalysisSet:
    subject_of_interest: int
    interferer: int

    def __post_init__(self):
        if self.subject_of_interest == self.interferer:
            raise ParameterError("subject_of_interest and interferer must differ")

    @property
    def name(self) -> str:
        return f"S{self.subject_of_interest}_I{self.interferer}"


def enumerate_analysis_sets(subjects_of_interest: Sequence[int],
                            all_subjects: Sequence[int]) -> list[AnalysisSet]:
    """All (subject-of-interest, interferer) pairs except self-pairs."""
    for ids in (subjects_of_interest, all_subjects):
        if len(set(ids)) != len(ids):
            raise ParameterError("subject ids must be distinct")
    return [AnalysisSet(s, o) for s in subjects_of_interest for o in all_subjects if s != o]


def simulate_motion(model: MotionModel, duration: float, dt: float) -> np.ndarray:
    """Inter-subject distance (m) sampled every ``dt`` seconds.

    The subjects start at opposite corridor ends, walk towards each other,
    pass at the lateral separation and move apart. On reaching the ends they
    turn round, so the pattern repeats with period ``model.pass_duration``.
    """
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if duration < dt:
        raise ParameterError("duration must be >= dt")
    n = max(1, math.ceil(duration / dt - 1e-9))
    t = np.arange(n) * dt
    length = model.corridor_length
    period = model.pass_duration
    phase = np.mod(t, period)
    gap = np.abs(length - 2.0 * model.walking_speed * phase)
    floor = max(model.min_separation, model.corridor_width)
    return np.maximum(gap, floor)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated topology plus the list of links the link engine will read."""

    networks: tuple[WbanConfig, ...]
    motion: MotionModel | None
    shadowing: str
    channel_source: str
    intra_links: tuple[Link, ...]
    inter_links: tuple[Link, ...]
    meta: Mapping[str, str] = field(default_factory=dict)

    @property
    def woi(self) -> WbanConfig:
        """WBAN-of-interest (always the first network)."""
        return self.networks[0]

    @property
    def interferers(self) -> tuple[WbanConfig, ...]:
        return self.networks[1:]

    @property
    def required_links(self) -> tuple[Link, ...]:
        return self.intra_links + self.inter_links


def intra_links(cfg: WbanConfig) -> list[Link]:
    links = [(s, cfg.hub) for s in cfg.sensors]
    if cfg.relay_mode == "fixed_hips":
        links += [(s, r) for s in cfg.sensors for r in cfg.fixed_relays]
        links += [(r, cfg.hub) for r in cfg.fixed_relays]
    elif cfg.relay_mode == "varying":
        # on-body links are reciprocal; one direction per unordered pair
        links += list(itertools.combinations(cfg.sensors, 2))
    return links


def inter_links(woi: WbanConfig, interferer: WbanConfig) -> list[Link]:
    return [(tx, rx) for tx in interferer.sensors for rx in woi.receivers]


def has_link(available: Iterable[Link], link: Link) -> bool:
    avail = set(available)
    return link in avail or (link[1], link[0]) in avail


def build_scenario(configs: Sequence[WbanConfig], motion: MotionModel | None = None,
                   shadowing: str = "full", channel_source: str = "synthetic",
                   available_links: Iterable[Link] | None = None) -> ScenarioConfig:
    """Validate a set of co-located WBANs; the first one is the WBAN-of-interest.

    Interfering networks are modelled as single-link stars: only their
    sensors' transmissions are counted as interference.
    """
    configs = tuple(configs)
    if not configs:
        raise ValidationError("at least one network is required")
    ids = [c.network_id for c in configs]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise ValidationError(f"duplicate network_id: {sorted(dup)}")
    if shadowing not in SHADOW_LEVELS:
        raise ValidationError(f"shadowing must be one of {SHADOW_LEVELS}, got {shadowing!r}")
    if channel_source not in CHANNEL_SOURCES:
        raise ValidationError(f"channel_source must be one of {CHANNEL_SOURCES}")
    for c in configs[1:]:
        if c.relay_mode != "none":
            raise ValidationError(
                f"interfering network {c.network_id!r} must use relay_mode 'none'")
    woi = configs[0]
    intra = tuple(intra_links(woi))
    inter = tuple(l for c in configs[1:] for l in inter_links(woi, c))
    if channel_source == "synthetic" and configs[1:] and motion is None:
        motion = MotionModel()
    scen = ScenarioConfig(configs, motion, shadowing, channel_source, intra, inter)
    if channel_source == "traces":
        if available_links is None:
            raise ValidationError("channel_source 'traces' needs the list of available links")
        check_coverage(scen, available_links)
    return scen


def check_coverage(scen: ScenarioConfig, available: Iterable[Link]):
    avail = set(available)
    for link in scen.required_links:
        if not has_link(avail, link):
            raise ValidationError(f"missing trace for link {link[0]} -> {link[1]}")


def parse_kv(text: str) -> dict[str, str]:
    """Parse the flat ``key = value`` scenario format (``#`` starts a comment)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def parse_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def wban_from_mapping(network_id: str, m: Mapping[str, str], prefix: str = "") -> WbanConfig:
    def get(key, default=None):
        v = m.get(prefix + key, default)
        if v is None:
            raise ValidationError(f"missing key {prefix + key!r}")
        return v
    return WbanConfig(
        network_id=network_id,
        hub_site=get("hub_site"),
        sensor_sites=tuple(parse_list(get("sensor_sites"))),
        relay_mode=get("relay_mode", "none"),
        tx_power_dbm=float(get("tx_power_dbm", "0")),
    )


def seed_sequence(*parts) -> np.random.SeedSequence:
    """Stable seed from arbitrary labels (ints or strings)."""
    return np.random.SeedSequence([zlib.crc32(str(p).encode("utf-8")) for p in parts])


ONBODY_SIGMA_DB = 6.0
ONBODY_COHERENCE_S = 2.087
ONBODY_DT = 0.015
TARGET_DT = 0.12


def synthesize_traces(scen: ScenarioConfig, duration: float, seed: int, *,
                      subject: object = 0, set_name: str = "",
                      spec: FadingSpec = FadingSpec(),
                      onbody_sigma_db: float = ONBODY_SIGMA_DB,
                      onbody_coherence_s: float = ONBODY_COHERENCE_S,
                      onbody_dt: float = ONBODY_DT,
                      target_dt: float = TARGET_DT) -> dict[Link, ChannelTrace]:
    """Synthetic trace for every link the scenario needs, at ``target_dt``.

    On-body links: AR(1) dB process around a site-pair mean, generated at
    ``onbody_dt`` and block-averaged to ``target_dt``; seeded by subject and
    sites, so a subject's body channel is shared across analysis sets.
    Inter-body links: motion-driven path loss, shadowing and Jakes fading,
    generated directly at ``target_dt``.
    """
    span = (math.ceil(duration / target_dt - 1e-9) + 1) * target_dt
    traces: dict[Link, ChannelTrace] = {}
    for a, b in scen.intra_links:
        sa, sb = node_site(a), node_site(b)
        pair = sorted((sa.value, sb.value))
        tr = gen_onbody(onbody_mean_gain_db(sa, sb), onbody_sigma_db, onbody_coherence_s,
                        span + target_dt, onbody_dt,
                        seed_sequence(seed, "onbody", subject, *pair), link_id=(a, b))
        traces[(a, b)] = resample(tr, target_dt)
    if scen.inter_links:
        motion = scen.motion or MotionModel()
        dist = simulate_motion(motion, span, target_dt)
        for a, b in scen.inter_links:
            traces[(a, b)] = gen_interbody(
                dist, target_dt, spec, scen.shadowing,
                seed_sequence(seed, "interbody", set_name, node_site(a).value, node_site(b).value),
                link_id=(a, b))
    return traces
