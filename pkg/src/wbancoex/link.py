"""Per-packet SINR, opportunistic relay selection and the experiment engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .channel import ChannelTrace, read_commented_csv
from .errors import TraceParseError, ValidationError
from .mac import SuperframeSchedule
from .scenario import Link, ScenarioConfig

NOISE_DBM = -95.0
PATHS = ("direct", "relay1", "relay2")
SCHEMES = ("single_link", "opportunistic", "selection_combining")
DECISION_MODES = ("start_of_superframe", "same")


def db_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def mw_to_db(x):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(x, dtype=float))


def compute_sinr(signal_dbm: float, interferer_powers_dbm: Sequence[float] = (),
                 noise_dbm: float = NOISE_DBM) -> float:
    """SINR in dB: signal / (noise + sum of interferers), all in linear mW."""
    interference = float(np.sum(db_to_mw(list(interferer_powers_dbm)))) if len(interferer_powers_dbm) else 0.0
    return 10.0 * math.log10(10.0 ** (signal_dbm / 10.0) / (10.0 ** (noise_dbm / 10.0) + interference))


def path_metric(nu_first_hop_db, nu_second_hop_db):
    """Decode-and-forward path quality: the weaker of the two hops."""
    return np.minimum(nu_first_hop_db, nu_second_hop_db)


@dataclass(frozen=True)
class PathMetrics:
    nu_direct_db: float
    nu_relay1_db: float
    nu_relay2_db: float

    @classmethod
    def from_hops(cls, direct, relay1_hops, relay2_hops) -> "PathMetrics":
        return cls(float(direct), float(path_metric(*relay1_hops)), float(path_metric(*relay2_hops)))


def argmax_path(direct, relay1, relay2) -> np.ndarray:
    """Index into PATHS of the best path; ties go to direct, then relay1."""
    return np.argmax(np.stack(np.broadcast_arrays(direct, relay1, relay2)), axis=0)


def select_path_or(metrics: PathMetrics) -> str:
    return PATHS[int(argmax_path(metrics.nu_direct_db, metrics.nu_relay1_db, metrics.nu_relay2_db))]


def select_path_sc(realized_sinrs: Sequence[float]) -> str:
    direct, r1, r2 = realized_sinrs
    return PATHS[int(argmax_path(direct, r1, r2))]


@dataclass(frozen=True)
class PacketRecord:
    t: float
    tx: str
    rx: str
    signal_power_dbm: float
    interference_power_dbm: float
    noise_power_dbm: float
    sinr_db: float
    chosen_path: str


@dataclass(frozen=True, eq=False)
class SinrSeries:
    scheme: str
    dt_packet: float
    values: np.ndarray
    times: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise ValidationError("series values must be 1-D")
        if not np.all(np.isfinite(v)):
            raise ValidationError("series values must be finite")
        if not self.dt_packet > 0:
            raise ValidationError("dt_packet must be positive")
        object.__setattr__(self, "values", v)
        if self.times is not None:
            object.__setattr__(self, "times", np.asarray(self.times, dtype=float))

    def __len__(self):
        return self.values.size

    @property
    def linear(self) -> np.ndarray:
        return db_to_mw(self.values)


@dataclass(frozen=True, eq=False)
class PacketLog:
    """Column-oriented packet records.

    For a relayed packet the row describes its bottleneck hop, so
    ``sinr_db`` always follows from the three powers on that row.
    """

    t: np.ndarray
    tx: np.ndarray
    rx: np.ndarray
    path: np.ndarray
    signal_dbm: np.ndarray
    interf_dbm: np.ndarray
    sinr_db: np.ndarray
    n_tx: np.ndarray
    noise_dbm: float = NOISE_DBM

    def __len__(self):
        return self.t.size

    def records(self) -> Iterator[PacketRecord]:
        for i in range(len(self)):
            yield PacketRecord(float(self.t[i]), str(self.tx[i]), str(self.rx[i]),
                               float(self.signal_dbm[i]), float(self.interf_dbm[i]),
                               self.noise_dbm, float(self.sinr_db[i]), str(self.path[i]))


@dataclass(eq=False)
class ExperimentResult:
    series: dict[str, SinrSeries]
    packets: dict[str, PacketLog]
    seed: int | None = None
    meta: dict = field(default_factory=dict)


class _Channels:
    """Block-fading gain and interference lookups over a trace set."""

    def __init__(self, scenario: ScenarioConfig, traces: Mapping[Link, ChannelTrace],
                 schedule: SuperframeSchedule):
        self.scenario = scenario
        self.traces = dict(traces)
        self.schedule = schedule
        dts = {round(tr.dt, 12) for tr in self.traces.values()}
        if len(dts) > 1:
            raise ValidationError(f"traces must share one dt, got {sorted(dts)}")
        for link in scenario.required_links:
            self.trace(link)

    def trace(self, link: Link) -> ChannelTrace:
        tr = self.traces.get(link)
        if tr is None:
            tr = self.traces.get((link[1], link[0]))
        if tr is None:
            raise ValidationError(f"missing trace for link {link[0]} -> {link[1]}")
        return tr

    def gain_db(self, link: Link, t) -> np.ndarray:
        tr = self.trace(link)
        idx = tr.index_at(t)
        bad = (idx < 0) | (idx >= len(tr))
        if np.any(bad):
            t_bad = float(np.asarray(t)[np.argmax(bad)])
            raise ValidationError(
                f"trace for link {link[0]} -> {link[1]} does not cover t={t_bad!r} s "
                f"(support [{tr.t0!r}, {tr.t_end!r}))")
        return tr.samples[idx]

    def interference_mw(self, rx: str, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        total = np.zeros(t.shape)
        for net in self.scenario.interferers:
            active = self.schedule.active_slot_index(net.network_id, t)
            nodes = np.array(self.schedule.slot_nodes(net.network_id) + [""], dtype=object)
            tx_of = nodes[active]  # index -1 maps to the "" sentinel
            for tx in net.sensors:
                mask = tx_of == tx
                if np.any(mask):
                    total[mask] += db_to_mw(net.tx_power_dbm + self.gain_db((tx, rx), t[mask]))
        return total

    def hop(self, tx: str, rx: str, t, tx_power_dbm: float, noise_mw: float):
        """Signal (mW), interference (mW) and SINR (dB) of one hop at times ``t``."""
        sig = db_to_mw(tx_power_dbm + self.gain_db((tx, rx), t))
        intf = self.interference_mw(rx, t)
        return sig, intf, mw_to_db(sig / (noise_mw + intf))


def _woi_packets(scenario: ScenarioConfig, schedule: SuperframeSchedule):
    woi = scenario.woi
    rows = []  # (sensor index, t_decision, t_first_hop, t_second_hop)
    order = {s: i for i, s in enumerate(woi.sensors)}
    for cyc in schedule.cycles_of(woi.network_id):
        second = {s.node_id: s for s in cyc.slots if s.hop == "second"}
        for s in cyc.slots:
            if s.hop != "first":
                continue
            t1 = s.slot_start + s.slot_len / 2
            fwd = second.get(s.node_id)
            t2 = fwd.slot_start + fwd.slot_len / 2 if fwd is not None else t1
            rows.append((order[s.node_id], cyc.cycle_start, t1, t2))
    if not rows:
        raise ValidationError("schedule holds no packets of the WBAN-of-interest")
    a = np.array(rows, dtype=float)
    return a[:, 0].astype(int), a[:, 1], a[:, 2], a[:, 3]


def run_experiment(scenario: ScenarioConfig, traces: Mapping[Link, ChannelTrace],
                   schedule: SuperframeSchedule, seed: int | None = None,
                   decision_block: str = "start_of_superframe",
                   noise_dbm: float = NOISE_DBM) -> ExperimentResult:
    """Simulate every packet of the WBAN-of-interest under all applicable schemes.

    Path metrics are taken at the superframe start (``decision_block=
    "start_of_superframe"``) or at the packet's own transmission instants
    (``"same"``). Realised SINRs use the trace block holding each hop's slot
    midpoint and the interferers transmitting at that instant. The run is
    fully determined by its inputs; ``seed`` is only recorded.
    """
    if decision_block not in DECISION_MODES:
        raise ValidationError(f"decision_block must be one of {DECISION_MODES}")
    ch = _Channels(scenario, traces, schedule)
    woi = scenario.woi
    noise_mw = float(db_to_mw(noise_dbm))
    p_tx = woi.tx_power_dbm
    sensor_idx, t_dec, t1, t2 = _woi_packets(scenario, schedule)
    n = sensor_idx.size
    n_sensors = len(woi.sensors)
    dt_packet = schedule.period / n_sensors

    # per-packet arrays: [direct, relay1 hop1, relay1 hop2, relay2 hop1, relay2 hop2]
    sig = np.zeros((5, n))
    intf = np.zeros((5, n))
    nu = np.full((5, n), -np.inf)
    metric = np.full((3, n), -np.inf)
    txs = np.empty((5, n), dtype=object)
    rxs = np.empty((5, n), dtype=object)
    same = decision_block == "same"

    for k, sensor in enumerate(woi.sensors):
        sel = sensor_idx == k
        if not np.any(sel):
            continue
        ta, tb, td_ = t1[sel], t2[sel], t_dec[sel]
        hops = [(sensor, woi.hub, ta, ta if same else td_)]
        for r in woi.relay_candidates(k):
            hops.append((sensor, r, ta, ta if same else td_))
            hops.append((r, woi.hub, tb, tb if same else td_))
        dec = []
        for j, (a, b, t_real, t_metric) in enumerate(hops):
            s_, i_, nu_ = ch.hop(a, b, t_real, p_tx, noise_mw)
            sig[j, sel], intf[j, sel], nu[j, sel] = s_, i_, nu_
            txs[j, sel], rxs[j, sel] = a, b
            dec.append(nu_ if same else ch.hop(a, b, t_metric, p_tx, noise_mw)[2])
        metric[0, sel] = dec[0]
        if woi.two_hop:
            metric[1, sel] = path_metric(dec[1], dec[2])
            metric[2, sel] = path_metric(dec[3], dec[4])

    idx = np.arange(n)
    series = {}
    packets = {}

    def log_for(choice, n_tx):
        # bottleneck hop row per packet
        row = np.where(choice == 0, 0, np.where(choice == 1, 1, 3))
        second = (choice > 0) & (nu[row + 1, idx] < nu[row, idx])
        row = np.where(second, row + 1, row)
        sinr = nu[row, idx]
        return PacketLog(t1.copy(), txs[row, idx].astype(str), rxs[row, idx].astype(str),
                         np.array(PATHS, dtype=object)[choice].astype(str),
                         mw_to_db(sig[row, idx]), mw_to_db(intf[row, idx]), sinr,
                         n_tx, noise_dbm)

    direct_choice = np.zeros(n, dtype=int)
    packets["single_link"] = log_for(direct_choice, np.ones(n, dtype=int))
    series["single_link"] = SinrSeries("single_link", dt_packet, nu[0].copy(), t1.copy())

    if woi.two_hop:
        realized = np.stack([nu[0], path_metric(nu[1], nu[2]), path_metric(nu[3], nu[4])])
        or_choice = argmax_path(metric[0], metric[1], metric[2])
        packets["opportunistic"] = log_for(or_choice, np.where(or_choice == 0, 1, 2))
        series["opportunistic"] = SinrSeries("opportunistic", dt_packet,
                                             realized[or_choice, idx], t1.copy())
        sc_choice = argmax_path(realized[0], realized[1], realized[2])
        packets["selection_combining"] = log_for(sc_choice, np.full(n, 3))
        series["selection_combining"] = SinrSeries("selection_combining", dt_packet,
                                                   realized[sc_choice, idx], t1.copy())

    return ExperimentResult(series, packets, seed, {"decision_block": decision_block})


# --- file formats -------------------------------------------------------------

SERIES_HEADER = "t_s,sinr_db"
PACKET_HEADER = "t_s,tx,rx,path,signal_dbm,interf_dbm,sinr_db"


def _meta_lines(meta):
    return "".join(f"# {k}={v}\n" for k, v in (meta or {}).items())


def save_series(series: SinrSeries, path, meta: Mapping[str, object] | None = None):
    head = {"scheme": series.scheme, "dt_packet": repr(series.dt_packet)}
    head.update(meta or {})
    times = series.times if series.times is not None else np.arange(len(series)) * series.dt_packet
    body = "".join(f"{t!r},{v!r}\n" for t, v in zip(times.tolist(), series.values.tolist()))
    Path(path).write_text(_meta_lines(head) + SERIES_HEADER + "\n" + body,
                          encoding="utf-8", newline="\n")


def load_series(path) -> SinrSeries:
    meta, rows = read_commented_csv(path, SERIES_HEADER)
    if not rows:
        raise TraceParseError("series file has no packets", path)
    for key in ("scheme", "dt_packet"):
        if key not in meta:
            raise TraceParseError(f"missing '# {key}=' metadata", path)
    t = np.empty(len(rows))
    v = np.empty(len(rows))
    for i, (lineno, cols) in enumerate(rows):
        if len(cols) != 2:
            raise TraceParseError(f"expected 2 columns, got {len(cols)}", path, lineno)
        try:
            t[i], v[i] = float(cols[0]), float(cols[1])
        except ValueError as exc:
            raise TraceParseError(str(exc), path, lineno) from None
        if not math.isfinite(v[i]):
            raise TraceParseError("non-finite SINR", path, lineno)
    return SinrSeries(meta["scheme"], float(meta["dt_packet"]), v, t)


def save_packet_log(log: PacketLog, path, meta: Mapping[str, object] | None = None):
    cols = zip(log.t.tolist(), log.tx.tolist(), log.rx.tolist(), log.path.tolist(),
               log.signal_dbm.tolist(), log.interf_dbm.tolist(), log.sinr_db.tolist())
    body = "".join(f"{t!r},{a},{b},{p},{s!r},{i!r},{v!r}\n" for t, a, b, p, s, i, v in cols)
    head = {"noise_dbm": repr(log.noise_dbm)}
    head.update(meta or {})
    Path(path).write_text(_meta_lines(head) + PACKET_HEADER + "\n" + body,
                          encoding="utf-8", newline="\n")


def load_packet_log(path) -> PacketLog:
    meta, rows = read_commented_csv(path, PACKET_HEADER)
    n = len(rows)
    t = np.empty(n)
    sig = np.empty(n)
    itf = np.empty(n)
    sinr = np.empty(n)
    tx, rx, pth = [], [], []
    for i, (lineno, cols) in enumerate(rows):
        if len(cols) != 7:
            raise TraceParseError(f"expected 7 columns, got {len(cols)}", path, lineno)
        try:
            t[i], sig[i], itf[i], sinr[i] = float(cols[0]), float(cols[4]), float(cols[5]), float(cols[6])
        except ValueError as exc:
            raise TraceParseError(str(exc), path, lineno) from None
        tx.append(cols[1])
        rx.append(cols[2])
        pth.append(cols[3])
    n_tx = np.array([1 if p == "direct" else 2 for p in pth], dtype=int)
    return PacketLog(t, np.array(tx), np.array(rx), np.array(pth), sig, itf, sinr, n_tx,
                     float(meta.get("noise_dbm", NOISE_DBM)))
