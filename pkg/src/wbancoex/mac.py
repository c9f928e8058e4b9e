"""Intra-WBAN TDMA superframes and non-coordinated inter-WBAN cycle scheduling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ParameterError
from .scenario import WbanConfig

HOPS = ("first", "second")


@dataclass(frozen=True)
class SlotAssignment:
    network_id: str
    node_id: str
    slot_start: float
    slot_len: float
    hop: str = "first"

    @property
    def slot_end(self) -> float:
        return self.slot_start + self.slot_len

    def shifted(self, dt: float) -> "SlotAssignment":
        return SlotAssignment(self.network_id, self.node_id, self.slot_start + dt,
                              self.slot_len, self.hop)


def build_superframe(config: WbanConfig, slot_len: float) -> list[SlotAssignment]:
    """One slot per sensor in fixed order, times relative to the superframe start.

    In a two-hop relay mode each sensor slot is followed by a forwarding
    sub-slot of the same length. The forwarding sub-slot carries the sensor's
    node id; which relay actually transmits is decided per packet. The beacon
    is treated as zero-length.
    """
    if not slot_len > 0:
        raise ParameterError(f"slot_len must be positive, got {slot_len}")
    if not config.sensors:
        raise ParameterError("superframe needs at least one sensor")
    slots = []
    t = 0.0
    for sensor in config.sensors:
        slots.append(SlotAssignment(config.network_id, sensor, t, slot_len, "first"))
        t += slot_len
        if config.two_hop:
            slots.append(SlotAssignment(config.network_id, sensor, t, slot_len, "second"))
            t += slot_len
    return slots


def superframe_length(slots: Sequence[SlotAssignment]) -> float:
    return max(s.slot_end for s in slots) if slots else 0.0


@dataclass(frozen=True)
class Cycle:
    network_id: str
    cycle_start: float
    offset: float
    slots: tuple[SlotAssignment, ...]


@dataclass(frozen=True, eq=False)
class SuperframeSchedule:
    cycles: tuple[Cycle, ...]
    td: float
    t_idle: float
    duration: float
    network_ids: tuple[str, ...] = field(default=())

    @property
    def n_networks(self) -> int:
        return len(self.network_ids)

    @property
    def period(self) -> float:
        return self.td + self.t_idle

    def cycles_of(self, network_id: str) -> list[Cycle]:
        return [c for c in self.cycles if c.network_id == network_id]

    @cached_property
    def _index(self):
        # per network: sorted slot starts/ends plus node and hop labels
        idx = {}
        for nid in self.network_ids:
            slots = [s for c in self.cycles if c.network_id == nid for s in c.slots]
            slots.sort(key=lambda s: s.slot_start)
            idx[nid] = (
                np.array([s.slot_start for s in slots], dtype=float),
                np.array([s.slot_end for s in slots], dtype=float),
                [s.node_id for s in slots],
                [s.hop for s in slots],
            )
        return idx

    def active_slot_index(self, network_id: str, times) -> np.ndarray:
        """Index into the network's sorted slot list active at each time, or -1."""
        starts, ends, _, _ = self._index[network_id]
        t = np.asarray(times, dtype=float)
        i = np.searchsorted(starts, t, side="right") - 1
        ok = (i >= 0)
        ok[ok] &= t[ok] < ends[i[ok]]
        return np.where(ok, i, -1)

    def slot_nodes(self, network_id: str) -> list[str]:
        return self._index[network_id][2]

    def slot_hops(self, network_id: str) -> list[str]:
        return self._index[network_id][3]


def schedule_cycles(nc: int, td: float, duration: float, seed,
                    superframes: Mapping[str, Sequence[SlotAssignment]] | None = None
                    ) -> SuperframeSchedule:
    """Random-offset inter-WBAN TDMA over ``[0, duration]``.

    Time is split into windows of ``td + t_idle`` with ``t_idle = (nc-1)*td``.
    In every window each network draws its cycle start uniformly in
    ``[window_start, window_start + t_idle]``, so a cycle never spills into the
    next window. Networks draw from independent streams. Cycles that would end
    after ``duration`` are dropped.

    ``superframes`` maps network id to relative slot lists (from
    :func:`build_superframe`); without it, ``nc`` networks ``"0".."nc-1"`` with
    empty slot lists are scheduled.
    """
    if nc < 1:
        raise ParameterError("nc must be >= 1")
    if not td > 0:
        raise ParameterError("td must be positive")
    if duration < td:
        raise ParameterError(f"duration {duration} shorter than td {td}")
    if superframes is None:
        superframes = {str(i): () for i in range(nc)}
    if len(superframes) != nc:
        raise ParameterError(f"got {len(superframes)} superframes for nc={nc}")
    for nid, slots in superframes.items():
        if superframe_length(slots) > td * (1 + 1e-12):
            raise ParameterError(f"superframe of network {nid!r} longer than td")
    t_idle = (nc - 1) * td
    period = td + t_idle
    n_windows = math.floor((duration - td) / period + 1e-9) + 1
    streams = np.random.SeedSequence(seed).spawn(nc)
    cycles = []
    for (nid, slots), ss in zip(superframes.items(), streams):
        rng = np.random.default_rng(ss)
        offsets = rng.uniform(0.0, t_idle, size=n_windows) if t_idle > 0 else np.zeros(n_windows)
        for k, off in enumerate(offsets.tolist()):
            start = k * period + off
            if start + td > duration * (1 + 1e-12):
                continue
            cycles.append(Cycle(nid, start, off, tuple(s.shifted(start) for s in slots)))
    cycles.sort(key=lambda c: (c.cycle_start, c.network_id))
    return SuperframeSchedule(tuple(cycles), td, t_idle, duration, tuple(superframes))


def transmitting_at(schedule: SuperframeSchedule, t: float) -> set[tuple[str, str, str]]:
    """All ``(network_id, node_id, hop)`` whose slot span ``[start, end)`` holds ``t``."""
    out = set()
    for nid in schedule.network_ids:
        i = int(schedule.active_slot_index(nid, [t])[0])
        if i >= 0:
            out.add((nid, schedule.slot_nodes(nid)[i], schedule.slot_hops(nid)[i]))
    return out


SCHEDULE_HEADER = "network_id,node_id,hop,slot_start_s,slot_len_s"


def export_schedule(schedule: SuperframeSchedule, path, meta: Mapping[str, object] | None = None):
    lines = [f"# {k}={v}\n" for k, v in (meta or {}).items()]
    lines.append(f"# td={schedule.td!r}\n# t_idle={schedule.t_idle!r}\n")
    lines.append(SCHEDULE_HEADER + "\n")
    for c in schedule.cycles:
        for s in c.slots:
            lines.append(f"{s.network_id},{s.node_id},{s.hop},{s.slot_start!r},{s.slot_len!r}\n")
    Path(path).write_text("".join(lines), encoding="utf-8", newline="\n")
