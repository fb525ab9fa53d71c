"""Greedy incremental earliest-fit scheduler with channel spatial reuse."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Iterable

from ..core import NetworkConfig, superframe_duration
from ..routing import Path, Unroutable, secondary_path, shortest_path
from ..topology import DualGraph
from .model import CompactSchedule, Direction, ScheduleElement, Stream, StreamState

NO_PATH = "no-path"
CAPACITY = "capacity"


@dataclass(frozen=True)
class Chain:
    path: Path
    reverse: bool
    copy: int


@dataclass(frozen=True)
class Rejection:
    """Why a stream could not be admitted.

    For capacity failures, ``tx``/``rx`` is the hop that found no free slot
    in ``[first_slot, period)`` given the ``blocking`` elements (committed
    plus the stream's own tentative ones).
    """

    stream: Stream
    reason: str
    path: Path = ()
    tx: int = -1
    rx: int = -1
    period: int = 0
    first_slot: int = 0
    blocking: tuple[ScheduleElement, ...] = ()


def plan_chains(stream: Stream, graph: DualGraph, config: NetworkConfig) -> list[Chain]:
    """Routes for every transmission chain of a stream, redundant copies included.

    Raises Unroutable when an endpoint pair has no strong path.
    """
    sid, params = stream.id, stream.params
    legs = []
    if params.direction in (Direction.FORWARD, Direction.BIDIRECTIONAL):
        legs.append((sid.src, sid.dst, False))
    if params.direction in (Direction.REVERSE, Direction.BIDIRECTIONAL):
        legs.append((sid.dst, sid.src, True))
    chains = []
    for a, b, rev in legs:
        primary = shortest_path(graph, a, b)
        paths = [primary] * params.redundancy
        if params.spatial:
            alt = secondary_path(graph, a, b, primary, config.dfs_depth_margin)
            if alt is not None:
                # r=2: primary + secondary; r=3: primary twice + secondary
                paths = [primary] * (params.redundancy - 1) + [alt]
        chains.extend(Chain(p, rev, i) for i, p in enumerate(paths))
    return chains


class Scheduler:
    """Incremental schedule builder; streams are admitted all-or-nothing."""

    def __init__(self, graph: DualGraph, config: NetworkConfig) -> None:
        self.graph = graph
        self.config = config
        self.elements: list[ScheduleElement] = []
        self.accepted: list[Stream] = []
        self.rejected: list[Rejection] = []
        self._index: dict[int, dict[int, list[ScheduleElement]]] = {}

    def _insert(self, e: ScheduleElement) -> None:
        self._index.setdefault(e.period, {}).setdefault(e.offset, []).append(e)

    def _remove(self, e: ScheduleElement) -> None:
        bucket = self._index[e.period][e.offset]
        bucket.remove(e)
        if not bucket:
            del self._index[e.period][e.offset]

    def is_free(self, tx: int, rx: int, slot: int, period: int) -> bool:
        weak = self.graph.weak
        for q, table in self._index.items():
            g = gcd(period, q)
            for b in range(slot % g, q, g):
                for e in table.get(b, ()):
                    if tx == e.tx or tx == e.rx or rx == e.tx or rx == e.rx:
                        return False
                    if (weak[e.tx] >> rx) & 1 or (weak[tx] >> e.rx) & 1:
                        return False
        return True

    def try_add(self, stream: Stream) -> Rejection | None:
        try:
            chains = plan_chains(stream, self.graph, self.config)
        except Unroutable:
            rej = Rejection(stream, NO_PATH)
            stream.state = StreamState.REJECTED
            self.rejected.append(rej)
            return rej
        period = stream.params.period.slots(self.config)
        tentative: list[ScheduleElement] = []
        for chain in chains:
            slot = 0
            for tx, rx in zip(chain.path, chain.path[1:]):
                lower = slot
                while slot < period and not self.is_free(tx, rx, slot, period):
                    slot += 1
                if slot >= period:
                    rej = Rejection(stream, CAPACITY, chain.path, tx, rx, period, lower,
                                    tuple(self.elements) + tuple(tentative))
                    for e in tentative:
                        self._remove(e)
                    stream.state = StreamState.REJECTED
                    self.rejected.append(rej)
                    return rej
                e = ScheduleElement(stream.id, tx, rx, slot, period, chain.reverse, chain.copy)
                tentative.append(e)
                self._insert(e)
                slot += 1
        self.elements.extend(tentative)
        stream.state = StreamState.ESTABLISHED
        self.accepted.append(stream)
        return None

    def schedule(self, schedule_id: int = 0) -> CompactSchedule:
        if self.accepted:
            tiles = superframe_duration(self.config, [s.params.period for s in self.accepted])
        else:
            tiles = self.config.superframe_tiles
        return CompactSchedule(schedule_id, tiles, self.config.slots_in_tiles(tiles), tuple(self.elements))


@dataclass
class ScheduleResult:
    schedule: CompactSchedule
    accepted: list[Stream]
    rejected: list[Rejection]
    activation: "ActivationSets" = field(repr=False)

    @property
    def used_links(self):
        return self.activation.used_links

    @property
    def conflict_links(self):
        return self.activation.conflict_links


def schedule_streams(streams: Iterable[Stream], graph: DualGraph, config: NetworkConfig,
                     schedule_id: int = 0) -> ScheduleResult:
    """Schedule ``streams`` in the given order (previously established ones first)."""
    from ..activation import build_activation_sets

    sched = Scheduler(graph, config)
    for s in streams:
        sched.try_add(s)
    compact = sched.schedule(schedule_id)
    return ScheduleResult(compact, sched.accepted, sched.rejected,
                          build_activation_sets(compact, graph, config))
