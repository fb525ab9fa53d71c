"""Per-node schedule expansion and the brute-force validity oracle."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from ..topology import DualGraph
from .model import CompactSchedule, ScheduleElement


class MalformedSchedule(ValueError):
    pass


class ActionKind(Enum):
    SLEEP = "sleep"
    TRANSMIT_FROM_SESSION = "tx-session"
    RECEIVE_TO_BUFFER = "rx-buffer"
    FORWARD_BUFFERED = "tx-buffer"
    RECEIVE_TO_SESSION = "rx-session"

    @property
    def transmits(self) -> bool:
        return self in (ActionKind.TRANSMIT_FROM_SESSION, ActionKind.FORWARD_BUFFERED)

    @property
    def receives(self) -> bool:
        return self in (ActionKind.RECEIVE_TO_BUFFER, ActionKind.RECEIVE_TO_SESSION)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    element: ScheduleElement | None = None
    buffer: int | None = None


SLEEP = Action(ActionKind.SLEEP)


@dataclass
class ExpandedSchedule:
    node: int
    schedule_id: int
    superframe_slots: int
    actions: list[Action]
    buffers: dict[tuple, int] = field(default_factory=dict)

    def active(self) -> dict[int, Action]:
        return {i: a for i, a in enumerate(self.actions) if a.kind is not ActionKind.SLEEP}

    def count(self, kind: ActionKind) -> int:
        return sum(1 for a in self.actions if a.kind is kind)


def expand(compact: CompactSchedule, me: int) -> ExpandedSchedule:
    """Turn the compact schedule into ``me``'s per-slot action table."""
    n = compact.superframe_slots
    actions = [SLEEP] * n
    buffers: dict[tuple, int] = {}
    for e in compact.elements:
        if me not in (e.tx, e.rx):
            continue
        if e.period <= 0 or n % e.period or not 0 <= e.offset < e.period:
            raise MalformedSchedule(f"element {e} does not tile a superframe of {n} slots")
        buf = None
        if e.tx == me:
            if me == e.source:
                kind = ActionKind.TRANSMIT_FROM_SESSION
            else:
                kind = ActionKind.FORWARD_BUFFERED
                buf = buffers.setdefault(e.chain, len(buffers))
        elif me == e.sink:
            kind = ActionKind.RECEIVE_TO_SESSION
        else:
            kind = ActionKind.RECEIVE_TO_BUFFER
            buf = buffers.setdefault(e.chain, len(buffers))
        act = Action(kind, e, buf)
        for slot in range(e.offset, n, e.period):
            if actions[slot] is not SLEEP:
                raise MalformedSchedule(f"node {me} has two actions in slot {slot}")
            actions[slot] = act
    return ExpandedSchedule(me, compact.schedule_id, n, actions, buffers)


def find_violations(compact: CompactSchedule, graph: DualGraph) -> list[str]:
    """Exhaustive slot-by-slot check of a compact schedule against ``graph``.

    Deliberately does not use the (offset, period) algebra: every element is
    unrolled over the whole superframe and every same-slot pair is compared.
    """
    problems = []
    n = compact.superframe_slots
    occupancy: dict[int, list[ScheduleElement]] = defaultdict(list)
    chains: dict[tuple, list[ScheduleElement]] = defaultdict(list)
    for e in compact.elements:
        if e.period <= 0 or n % e.period or not 0 <= e.offset < e.period:
            problems.append(f"{e}: offset/period do not tile {n} slots")
            continue
        if not (graph.has_node(e.tx) and graph.has_node(e.rx) and graph.has_strong(e.tx, e.rx)):
            problems.append(f"{e}: link {e.tx}-{e.rx} is not strong")
        slot = e.offset
        while slot < n:
            occupancy[slot].append(e)
            slot += e.period
        chains[e.chain].append(e)
    for slot in sorted(occupancy):
        here = occupancy[slot]
        for i in range(len(here)):
            for j in range(i + 1, len(here)):
                a, b = here[i], here[j]
                if {a.tx, a.rx} & {b.tx, b.rx}:
                    problems.append(f"slot {slot}: {a} and {b} share a node")
                elif graph.has_weak(a.tx, b.rx) or graph.has_weak(b.tx, a.rx):
                    problems.append(f"slot {slot}: {a} and {b} interfere")
    for key, hops in chains.items():
        hops.sort(key=lambda e: e.offset)
        first, last = hops[0], hops[-1]
        if first.tx != first.source or last.rx != last.sink:
            problems.append(f"chain {key} does not connect its endpoints")
        for a, b in zip(hops, hops[1:]):
            if a.rx != b.tx or a.offset >= b.offset:
                problems.append(f"chain {key}: {a} does not precede {b}")
    return problems


def validate(compact: CompactSchedule, graph: DualGraph) -> bool:
    return not find_violations(compact, graph)
