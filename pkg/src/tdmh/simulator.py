"""Deterministic tile-by-tile simulation of a TDMH network.

Time advances one tile at a time.  Downlink tiles flood a frame from the
master to every node it can reach (sync, schedule chunks, information
elements); uplink tiles carry round-robin topology/SME broadcasts heard only
by direct neighbors; data slots execute each node's expanded schedule.
Randomness (link losses) comes from a single seeded generator and every
iteration order is sorted, so a scenario and seed fully determine the run.
"""
from __future__ import annotations

import hashlib
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

from .activation import ActivationSets, should_reschedule
from .core import MASTER, NetworkConfig, TileKind
from .scheduler import (Action, ActionKind, CompactSchedule, ExpandedSchedule, ScheduleElement, Stream,
                        StreamId, StreamParams, StreamState, expand, find_violations, schedule_streams)
from .scheduler.model import Direction
from .topology import (DualGraph, LinkDelta, MasterTopology, NodeTopology, SmeKind,
                       StreamManagementElement, UplinkFrame, canonical)

logger = logging.getLogger(__name__)

DOWNLINK_HEADER = 18
IE_SIZE = 4
IES_PER_DOWNLINK = 4
ELEMENT_SIZE = 12


class SimulationError(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class LinkSpec:
    u: int
    v: int
    rssi: int = -60
    per: float = 0.0


@dataclass(frozen=True)
class ScenarioEvent:
    time_ms: float
    kind: str
    args: tuple = ()


EVENT_KINDS = ("node_up", "node_down", "link_set", "link_down", "open_stream", "close_stream")


@dataclass(frozen=True)
class StreamRequest:
    src: int
    dst: int
    port: int
    params: StreamParams


@dataclass(frozen=True)
class PowerModel:
    """Radio currents in mA; typical values for a low-power 2.4 GHz transceiver, not measurements."""

    transmit: float = 25.8
    receive: float = 22.3
    flood: float = 24.0
    sleep: float = 0.01

    def __post_init__(self) -> None:
        if min(self.transmit, self.receive, self.flood, self.sleep) < 0:
            raise ValueError("currents must be nonnegative")
        if self.sleep > min(self.transmit, self.receive, self.flood):
            raise ValueError("sleep current cannot exceed the active currents")


@dataclass
class Scenario:
    config: NetworkConfig = field(default_factory=NetworkConfig)
    nodes: tuple[int, ...] = (MASTER,)
    links: tuple[LinkSpec, ...] = ()
    events: tuple[ScenarioEvent, ...] = ()
    streams: tuple[StreamRequest, ...] = ()
    seed: int = 0
    duration_ms: float = 60_000.0
    power: PowerModel = field(default_factory=PowerModel)
    log_data: bool = True

    def validate(self) -> None:
        problems = []
        n = self.config.max_nodes
        if MASTER not in self.nodes:
            problems.append("master node 0 must be present at t=0")
        for node in self.nodes:
            if not 0 <= node < n:
                problems.append(f"node {node} outside max_nodes={n}")
        for l in self.links:
            if not (0 <= l.u < n and 0 <= l.v < n) or l.u == l.v:
                problems.append(f"bad link {l.u}-{l.v}")
            if not 0.0 <= l.per <= 1.0:
                problems.append(f"link {l.u}-{l.v}: packet error rate {l.per} outside [0, 1]")
        times = [e.time_ms for e in self.events]
        if times != sorted(times):
            problems.append("events are not time-ordered")
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                problems.append(f"unknown event kind {e.kind!r}")
            if e.kind == "node_down" and e.args and e.args[0] == MASTER:
                problems.append("the master node cannot be turned off")
        if self.duration_ms <= 0:
            problems.append("duration must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    def truth(self) -> DualGraph:
        return DualGraph.from_links(self.config.max_nodes, self.nodes,
                                    ((l.u, l.v, l.rssi >= self.config.rssi_strong_threshold)
                                     for l in self.links))


# ---------------------------------------------------------------------------
# event log


@dataclass(frozen=True)
class LogRecord:
    time: int
    slot_kind: str
    actor: int
    event: str
    digest: str

    def __str__(self) -> str:
        return f"{self.time} {self.slot_kind} {self.actor} {self.event} {self.digest}"


def digest(payload: Any) -> str:
    data = payload if isinstance(payload, bytes) else repr(payload).encode()
    return hashlib.blake2b(data, digest_size=4).hexdigest()


class SimEventLog:
    def __init__(self) -> None:
        self.records: list[LogRecord] = []

    def append(self, time: int, slot_kind: str, actor: int, event: str, payload: Any = None) -> None:
        self.records.append(LogRecord(time, slot_kind, actor, event, digest(payload)))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def text(self) -> str:
        return "".join(f"{r}\n" for r in self.records)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class StreamMetrics:
    stream: StreamId
    sent: int = 0
    delivered: int = 0
    worst_latency: int = 0
    established_at: float | None = None

    @property
    def reliability(self) -> float | None:
        return self.delivered / self.sent if self.sent else None


@dataclass
class Metrics:
    synchronized_at: float | None = None
    full_graph_at: float | None = None
    schedules: int = 0
    reschedules: int = 0
    streams: dict[StreamId, StreamMetrics] = field(default_factory=dict)
    node_current: dict[int, float] = field(default_factory=dict)
    collisions: int = 0
    convergecast_violations: int = 0
    duration: float = 0.0

    @property
    def formation_time(self) -> float | None:
        if self.synchronized_at is None or self.full_graph_at is None:
            return None
        return self.full_graph_at - self.synchronized_at


# ---------------------------------------------------------------------------
# power model


@dataclass(frozen=True)
class TopologyActivity:
    """Control-plane duty of a node, as fractions of the relevant control slots."""

    flood_fraction: float = 1.0
    uplink_tx_fraction: float = 0.0
    overheard_fraction: float = 0.0


def activity_from_topology(config: NetworkConfig, neighbors: int, joined: bool = True) -> TopologyActivity:
    """Steady-state activity of a joined node with ``neighbors`` transmitting neighbors."""
    if not joined:
        return TopologyActivity(0.0, 0.0, 0.0)
    return TopologyActivity(1.0, 1 / config.max_nodes, min(neighbors, config.max_nodes - 1) / config.max_nodes)


def estimate_power(expanded: ExpandedSchedule, activity: TopologyActivity, model: PowerModel,
                   config: NetworkConfig) -> float:
    """Average current (mA) of one node over a data superframe."""
    slots = expanded.superframe_slots
    tiles = slots * config.superframe_tiles // config.slots_per_control_superframe
    sf = config.control_superframe
    downlinks = tiles // len(sf) * sf.count(TileKind.DOWNLINK)
    uplink_frames = tiles // len(sf) * sf.count(TileKind.UPLINK) * config.uplink_frames_per_tile
    total_time = tiles * config.tile_duration
    # start from all-asleep and add the surplus of every active period
    charge = model.sleep * total_time
    d = config.data_slot_duration
    for a in expanded.actions:
        if a.kind.transmits:
            charge += (model.transmit - model.sleep) * d
        elif a.kind.receives:
            charge += (model.receive - model.sleep) * d
    charge += downlinks * config.downlink_control_duration * activity.flood_fraction * (model.flood - model.sleep)
    up = uplink_frames * config.uplink_control_duration
    charge += up * activity.uplink_tx_fraction * (model.transmit - model.sleep)
    charge += up * activity.overheard_fraction * (model.receive - model.sleep)
    return charge / total_time


# ---------------------------------------------------------------------------
# session layer


@dataclass(frozen=True)
class InformationElement:
    kind: str  # "reject" or "listen-ack"
    a: int
    b: int
    c: int


@dataclass(frozen=True)
class DataFrame:
    stream: StreamId
    reverse: bool
    seq: int
    payload: Any


class StreamEndpoint:
    """Application handle of one end of a stream."""

    def __init__(self, sim: Simulation, node: int, stream_id: StreamId, params: StreamParams,
                 client: bool, auto: bool = False) -> None:
        self.sim = sim
        self.node = node
        self.id = stream_id
        self.params = params
        self.client = client
        self.auto = auto
        self.state = StreamState.REQUESTED
        self.staged: tuple[int, DataFrame] | None = None
        self.last_window: int | None = None
        self.next_seq = 0
        self.inbox: deque[Any] = deque()
        self.seen: set[tuple[bool, int]] = set()
        self.accepted = False

    @property
    def sends(self) -> bool:
        d = self.params.direction
        if d is Direction.BIDIRECTIONAL:
            return True
        return self.client == (d is Direction.FORWARD)

    @property
    def reverse(self) -> bool:
        """Chain flag of the frames this endpoint sends."""
        return not self.client

    def write(self, payload: Any = None) -> bool:
        """Stage one packet for the current period; a second write in the same period is refused."""
        if self.state is not StreamState.ESTABLISHED or not self.sends:
            return False
        window = self.sim._window(self.node, self.id)
        if window is None or window == self.last_window:
            return False
        self.last_window = window
        frame = DataFrame(self.id, self.reverse, self.next_seq, payload)
        self.next_seq += 1
        self.staged = (window, frame)
        self.sim._count_sent(self.id, window, self.node)
        return True

    def read(self) -> list[Any]:
        out = list(self.inbox)
        self.inbox.clear()
        return out

    def close(self) -> None:
        self.sim._close(self)


# ---------------------------------------------------------------------------
# nodes


@dataclass
class PendingSchedule:
    schedule_id: int
    total: int
    activation_tile: int
    superframe_tiles: int
    chunks: dict[int, tuple[ScheduleElement, ...]] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return len(self.chunks) == self.total


class Node:
    def __init__(self, node_id: int, config: NetworkConfig) -> None:
        self.id = node_id
        self.config = config
        self.alive = True
        self.topo = NodeTopology(node_id, config)
        self.expanded: ExpandedSchedule | None = None
        self.compact: CompactSchedule | None = None
        self.base = 0
        self.active: dict[int, Action] = {}
        self.pending: PendingSchedule | None = None
        self.resend_sent = False
        self.buffers: dict[int, tuple[int, DataFrame]] = {}
        self.own_smes: dict[tuple, StreamManagementElement] = {}
        self.sme_seq = 0
        self.endpoints: dict[StreamId, StreamEndpoint] = {}
        self.listening: set[int] = set()
        self.charge = 0.0
        self.alive_time = 0
        self.sources: list[tuple[StreamEndpoint, int]] = []

    def queue_sme(self, kind: SmeKind, sid: StreamId, params: StreamParams | None = None, extra: int = 0) -> StreamManagementElement:
        self.sme_seq = (self.sme_seq + 1) & 0xFF
        if params is None:
            sme = StreamManagementElement(kind, sid.src, sid.dst, sid.port, seq=self.sme_seq, extra=extra)
        else:
            sme = StreamManagementElement(kind, sid.src, sid.dst, sid.port, params.period.multiplier,
                                          params.flags, self.sme_seq, extra)
        self.own_smes[sme.key] = sme
        return sme


# ---------------------------------------------------------------------------
# master


@dataclass
class Distribution:
    schedule: CompactSchedule
    chunks: list[tuple[ScheduleElement, ...]]
    floods_left: int
    next_chunk: int
    activation_tile: int


@dataclass
class ScheduleRecord:
    schedule: CompactSchedule
    computed_at: float
    activation_tile: int
    reasons: tuple[str, ...]


class Master:
    def __init__(self, sim: Simulation) -> None:
        self.sim = sim
        self.config = sim.config
        self.topo = MasterTopology(sim.config)
        self.listeners: set[tuple[int, int]] = set()
        self.streams: dict[StreamId, Stream] = {}
        self.established: list[StreamId] = []
        self.pending_opens: list[Stream] = []
        self.pending_closes: list[StreamId] = []
        self.seen: set[tuple] = set()
        self.activation: ActivationSets | None = None
        self.latest: CompactSchedule | None = None
        self.latest_activation: tuple[int, int] | None = None  # (tile, superframe tiles)
        self.distribution: Distribution | None = None
        self.ies: deque[list] = deque()
        self.reasons: set[str] = set()
        self.next_id = 1
        self.history: list[ScheduleRecord] = []
        self.removals: list[tuple[float, int, int]] = []
        self.round = 0
        self.last_heard_round: dict[int, int] = {}

    def ingest(self, frame: UplinkFrame) -> None:
        for rec in frame.records():
            self.last_heard_round[rec.node] = self.round
        self._delta(self.topo.ingest(frame))
        for sme in frame.smes:
            self.on_sme(sme)

    def _delta(self, delta: LinkDelta) -> None:
        if delta:
            self.reasons.update(should_reschedule(self.activation, delta).reasons)

    def refresh_own(self, record) -> None:
        self._delta(self.topo.ingest_records([record]))

    def end_round(self) -> None:
        removed, delta = self.topo.end_round()
        for n in removed:
            self.removals.append((self.sim.now, n, self.round))
            self.sim.log.append(self.sim.now_us, "U", MASTER, "expunge", n)
        self._delta(delta)
        self.round += 1

    def on_sme(self, sme: StreamManagementElement) -> None:
        ident = (sme.key, sme.seq)
        if ident in self.seen:
            return
        self.seen.add(ident)
        sid = StreamId(sme.src, sme.dst, sme.port)
        if sme.kind is SmeKind.LISTEN:
            self.listeners.add((sme.dst, sme.port))
            self.queue_ie(InformationElement("listen-ack", sme.dst, sme.port, 0))
        elif sme.kind is SmeKind.OPEN:
            if sid in self.streams and self.streams[sid].state is StreamState.ESTABLISHED:
                return
            if any(s.id == sid for s in self.pending_opens):
                return
            if (sme.dst, sme.port) not in self.listeners:
                self.queue_ie(InformationElement("reject", sid.src, sid.dst, sid.port))
                return
            self.pending_opens.append(Stream(sid, StreamParams.from_flags(sme.period, sme.flags)))
        elif sme.kind is SmeKind.CLOSE:
            self.pending_opens = [s for s in self.pending_opens if s.id != sid]
            if sid in self.established:
                self.pending_closes.append(sid)
        elif sme.kind is SmeKind.RESEND:
            if self.latest is not None and (self.latest.schedule_id & 0xFF) == sme.extra:
                self.redistribute()

    def queue_ie(self, ie: InformationElement) -> None:
        self.ies.append([ie, self.config.schedule_repeats])

    @property
    def pending_smes(self) -> int:
        return len(self.pending_opens) + len(self.pending_closes)

    def maybe_reschedule(self) -> None:
        if self.pending_smes:
            self.reasons.add("sme")
        if not self.reasons or self.distribution is not None:
            return
        reasons = tuple(sorted(self.reasons))
        self.reasons.clear()
        self.reschedule(reasons)

    def reschedule(self, reasons: tuple[str, ...]) -> None:
        sim = self.sim
        for sid in self.pending_closes:
            if sid in self.established:
                self.established.remove(sid)
                self.streams[sid].state = StreamState.CLOSED
        self.pending_closes.clear()
        order = [Stream(sid, self.streams[sid].params) for sid in self.established]
        order += [Stream(s.id, s.params) for s in self.pending_opens]
        self.pending_opens.clear()
        graph = self.topo.graph
        result = schedule_streams(order, graph, self.config, self.next_id)
        problems = find_violations(result.schedule, graph)
        if problems:
            raise SimulationError("incremental scheduler and validity oracle disagree: " + "; ".join(problems[:3]))
        sim.metrics.reschedules += 1
        self.established = [s.id for s in result.accepted]
        for s in result.accepted:
            self.streams[s.id] = s
        for rej in result.rejected:
            self.streams[rej.stream.id] = rej.stream
            sid = rej.stream.id
            self.queue_ie(InformationElement("reject", sid.src, sid.dst, sid.port))
            sim.log.append(sim.now_us, "U", MASTER, f"reject-{rej.reason}", sid)
        self.activation = result.activation
        if self.latest is not None and result.schedule.elements == self.latest.elements \
                and result.schedule.superframe_tiles == self.latest.superframe_tiles:
            return
        self.next_id += 1
        self.latest = result.schedule
        self.start_distribution(result.schedule, reasons)

    def _chunks(self, compact: CompactSchedule) -> list[tuple[ScheduleElement, ...]]:
        per = max(1, (self.config.max_downlink_payload - DOWNLINK_HEADER - 1 - IE_SIZE * IES_PER_DOWNLINK)
                  // ELEMENT_SIZE)
        els = compact.elements
        return [els[i:i + per] for i in range(0, len(els), per)] or [()]

    def start_distribution(self, compact: CompactSchedule, reasons: tuple[str, ...]) -> None:
        sim = self.sim
        chunks = self._chunks(compact)
        floods = len(chunks) * self.config.schedule_repeats
        last = sim.nth_downlink_tile(sim.tile + 1, floods)
        activation = sim.boundary_after(last + 1, self.latest_activation)
        self.distribution = Distribution(compact, chunks, floods, 0, activation)
        self.latest_activation = (activation, compact.superframe_tiles)
        self.history.append(ScheduleRecord(compact, sim.now, activation, reasons))
        sim.metrics.schedules += 1
        sim.log.append(sim.now_us, "U", MASTER, "schedule", compact.to_bytes())

    def redistribute(self) -> None:
        if self.distribution is not None or self.latest is None or self.latest_activation is None:
            return
        chunks = self._chunks(self.latest)
        self.distribution = Distribution(self.latest, chunks, len(chunks), 0, self.latest_activation[0])

    def downlink_payload(self) -> tuple[tuple | None, list[InformationElement]]:
        chunk = None
        d = self.distribution
        if d is not None:
            i = d.next_chunk % len(d.chunks)
            chunk = (d.schedule.schedule_id, i, len(d.chunks), d.activation_tile,
                     d.schedule.superframe_tiles, d.chunks[i])
            d.next_chunk += 1
            d.floods_left -= 1
            if d.floods_left == 0:
                self.distribution = None
        ies = []
        for _ in range(min(IES_PER_DOWNLINK, len(self.ies))):
            entry = self.ies.popleft()
            ies.append(entry[0])
            entry[1] -= 1
            if entry[1] > 0:
                self.ies.append(entry)
        return chunk, ies


# ---------------------------------------------------------------------------
# simulation


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        scenario.validate()
        self.scenario = scenario
        self.config = config = scenario.config
        self.rng = random.Random(scenario.seed)
        self.log = SimEventLog()
        self.metrics = Metrics()
        self.tile = 0
        self.global_slot = 0
        self.uplink_counter = 0
        self.links: dict[tuple[int, int], LinkSpec] = {canonical(l.u, l.v): l for l in scenario.links}
        self.nodes: dict[int, Node] = {}
        for n in sorted(scenario.nodes):
            self.nodes[n] = Node(n, config)
        self.master = Master(self)
        opens = [ScenarioEvent(0.0, "open_stream", (req,)) for req in scenario.streams]
        self.events = deque(opens + list(scenario.events))
        self._retries: list[tuple[int, StreamRequest]] = []
        self._adj_cache: dict[int, list[int]] | None = None
        self._truth_cache: DualGraph | None = None
        self._sent_windows: dict[tuple[StreamId, int], int] = {}

    # -- time helpers -----------------------------------------------------

    @property
    def now_us(self) -> int:
        return self.tile * self.config.tile_duration

    @property
    def now(self) -> float:
        return self.now_us / 1e6

    def nth_downlink_tile(self, start: int, n: int) -> int:
        t, seen = start, 0
        while True:
            if self.config.tile_kind(t) is TileKind.DOWNLINK:
                seen += 1
                if seen == n:
                    return t
            t += 1

    def boundary_after(self, tile: int, current: tuple[int, int] | None) -> int:
        if current is None:
            base, period = 0, self.config.superframe_tiles
        else:
            base, period = current
        if tile <= base:
            return base
        return base + -(-(tile - base) // period) * period

    # -- ground truth -----------------------------------------------------

    def alive(self, n: int) -> bool:
        node = self.nodes.get(n)
        return node is not None and node.alive

    def _adjacency(self) -> dict[int, list[int]]:
        if self._adj_cache is None:
            adj: dict[int, list[int]] = {n: [] for n in self.nodes if self.nodes[n].alive}
            for (u, v) in sorted(self.links):
                if u in adj and v in adj:
                    adj[u].append(v)
                    adj[v].append(u)
            for lst in adj.values():
                lst.sort()
            self._adj_cache = adj
        return self._adj_cache

    def truth(self) -> DualGraph:
        if self._truth_cache is None:
            thr = self.config.rssi_strong_threshold
            alive = [n for n in self.nodes if self.nodes[n].alive]
            self._truth_cache = DualGraph.from_links(
                self.config.max_nodes, alive,
                ((u, v, l.rssi >= thr) for (u, v), l in sorted(self.links.items())
                 if self.alive(u) and self.alive(v)))
        return self._truth_cache

    def _topology_changed(self) -> None:
        self._adj_cache = None
        self._truth_cache = None

    # -- events -------------------------------------------------------------

    def _apply_events(self) -> None:
        now_ms = self.now_us / 1000
        while self.events and self.events[0].time_ms <= now_ms:
            ev = self.events.popleft()
            self._apply(ev)
        due = [r for r in self._retries if r[0] <= self.tile]
        if due:
            self._retries = [r for r in self._retries if r[0] > self.tile]
            for _, req in due:
                self._open(req)

    def _apply(self, ev: ScenarioEvent) -> None:
        kind, args = ev.kind, ev.args
        actor = args[0] if args and isinstance(args[0], int) else getattr(args[0], "src", -1)
        self.log.append(self.now_us, "event", actor, kind, args)
        if kind == "node_up":
            n = args[0]
            old = self.nodes.get(n)
            fresh = Node(n, self.config)
            if old is not None:
                fresh.charge, fresh.alive_time = old.charge, old.alive_time
            self.nodes[n] = fresh
            self._topology_changed()
        elif kind == "node_down":
            self.nodes[args[0]].alive = False
            self._topology_changed()
        elif kind == "link_set":
            u, v, rssi, per = args
            self.links[canonical(u, v)] = LinkSpec(u, v, rssi, per)
            self._topology_changed()
        elif kind == "link_down":
            self.links.pop(canonical(args[0], args[1]), None)
            self._topology_changed()
        elif kind == "open_stream":
            self._open(args[0])
        elif kind == "close_stream":
            src, dst, port = args
            ep = self.nodes[src].endpoints.get(StreamId(src, dst, port)) if src in self.nodes else None
            if ep is not None:
                ep.auto = False
                ep.close()

    def _open(self, req: StreamRequest) -> None:
        if not (self.alive(req.src) and self.alive(req.dst)):
            return
        if req.port not in self.nodes[req.dst].listening:
            self.listen(req.dst, req.port)
        self.connect(req.src, req.dst, req.port, req.params, auto=True)

    # -- session API --------------------------------------------------------

    def listen(self, node: int, port: int) -> None:
        n = self.nodes[node]
        n.listening.add(port)
        sme = StreamManagementElement(SmeKind.LISTEN, node, node, port, seq=0)
        if node == MASTER:
            self.master.on_sme(sme)
        else:
            n.queue_sme(SmeKind.LISTEN, StreamId(node, node, port))

    def connect(self, node: int, dst: int, port: int, params: StreamParams, auto: bool = False) -> StreamEndpoint:
        sid = StreamId(node, dst, port)
        n = self.nodes[node]
        ep = StreamEndpoint(self, node, sid, params, client=True, auto=auto)
        n.endpoints[sid] = ep
        sme = n.queue_sme(SmeKind.OPEN, sid, params)
        if node == MASTER:
            n.own_smes.pop(sme.key, None)
            self.master.on_sme(sme)
        self.log.append(self.now_us, "session", node, "connect", sid)
        return ep

    def accept(self, node: int, port: int) -> list[StreamEndpoint]:
        out = []
        for ep in self.nodes[node].endpoints.values():
            if not ep.client and ep.id.port == port and not ep.accepted \
                    and ep.state is StreamState.ESTABLISHED:
                ep.accepted = True
                out.append(ep)
        return out

    def _close(self, ep: StreamEndpoint) -> None:
        n = self.nodes[ep.node]
        n.own_smes.pop((SmeKind.OPEN, ep.id.src, ep.id.dst, ep.id.port), None)
        sme = n.queue_sme(SmeKind.CLOSE, ep.id)
        if ep.node == MASTER:
            n.own_smes.pop(sme.key, None)
            self.master.on_sme(sme)
        ep.state = StreamState.CLOSED
        ep.staged = None

    def _window(self, node: int, sid: StreamId) -> int | None:
        n = self.nodes[node]
        if n.compact is None:
            return None
        for ep, period in n.sources:
            if ep.id == sid:
                return (self.global_slot - n.base) // period
        return None

    def _count_sent(self, sid: StreamId, window: int, node: int) -> None:
        sm = self.metrics.streams.setdefault(sid, StreamMetrics(sid))
        sm.sent += 1
        n = self.nodes[node]
        period = next(p for ep, p in n.sources if ep.id == sid)
        end = n.base + (window + 1) * period
        self._sent_windows[(sid, node)] = end

    # -- tiles --------------------------------------------------------------

    def run(self, until_ms: float | None = None) -> tuple[Metrics, SimEventLog]:
        end_us = (self.scenario.duration_ms if until_ms is None else until_ms) * 1000
        while self.now_us < end_us:
            self.step()
        return self.finish(), self.log

    def run_until(self, predicate, limit_ms: float | None = None) -> bool:
        end_us = (self.scenario.duration_ms if limit_ms is None else limit_ms) * 1000
        while self.now_us < end_us:
            self.step()
            if predicate(self):
                return True
        return False

    def step(self) -> None:
        cfg = self.config
        self._apply_events()
        self._activate_schedules()
        for n in self.nodes.values():
            if n.alive:
                n.charge += self.scenario.power.sleep * cfg.tile_duration
                n.alive_time += cfg.tile_duration
        kind = cfg.tile_kind(self.tile)
        if kind is TileKind.DOWNLINK:
            self._downlink()
        else:
            for _ in range(cfg.uplink_frames_per_tile):
                self._uplink()
            self.master.maybe_reschedule()
        for i in range(cfg.data_slots_per_tile(kind)):
            self._data_slot(i)
        self.tile += 1

    # -- downlink -----------------------------------------------------------

    def _flood_levels(self) -> dict[int, int]:
        adj = self._adjacency()
        strong_only = self.config.hop_graph == "strong"
        thr = self.config.rssi_strong_threshold
        loss = self.config.downlink_hop_loss
        hops = {MASTER: 0}
        frontier = [MASTER]
        level = 0
        while frontier:
            level += 1
            nxt = []
            for u in frontier:
                for v in adj.get(u, ()):
                    if v in hops or v in nxt:
                        continue
                    if strong_only and self.links[canonical(u, v)].rssi < thr:
                        continue
                    nxt.append(v)
            nxt.sort()
            if loss:
                nxt = [v for v in nxt if self.rng.random() >= loss]
            for v in nxt:
                hops[v] = level
            frontier = nxt
        return hops

    def _downlink(self) -> None:
        cfg, power = self.config, self.scenario.power
        chunk, ies = self.master.downlink_payload()
        hops = self._flood_levels()
        self.log.append(self.now_us, "D", MASTER, "flood", (chunk and chunk[:3], ies))
        surplus = (power.flood - power.sleep) * cfg.downlink_control_duration
        for n in sorted(hops):
            node = self.nodes[n]
            node.charge += surplus
            node.topo.on_downlink_flood(hops[n])
            if chunk is not None:
                self._receive_chunk(node, chunk)
            for ie in ies:
                self._receive_ie(node, ie)
        if self.metrics.synchronized_at is None and all(
                n.topo.synchronized for n in self.nodes.values() if n.alive):
            self.metrics.synchronized_at = (self.tile + 1) * cfg.tile_duration / 1e6

    def _receive_chunk(self, node: Node, chunk: tuple) -> None:
        sid, idx, total, activation, tiles, elements = chunk
        if node.compact is not None and node.compact.schedule_id >= sid:
            return
        p = node.pending
        if p is None or p.schedule_id != sid:
            if p is not None and p.schedule_id > sid:
                return
            p = node.pending = PendingSchedule(sid, total, activation, tiles)
            node.resend_sent = False
        p.chunks[idx] = elements

    def _receive_ie(self, node: Node, ie: InformationElement) -> None:
        if ie.kind == "listen-ack" and ie.a == node.id:
            node.own_smes.pop((SmeKind.LISTEN, node.id, node.id, ie.b), None)
        elif ie.kind == "reject":
            sid = StreamId(ie.a, ie.b, ie.c)
            ep = node.endpoints.get(sid)
            if ep is not None and ep.state is StreamState.REQUESTED:
                self._stream_ended(node, ep, StreamState.REJECTED)

    def _stream_ended(self, node: Node, ep: StreamEndpoint, state: StreamState) -> None:
        ep.state = state
        ep.staged = None
        node.own_smes.pop((SmeKind.OPEN, ep.id.src, ep.id.dst, ep.id.port), None)
        self.log.append(self.now_us, "session", node.id, state.value, ep.id)
        if ep.auto and ep.client:
            delay = max(1, int(self.config.round_duration() * 1e6 // self.config.tile_duration))
            req = StreamRequest(ep.id.src, ep.id.dst, ep.id.port, ep.params)
            self._retries.append((self.tile + delay, req))

    # -- schedule activation -------------------------------------------------

    def _activate_schedules(self) -> None:
        for n in sorted(self.nodes):
            node = self.nodes[n]
            p = node.pending
            if not node.alive or p is None:
                continue
            if self.tile < p.activation_tile:
                continue
            if not p.complete:
                if not node.resend_sent and self.tile == p.activation_tile:
                    node.resend_sent = True
                    node.queue_sme(SmeKind.RESEND, StreamId(n, MASTER, 0), extra=p.schedule_id & 0xFF)
                continue
            if (self.tile - p.activation_tile) % p.superframe_tiles:
                continue
            elements = tuple(e for i in sorted(p.chunks) for e in p.chunks[i])
            compact = CompactSchedule(p.schedule_id, p.superframe_tiles,
                                      self.config.slots_in_tiles(p.superframe_tiles), elements)
            self._install(node, compact)
            node.pending = None

    def _install(self, node: Node, compact: CompactSchedule) -> None:
        old = set(node.compact.streams()) if node.compact is not None else set()
        node.compact = compact
        node.expanded = expand(compact, node.id)
        node.active = node.expanded.active()
        node.base = self.global_slot
        node.buffers.clear()
        node.own_smes = {k: v for k, v in node.own_smes.items() if k[0] is not SmeKind.RESEND}
        self.log.append(self.now_us, "D", node.id, "activate", compact.schedule_id)
        present = compact.streams()
        for sid in sorted(present):
            if node.id not in (sid.src, sid.dst):
                continue
            ep = node.endpoints.get(sid)
            if ep is not None and not ep.client and ep.state in (StreamState.CLOSED, StreamState.REJECTED):
                ep = None
            if ep is None and node.id == sid.dst and sid.port in node.listening:
                params = self._params_of(compact, sid)
                ep = node.endpoints[sid] = StreamEndpoint(self, node.id, sid, params, client=False)
            if ep is not None and ep.state is StreamState.REQUESTED:
                ep.state = StreamState.ESTABLISHED
                node.own_smes.pop((SmeKind.OPEN, sid.src, sid.dst, sid.port), None)
                sm = self.metrics.streams.setdefault(sid, StreamMetrics(sid))
                if sm.established_at is None:
                    sm.established_at = self.now
                self.log.append(self.now_us, "session", node.id, "established", sid)
        for sid in sorted(old - present):
            ep = node.endpoints.get(sid)
            if ep is not None and ep.state is StreamState.ESTABLISHED:
                self._stream_ended(node, ep, StreamState.CLOSED)
        for key in [k for k in node.own_smes if k[0] is SmeKind.CLOSE]:
            if StreamId(*key[1:]) not in present:
                del node.own_smes[key]
        node.sources = []
        for sid in sorted(present):
            ep = node.endpoints.get(sid)
            if ep is not None and ep.state is StreamState.ESTABLISHED and ep.sends:
                ep.staged = None
                ep.last_window = None
                node.sources.append((ep, ep.params.period.slots(self.config)))

    def _params_of(self, compact: CompactSchedule, sid: StreamId) -> StreamParams:
        """Recover stream parameters from its elements, as a listening node must."""
        mine = [e for e in compact.elements if e.stream == sid]
        chains = {(e.reverse, e.copy) for e in mine}
        fwd = any(not r for r, _ in chains)
        rev = any(r for r, _ in chains)
        direction = Direction.BIDIRECTIONAL if fwd and rev else (Direction.REVERSE if rev else Direction.FORWARD)
        copies = len({c for r, c in chains if r == (not fwd)})
        multiplier = mine[0].period * self.config.superframe_tiles // self.config.slots_per_control_superframe
        return StreamParams(multiplier, direction, copies)

    # -- uplink -------------------------------------------------------------

    def _uplink(self) -> None:
        cfg, power = self.config, self.scenario.power
        k = self.uplink_counter
        self.uplink_counter += 1
        sender = k % cfg.max_nodes
        node = self.nodes.get(sender)
        if node is not None and node.alive and node.topo.synchronized and node.topo.hop is not None:
            own = [s for s in node.own_smes.values()]
            frame = node.topo.build_uplink_frame(own)
            node.own_smes = {key: s for key, s in node.own_smes.items() if s.kind is not SmeKind.RESEND}
            for rec in frame.forwarded:
                if rec.hop <= frame.sender.hop:
                    self.metrics.convergecast_violations += 1
            self.log.append(self.now_us, "U", sender, "uplink", frame.encode(cfg.max_nodes))
            node.charge += (power.transmit - power.sleep) * cfg.uplink_control_duration
            rx_surplus = (power.receive - power.sleep) * cfg.uplink_control_duration
            for v in self._adjacency().get(sender, ()):
                listener = self.nodes[v]
                if not listener.topo.synchronized:
                    continue
                link = self.links[canonical(sender, v)]
                if link.per and self.rng.random() < link.per:
                    continue
                listener.charge += rx_surplus
                listener.topo.on_uplink_overheard(frame, link.rssi)
                if v == MASTER:
                    self.master.ingest(frame)
                    self.master.refresh_own(self.nodes[MASTER].topo.own_record())
        if (k + 1) % cfg.max_nodes == 0:
            self._end_round()
        self._check_formation()

    def _end_round(self) -> None:
        for n in sorted(self.nodes):
            node = self.nodes[n]
            if node.alive:
                node.topo.end_round()
        self.master.refresh_own(self.nodes[MASTER].topo.own_record())
        self.master.end_round()

    def _check_formation(self) -> None:
        m = self.metrics
        if m.full_graph_at is None and m.synchronized_at is not None:
            if self.master.topo.graph == self.truth():
                m.full_graph_at = (self.tile + 1) * self.config.tile_duration / 1e6

    # -- data slots ----------------------------------------------------------

    def _data_slot(self, offset: int) -> None:
        try:
            self._execute_slot(self.global_slot)
        finally:
            self.global_slot += 1

    def _execute_slot(self, g: int) -> None:
        cfg, power = self.config, self.scenario.power
        d = cfg.data_slot_duration
        acting: list[tuple[Node, Action, int]] = []
        for n in self.nodes.values():
            if not n.alive or n.compact is None:
                continue
            rel = g - n.base
            for ep, period in n.sources:
                if ep.auto and rel % period == 0 and ep.state is StreamState.ESTABLISHED:
                    ep.write(("auto", ep.next_seq))
            if not n.active:
                continue
            act = n.active.get(rel % n.compact.superframe_slots)
            if act is not None:
                acting.append((n, act, rel))
        if not acting:
            return
        acting.sort(key=lambda t: t[0].id)
        sending: dict[int, tuple[ScheduleElement, DataFrame]] = {}
        for n, act, rel in acting:
            if not act.kind.transmits:
                continue
            e = act.element
            window = rel // e.period
            frame = None
            if act.kind is ActionKind.TRANSMIT_FROM_SESSION:
                ep = n.endpoints.get(e.stream)
                if ep is not None and ep.staged is not None and ep.staged[0] == window \
                        and ep.reverse == e.reverse:
                    frame = ep.staged[1]
            else:
                held = n.buffers.get(act.buffer)
                if held is not None and held[0] == window:
                    frame = held[1]
                    del n.buffers[act.buffer]
            if frame is not None:
                sending[n.id] = (e, frame)
                n.charge += (power.transmit - power.sleep) * d
                if self.scenario.log_data:
                    self.log.append(self.now_us, "data", n.id, "tx", (e.stream, e.reverse, e.copy, frame.seq))
        adj = self._adjacency()
        for n, act, rel in acting:
            if not act.kind.receives:
                continue
            n.charge += (power.receive - power.sleep) * d
            e = act.element
            sent = sending.get(e.tx)
            if sent is None or sent[0].chain != e.chain or n.id in sending:
                continue
            link = self.links.get(canonical(e.tx, n.id))
            if link is None or not self.alive(e.tx):
                continue
            if any(w != e.tx and w in sending for w in adj.get(n.id, ())):
                self.metrics.collisions += 1
                if self.scenario.log_data:
                    self.log.append(self.now_us, "data", n.id, "collision", e.stream)
                continue
            if link.per and self.rng.random() < link.per:
                if self.scenario.log_data:
                    self.log.append(self.now_us, "data", n.id, "lost", (e.stream, sent[1].seq))
                continue
            frame = sent[1]
            window = rel // e.period
            if act.kind is ActionKind.RECEIVE_TO_BUFFER:
                n.buffers[act.buffer] = (window, frame)
            else:
                self._deliver(n, e, frame, rel % e.period + 1)

    def _deliver(self, node: Node, e: ScheduleElement, frame: DataFrame, latency: int) -> None:
        ep = node.endpoints.get(e.stream)
        if ep is None:
            return
        tag = (frame.reverse, frame.seq)
        if tag in ep.seen:
            return
        ep.seen.add(tag)
        ep.inbox.append(frame.payload)
        sm = self.metrics.streams.setdefault(e.stream, StreamMetrics(e.stream))
        sm.delivered += 1
        sm.worst_latency = max(sm.worst_latency, latency)
        if self.scenario.log_data:
            self.log.append(self.now_us, "data", node.id, "deliver", (e.stream, frame.seq))

    # -- results --------------------------------------------------------------

    def finish(self) -> Metrics:
        m = self.metrics
        m.duration = self.now
        for (sid, node), end in self._sent_windows.items():
            if end > self.global_slot:
                m.streams[sid].sent -= 1
        self._sent_windows.clear()
        m.node_current = {n: node.charge / node.alive_time
                          for n, node in sorted(self.nodes.items()) if node.alive_time}
        return m


def run(scenario: Scenario) -> tuple[Metrics, SimEventLog]:
    return Simulation(scenario).run()


def measure_formation(scenario: Scenario) -> float:
    """Seconds from network-wide synchronization until the master knows the full graph."""
    if any(l.per > 0 for l in scenario.links):
        raise ValueError("formation time is measured on loss-free scenarios")
    sim = Simulation(scenario)
    if not sim.run_until(lambda s: s.metrics.full_graph_at is not None):
        raise NonConvergence(f"master graph incomplete after {scenario.duration_ms / 1000:g}s")
    return sim.metrics.formation_time
