"""Topology collection: per-node convergecast state and master-side dual graphs.

Every node broadcasts, in its round-robin uplink turn, a record with its hop
count, its chosen forwardee and bitmasks of its strong and weak neighbors.
The forwardee queues the record and relays it in its own turn, so records
always travel towards the master.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Iterator

from .core import MASTER, NetworkConfig, PeriodClass

logger = logging.getLogger(__name__)

NO_NODE = 0xFF
FRAME_HEADER_SIZE = 1
SME_SIZE = 8
# one header byte: 5 bits of forwarded-record count, 3 bits of SME count
MAX_FORWARDED = 31
MAX_SMES = 7

Link = tuple[int, int]


def canonical(u: int, v: int) -> Link:
    return (u, v) if u < v else (v, u)


def mask_bytes(max_nodes: int) -> int:
    return (max_nodes + 7) // 8


def record_size(max_nodes: int) -> int:
    return 3 + 2 * mask_bytes(max_nodes)


def bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def to_mask(nodes: Iterable[int]) -> int:
    m = 0
    for n in nodes:
        m |= 1 << n
    return m


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyRecord:
    node: int
    hop: int
    forwardee: int | None
    strong_mask: int
    weak_mask: int

    def check(self, max_nodes: int) -> None:
        if not 0 <= self.node < max_nodes:
            raise FrameError(f"record for node {self.node} outside max_nodes={max_nodes}")
        if self.forwardee is not None and not 0 <= self.forwardee < max_nodes:
            raise FrameError(f"node {self.node} names forwardee {self.forwardee} outside max_nodes")
        if (self.strong_mask | self.weak_mask) >> max_nodes:
            raise FrameError(f"node {self.node} reports neighbors beyond max_nodes={max_nodes}")
        if self.strong_mask & ~self.weak_mask:
            raise FrameError(f"node {self.node}: strong mask is not a subset of weak mask")
        if (self.weak_mask >> self.node) & 1:
            raise FrameError(f"node {self.node} lists itself as a neighbor")
        if (self.hop == 0) != (self.node == MASTER):
            raise FrameError(f"node {self.node} reports hop {self.hop}")

    def encode(self, max_nodes: int) -> bytes:
        nb = mask_bytes(max_nodes)
        fwd = NO_NODE if self.forwardee is None else self.forwardee
        return (bytes((self.node, self.hop, fwd))
                + self.strong_mask.to_bytes(nb, "little")
                + self.weak_mask.to_bytes(nb, "little"))

    @classmethod
    def decode(cls, data: bytes, max_nodes: int) -> TopologyRecord:
        nb = mask_bytes(max_nodes)
        node, hop, fwd = data[0], data[1], data[2]
        strong = int.from_bytes(data[3:3 + nb], "little")
        weak = int.from_bytes(data[3 + nb:3 + 2 * nb], "little")
        return cls(node, hop, None if fwd == NO_NODE else fwd, strong, weak)


class SmeKind(IntEnum):
    OPEN = 1
    CLOSE = 2
    LISTEN = 3
    RESEND = 4


@dataclass(frozen=True)
class StreamManagementElement:
    """Uplink request to the master.

    ``src``/``dst``/``port`` identify the stream (for LISTEN, ``dst`` is the
    listening node).  ``flags`` packs direction (2 bits), redundancy (2 bits)
    and the spatial flag; ``seq`` lets the master drop duplicates; ``extra``
    carries the schedule id of a RESEND request (low byte).
    """

    kind: SmeKind
    src: int
    dst: int
    port: int
    period: int = 1
    flags: int = 0
    seq: int = 0
    extra: int = 0

    @property
    def key(self) -> tuple:
        return (self.kind, self.src, self.dst, self.port)

    def encode(self) -> bytes:
        return struct.pack("<8B", self.kind, self.src, self.dst, self.port,
                           PeriodClass(self.period).index, self.flags, self.seq & 0xFF, self.extra & 0xFF)

    @classmethod
    def decode(cls, data: bytes) -> StreamManagementElement:
        kind, src, dst, port, pidx, flags, seq, extra = struct.unpack("<8B", data[:SME_SIZE])
        return cls(SmeKind(kind), src, dst, port, PeriodClass.from_index(pidx).multiplier, flags, seq, extra)


@dataclass(frozen=True)
class UplinkFrame:
    sender: TopologyRecord
    forwarded: tuple[TopologyRecord, ...] = ()
    smes: tuple[StreamManagementElement, ...] = ()

    def size(self, max_nodes: int) -> int:
        return (FRAME_HEADER_SIZE + record_size(max_nodes) * (1 + len(self.forwarded))
                + SME_SIZE * len(self.smes))

    def records(self) -> tuple[TopologyRecord, ...]:
        return (self.sender,) + self.forwarded

    def encode(self, max_nodes: int) -> bytes:
        if len(self.forwarded) > MAX_FORWARDED or len(self.smes) > MAX_SMES:
            raise FrameError("too many forwarded records or SMEs for the frame header")
        out = bytearray([len(self.forwarded) | (len(self.smes) << 5)])
        for rec in self.records():
            out += rec.encode(max_nodes)
        for sme in self.smes:
            out += sme.encode()
        return bytes(out)

    @classmethod
    def decode(cls, data: bytes, max_nodes: int) -> UplinkFrame:
        if not data:
            raise FrameError("empty uplink frame")
        nfwd, nsme = data[0] & 0x1F, data[0] >> 5
        rs = record_size(max_nodes)
        expected = FRAME_HEADER_SIZE + rs * (1 + nfwd) + SME_SIZE * nsme
        if len(data) != expected:
            raise FrameError(f"uplink frame is {len(data)} bytes, header implies {expected}")
        pos = FRAME_HEADER_SIZE
        recs = []
        for _ in range(1 + nfwd):
            recs.append(TopologyRecord.decode(data[pos:pos + rs], max_nodes))
            pos += rs
        smes = []
        for _ in range(nsme):
            smes.append(StreamManagementElement.decode(data[pos:pos + SME_SIZE]))
            pos += SME_SIZE
        return cls(recs[0], tuple(recs[1:]), tuple(smes))


def forward_capacity(config: NetworkConfig, n_smes: int = 0) -> int:
    """Forwarded records that fit next to the sender's own record and SMEs."""
    rs = record_size(config.max_nodes)
    room = config.max_uplink_payload - FRAME_HEADER_SIZE - rs - SME_SIZE * n_smes
    return max(0, min(MAX_FORWARDED, room // rs))


def sme_capacity(config: NetworkConfig) -> int:
    room = config.max_uplink_payload - FRAME_HEADER_SIZE - record_size(config.max_nodes)
    return max(0, min(MAX_SMES, room // SME_SIZE))


def refresh_timeout_rounds(config: NetworkConfig, nodes: int, master_degree: int = 6) -> int:
    """Smallest stale timeout the convergecast can sustain, with 2x headroom.

    Every record reaches the master through one of its ``master_degree``
    neighbors, each forwarding ``forward_capacity`` records per round, so a
    node's record is refreshed roughly every nodes / (degree * capacity)
    rounds.  A timeout shorter than that makes the master expunge live nodes.
    """
    cap = max(1, forward_capacity(config))
    return max(config.topology_timeout_rounds, 2 * -(-(nodes - 1) // (master_degree * cap)))


# ---------------------------------------------------------------------------
# node side


@dataclass
class Neighbor:
    rssi: int
    hop: int | None
    rounds_since_heard: int = 0


class NeighborTable:
    def __init__(self, config: NetworkConfig) -> None:
        self.config = config
        self.entries: dict[int, Neighbor] = {}

    def heard(self, node: int, rssi: int, hop: int | None) -> None:
        self.entries[node] = Neighbor(rssi, hop, 0)

    def end_round(self) -> list[int]:
        """Age every entry; return neighbors that just timed out."""
        gone = []
        for node, nb in list(self.entries.items()):
            nb.rounds_since_heard += 1
            if nb.rounds_since_heard >= self.config.topology_timeout_rounds:
                del self.entries[node]
                gone.append(node)
        return gone

    def is_strong(self, node: int) -> bool:
        nb = self.entries.get(node)
        return nb is not None and nb.rssi >= self.config.rssi_strong_threshold

    def weak(self) -> list[int]:
        return sorted(self.entries)

    def strong(self) -> list[int]:
        return [n for n in sorted(self.entries) if self.is_strong(n)]

    def weak_mask(self) -> int:
        return to_mask(self.entries)

    def strong_mask(self) -> int:
        return to_mask(self.strong())


class NodeTopology:
    """Topology-collection state machine of one node."""

    def __init__(self, node: int, config: NetworkConfig) -> None:
        self.node = node
        self.config = config
        self.floods_received = 0
        self.hop: int | None = 0 if node == MASTER else None
        self.neighbors = NeighborTable(config)
        self.queue: dict[int, TopologyRecord] = {}
        self.sme_queue: dict[tuple, StreamManagementElement] = {}
        self.forwardee: int | None = None
        self.stranded = False

    @property
    def synchronized(self) -> bool:
        return self.node == MASTER or self.floods_received >= 2

    def on_downlink_flood(self, hop: int) -> None:
        if self.node == MASTER:
            return
        self.floods_received += 1
        if self.synchronized:
            self.hop = hop

    def select_forwardee(self) -> int | None:
        self.stranded = False
        if self.hop is None or self.hop <= 1:
            return None
        entries = self.neighbors.entries
        candidates = [n for n in self.neighbors.strong()
                      if entries[n].hop is not None and entries[n].hop < self.hop]
        # a neighbor missed in the last full round is probably gone; avoid it while others remain
        fresh = [n for n in candidates if entries[n].rounds_since_heard <= 1]
        best = None
        for n in fresh or candidates:
            if best is None or entries[n].rssi > entries[best].rssi:
                best = n
        if best is None:
            self.stranded = True
        return best

    def own_record(self) -> TopologyRecord:
        return TopologyRecord(self.node, self.hop if self.hop is not None else 0, self.forwardee,
                              self.neighbors.strong_mask(), self.neighbors.weak_mask())

    def build_uplink_frame(self, own_smes: Iterable[StreamManagementElement] = ()) -> UplinkFrame:
        """Compose the frame for this node's turn, draining the FIFO queues."""
        self.forwardee = self.select_forwardee()
        smes = []
        cap = sme_capacity(self.config)
        for sme in own_smes:
            if len(smes) < cap:
                smes.append(sme)
        while len(smes) < cap and self.sme_queue:
            key = next(iter(self.sme_queue))
            smes.append(self.sme_queue.pop(key))
        n = forward_capacity(self.config, len(smes))
        forwarded = []
        while len(forwarded) < n and self.queue:
            node = next(iter(self.queue))
            forwarded.append(self.queue.pop(node))
        return UplinkFrame(self.own_record(), tuple(forwarded), tuple(smes))

    def enqueue(self, record: TopologyRecord) -> None:
        # assignment to an existing key keeps its FIFO position
        if record.node != self.node:
            self.queue[record.node] = record

    def on_uplink_overheard(self, frame: UplinkFrame, rssi: int) -> None:
        sender = frame.sender
        self.neighbors.heard(sender.node, rssi, sender.hop)
        if sender.forwardee == self.node and self.node != MASTER:
            for rec in frame.records():
                self.enqueue(rec)
            for sme in frame.smes:
                self.sme_queue[sme.key] = sme

    def end_round(self) -> list[int]:
        return self.neighbors.end_round()


# ---------------------------------------------------------------------------
# master side


@dataclass(frozen=True)
class LinkDelta:
    weak_added: frozenset[Link] = frozenset()
    weak_removed: frozenset[Link] = frozenset()
    strong_added: frozenset[Link] = frozenset()
    strong_removed: frozenset[Link] = frozenset()

    def __bool__(self) -> bool:
        return bool(self.weak_added or self.weak_removed or self.strong_added or self.strong_removed)

    def merge(self, other: LinkDelta) -> LinkDelta:
        return LinkDelta(self.weak_added | other.weak_added, self.weak_removed | other.weak_removed,
                         self.strong_added | other.strong_added, self.strong_removed | other.strong_removed)


class DualGraph:
    """Symmetric strong and weak adjacency as per-node bitmasks."""

    def __init__(self, max_nodes: int) -> None:
        self.max_nodes = max_nodes
        self.strong = [0] * max_nodes
        self.weak = [0] * max_nodes
        self.present = 0

    @classmethod
    def from_links(cls, max_nodes: int, nodes: Iterable[int],
                   links: Iterable[tuple[int, int, bool]]) -> DualGraph:
        """Build from ``(u, v, is_strong)`` triples; every link is weak."""
        g = cls(max_nodes)
        for n in nodes:
            g.add_node(n)
        for u, v, strong in links:
            g.add_link(u, v, strong)
        return g

    def copy(self) -> DualGraph:
        g = DualGraph(self.max_nodes)
        g.strong = list(self.strong)
        g.weak = list(self.weak)
        g.present = self.present
        return g

    def add_node(self, n: int) -> None:
        self.present |= 1 << n

    def remove_node(self, n: int) -> None:
        for m in bits(self.weak[n]):
            self.weak[m] &= ~(1 << n)
            self.strong[m] &= ~(1 << n)
        self.weak[n] = self.strong[n] = 0
        self.present &= ~(1 << n)

    def add_link(self, u: int, v: int, strong: bool = True) -> None:
        if u == v:
            raise ValueError(f"self link on node {u}")
        self.add_node(u)
        self.add_node(v)
        self.weak[u] |= 1 << v
        self.weak[v] |= 1 << u
        if strong:
            self.strong[u] |= 1 << v
            self.strong[v] |= 1 << u
        else:
            self.strong[u] &= ~(1 << v)
            self.strong[v] &= ~(1 << u)

    def remove_link(self, u: int, v: int) -> None:
        for a, b in ((u, v), (v, u)):
            self.weak[a] &= ~(1 << b)
            self.strong[a] &= ~(1 << b)

    def has_node(self, n: int) -> bool:
        return 0 <= n < self.max_nodes and bool((self.present >> n) & 1)

    def nodes(self) -> list[int]:
        return list(bits(self.present))

    def has_strong(self, u: int, v: int) -> bool:
        return bool((self.strong[u] >> v) & 1)

    def has_weak(self, u: int, v: int) -> bool:
        return bool((self.weak[u] >> v) & 1)

    def strong_neighbors(self, u: int) -> list[int]:
        return list(bits(self.strong[u]))

    def weak_neighbors(self, u: int) -> list[int]:
        return list(bits(self.weak[u]))

    def strong_links(self) -> set[Link]:
        return {(u, v) for u in range(self.max_nodes) for v in bits(self.strong[u] >> (u + 1) << (u + 1))}

    def weak_links(self) -> set[Link]:
        return {(u, v) for u in range(self.max_nodes) for v in bits(self.weak[u] >> (u + 1) << (u + 1))}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DualGraph):
            return NotImplemented
        return (self.max_nodes == other.max_nodes and self.present == other.present
                and self.strong == other.strong and self.weak == other.weak)

    def diff(self, new: DualGraph) -> LinkDelta:
        old_s, old_w = self.strong_links(), self.weak_links()
        new_s, new_w = new.strong_links(), new.weak_links()
        return LinkDelta(frozenset(new_w - old_w), frozenset(old_w - new_w),
                         frozenset(new_s - old_s), frozenset(old_s - new_s))

    def check(self) -> None:
        for u in range(self.max_nodes):
            assert not (self.strong[u] & ~self.weak[u]), f"strong not within weak at {u}"
            assert not ((self.weak[u] >> u) & 1), f"self loop at {u}"
            for v in bits(self.weak[u]):
                assert (self.weak[v] >> u) & 1, f"asymmetric weak link {u}-{v}"
            for v in bits(self.strong[u]):
                assert (self.strong[v] >> u) & 1, f"asymmetric strong link {u}-{v}"


class MasterTopology:
    """Master-side view: latest record per node and the derived dual graph.

    A link is present while both endpoints are present and at least one of
    them reports it, so a link disappears only when no current record
    supports it.
    """

    def __init__(self, config: NetworkConfig) -> None:
        self.config = config
        self.reports: dict[int, TopologyRecord] = {}
        self.staleness: dict[int, int] = {}
        self.heard_this_round: set[int] = set()
        self.graph = DualGraph(config.max_nodes)
        self.graph.add_node(MASTER)

    def _derive(self) -> DualGraph:
        g = DualGraph(self.config.max_nodes)
        g.add_node(MASTER)
        for n in self.reports:
            g.add_node(n)
        present = g.present
        for n, rec in self.reports.items():
            for m in bits(rec.weak_mask & present):
                g.weak[n] |= 1 << m
                g.weak[m] |= 1 << n
        for n, rec in self.reports.items():
            for m in bits(rec.strong_mask & present):
                g.strong[n] |= 1 << m
                g.strong[m] |= 1 << n
        return g

    def ingest(self, frame: UplinkFrame) -> LinkDelta:
        try:
            for rec in frame.records():
                rec.check(self.config.max_nodes)
        except FrameError as exc:
            logger.warning("dropping uplink frame from node %s: %s", frame.sender.node, exc)
            return LinkDelta()
        return self.ingest_records(frame.records())

    def ingest_records(self, records: Iterable[TopologyRecord]) -> LinkDelta:
        changed = False
        for rec in records:
            self.heard_this_round.add(rec.node)
            self.staleness[rec.node] = 0
            if self.reports.get(rec.node) != rec:
                self.reports[rec.node] = rec
                changed = True
        if not changed:
            return LinkDelta()
        new = self._derive()
        delta = self.graph.diff(new)
        self.graph = new
        return delta

    def end_round(self) -> tuple[list[int], LinkDelta]:
        """Close one round-robin cycle: age silent nodes and drop the stale ones."""
        removed = []
        for n in sorted(self.reports):
            if n == MASTER:
                continue
            if n in self.heard_this_round:
                self.staleness[n] = 0
            else:
                self.staleness[n] = self.staleness.get(n, 0) + 1
            if self.staleness[n] >= self.config.topology_timeout_rounds:
                removed.append(n)
        self.heard_this_round.clear()
        if not removed:
            return [], LinkDelta()
        for n in removed:
            del self.reports[n]
            del self.staleness[n]
        new = self._derive()
        delta = self.graph.diff(new)
        self.graph = new
        return removed, delta


def master_ingest(master: MasterTopology, frame: UplinkFrame) -> tuple[DualGraph, LinkDelta]:
    delta = master.ingest(frame)
    return master.graph, delta


def expire_stale(master: MasterTopology) -> tuple[DualGraph, list[int]]:
    removed, _ = master.end_round()
    return master.graph, removed
