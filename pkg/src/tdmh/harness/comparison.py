"""Admission comparison against a baseline that floods every packet network-wide."""
from __future__ import annotations

import dataclasses
import random
import statistics
from collections import deque
from dataclasses import dataclass, field

from ..core import NetworkConfig
from ..scheduler import Scheduler, Stream, StreamId, StreamParams
from .networks import Network, preset


@dataclass(frozen=True)
class WcpsBaseline:
    """Flooding baseline: each packet occupies ``max_hops`` consecutive slots anywhere in the network."""

    max_hops: int
    slot_duration: int = 2_000
    deadline: int = 50_000
    message_size: int = 21
    # extra slots per flood, for the real-world oversizing caveat
    oversize: int = 0

    def __post_init__(self) -> None:
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")
        if self.slot_duration <= 0 or self.deadline <= 0 or self.oversize < 0:
            raise ValueError("slot duration and deadline must be positive")


def wcps_admission(base: WcpsBaseline, hops: int | None = None) -> int:
    """Streams admissible within the deadline; ``hops`` (endpoint distance) is deliberately ignored."""
    slots = base.deadline // base.slot_duration
    return slots // (base.max_hops + base.oversize)


def comparison_config(max_nodes: int = 64) -> NetworkConfig:
    """50 ms tiles of 2 ms data slots, control share kept as in the default layout."""
    return NetworkConfig(max_nodes=max_nodes, tile_duration=50_000, data_slot_duration=2_000,
                         downlink_control_duration=11_000, uplink_control_duration=11_000)


@dataclass(frozen=True)
class MonteCarloSpec:
    network: str = "comparison37"
    hops: int = 1
    trials: int = 200
    deadline: int = 50_000
    slot_duration: int = 2_000
    redundancy: int = 1
    seed: int = 0
    config: NetworkConfig = field(default_factory=comparison_config)

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.hops < 1:
            raise ValueError("hop distance must be >= 1")
        if self.config.data_slot_duration != self.slot_duration:
            raise ValueError("slot duration disagrees with the TDMH configuration")

    @property
    def period(self) -> int:
        """Largest stream period (tiles) whose one-period latency still meets the deadline."""
        return max(1, self.deadline // self.config.tile_duration)


@dataclass(frozen=True)
class AdmissionResult:
    hops: int
    counts: tuple[int, ...]

    @property
    def min(self) -> int:
        return min(self.counts)

    @property
    def max(self) -> int:
        return max(self.counts)

    @property
    def median(self) -> float:
        return statistics.median(self.counts)


def pairs_at_distance(net: Network, hops: int) -> list[tuple[int, int]]:
    adj: dict[int, list[int]] = {n: [] for n in net.nodes}
    for l in net.links:
        adj[l.u].append(l.v)
        adj[l.v].append(l.u)
    out = []
    for src in net.nodes:
        dist = {src: 0}
        q = deque([src])
        while q:
            u = q.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    q.append(v)
        out.extend((src, dst) for dst, d in sorted(dist.items()) if d == hops)
    return out


def tdmh_admission_mc(spec: MonteCarloSpec, net: Network | None = None) -> AdmissionResult:
    """Per trial, admit random streams at the given hop distance until the first rejection."""
    net = net or preset(spec.network)
    cfg = spec.config
    if cfg.max_nodes < len(net.nodes):
        cfg = NetworkConfig(**{**_init_fields(cfg), "max_nodes": len(net.nodes)})
    pairs = pairs_at_distance(net, spec.hops)
    if not pairs:
        raise ValueError(f"no node pair at hop distance {spec.hops}")
    graph = net.graph(cfg.max_nodes, cfg.rssi_strong_threshold)
    params = StreamParams(spec.period, redundancy=spec.redundancy)
    counts = []
    for trial in range(spec.trials):
        rng = random.Random(f"{spec.seed}:{spec.hops}:{trial}")
        sched = Scheduler(graph, cfg)
        admitted = 0
        while True:
            src, dst = rng.choice(pairs)
            # a port per admission keeps repeated endpoint pairs distinct
            stream = Stream(StreamId(src, dst, admitted % 256), params)
            if sched.try_add(stream) is not None:
                break
            admitted += 1
        counts.append(admitted)
    return AdmissionResult(spec.hops, tuple(counts))


def _init_fields(cfg: NetworkConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.init}


@dataclass(frozen=True)
class ComparisonRow:
    hops: int
    wcps: int
    tdmh_min: int
    tdmh_median: float
    tdmh_max: int


def compare(network: str = "comparison37", trials: int = 200, seed: int = 0,
            deadline: int = 50_000, slot_duration: int = 2_000) -> list[ComparisonRow]:
    net = preset(network)
    diameter = net.diameter()
    base = WcpsBaseline(diameter, slot_duration, deadline)
    rows = []
    for d in range(1, diameter + 1):
        spec = MonteCarloSpec(network, d, trials, deadline, slot_duration, seed=seed)
        res = tdmh_admission_mc(spec, net)
        rows.append(ComparisonRow(d, wcps_admission(base, d), res.min, res.median, res.max))
    return rows
