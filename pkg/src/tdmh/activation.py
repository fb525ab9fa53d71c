"""Reschedule triggers: bloom-filter sets of used links and spatial-reuse conflict links."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from math import gcd

from .core import NetworkConfig
from .scheduler.model import CompactSchedule
from .topology import DualGraph, Link, LinkDelta, canonical

DEFAULT_FP_RATE = 0.01
AVERAGE_DEGREE = 6


class BloomFilter:
    """Bloom filter over undirected links, canonicalized low id first.

    Index i of an element is h1 + i*h2 mod m with h1, h2 taken from one
    keyed BLAKE2b digest (double hashing).
    """

    def __init__(self, m: int, k: int, seed: int = 0) -> None:
        if m < 1 or k < 1:
            raise ValueError("bloom filter needs m >= 1 bits and k >= 1 hashes")
        self.m = m
        self.k = k
        self.seed = seed
        self.count = 0
        self._bits = bytearray((m + 7) // 8)
        self._key = seed.to_bytes(8, "little")

    @classmethod
    def for_capacity(cls, n: int, fp_rate: float = DEFAULT_FP_RATE, seed: int = 0) -> BloomFilter:
        n = max(1, n)
        m = math.ceil(-n * math.log(fp_rate) / math.log(2) ** 2)
        k = max(1, round(m / n * math.log(2)))
        return cls(m, k, seed)

    def _indexes(self, link: Link):
        u, v = canonical(*link)
        d = hashlib.blake2b(u.to_bytes(4, "little") + v.to_bytes(4, "little"),
                            digest_size=16, key=self._key).digest()
        h1 = int.from_bytes(d[:8], "little")
        h2 = int.from_bytes(d[8:], "little") | 1
        for i in range(self.k):
            yield (h1 + i * h2) % self.m

    def add(self, link: Link) -> None:
        for i in self._indexes(link):
            self._bits[i >> 3] |= 1 << (i & 7)
        self.count += 1

    def __contains__(self, link: Link) -> bool:
        return all(self._bits[i >> 3] >> (i & 7) & 1 for i in self._indexes(link))

    def false_positive_bound(self, n: int | None = None) -> float:
        n = self.count if n is None else n
        return (1 - math.exp(-self.k * n / self.m)) ** self.k


@dataclass
class ActivationSets:
    used_links: BloomFilter
    conflict_links: BloomFilter


def conflict_link_candidates(compact: CompactSchedule, graph: DualGraph) -> set[Link]:
    """Absent links whose appearance would make two co-slotted transmissions interfere."""
    out = set()
    elems = compact.elements
    for i, a in enumerate(elems):
        for b in elems[i + 1:]:
            if (a.offset - b.offset) % gcd(a.period, b.period):
                continue
            for u, v in ((b.tx, a.rx), (a.tx, b.rx)):
                if u != v and not graph.has_weak(u, v):
                    out.add(canonical(u, v))
    return out


def build_activation_sets(compact: CompactSchedule, graph: DualGraph,
                          config: NetworkConfig | None = None, seed: int = 0) -> ActivationSets:
    declared = (config.max_nodes if config else graph.max_nodes) * AVERAGE_DEGREE
    used = {canonical(e.tx, e.rx) for e in compact.elements}
    conflict = conflict_link_candidates(compact, graph)
    used_f = BloomFilter.for_capacity(max(declared, len(used)), seed=seed)
    conflict_f = BloomFilter.for_capacity(max(declared, len(conflict)), seed=seed + 1)
    for link in sorted(used):
        used_f.add(link)
    for link in sorted(conflict):
        conflict_f.add(link)
    return ActivationSets(used_f, conflict_f)


USED_LINK_LOST = "used-link-lost"
CONFLICT_LINK_APPEARED = "conflict-link-appeared"
SME_RECEIVED = "sme"


@dataclass(frozen=True)
class RescheduleDecision:
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.reasons)


def should_reschedule(sets: ActivationSets | None, delta: LinkDelta, pending_smes: int = 0) -> RescheduleDecision:
    reasons = []
    if sets is not None:
        if any(link in sets.used_links for link in delta.strong_removed):
            reasons.append(USED_LINK_LOST)
        if any(link in sets.conflict_links for link in delta.weak_added):
            reasons.append(CONFLICT_LINK_APPEARED)
    if pending_smes > 0:
        reasons.append(SME_RECEIVED)
    return RescheduleDecision(tuple(reasons))
