"""Hexagonal test networks, where interior nodes have six neighbors."""
from __future__ import annotations

import random
import re
from collections import deque
from dataclasses import dataclass

from ..simulator import LinkSpec
from ..topology import DualGraph

AXIAL_DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


@dataclass(frozen=True)
class Network:
    nodes: tuple[int, ...]
    links: tuple[LinkSpec, ...]

    def graph(self, max_nodes: int, strong_threshold: int = -80) -> DualGraph:
        return DualGraph.from_links(max_nodes, self.nodes,
                                    ((l.u, l.v, l.rssi >= strong_threshold) for l in self.links))

    def diameter(self) -> int:
        adj = {n: set() for n in self.nodes}
        for l in self.links:
            adj[l.u].add(l.v)
            adj[l.v].add(l.u)
        return max(max(_bfs(adj, n).values()) for n in self.nodes)


def _bfs(adj: dict[int, set[int]], root: int) -> dict[int, int]:
    dist = {root: 0}
    q = deque([root])
    while q:
        u = q.popleft()
        for v in sorted(adj[u]):
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _number(cells: list[tuple[int, int]], master: tuple[int, int], rssi: int, spread: int = 0,
            seed: int = 0) -> Network:
    """Assign ids by hop distance from the master cell (master gets 0).

    With ``spread`` > 0 each link's RSSI is lowered by a seeded amount in
    [0, spread], so forwardee choice does not collapse onto lowest ids.
    """
    cellset = set(cells)
    adj = {c: {(c[0] + dq, c[1] + dr) for dq, dr in AXIAL_DIRS} & cellset for c in cells}
    dist = {master: 0}
    q = deque([master])
    while q:
        c = q.popleft()
        for n in sorted(adj[c]):
            if n not in dist:
                dist[n] = dist[c] + 1
                q.append(n)
    order = sorted(cells, key=lambda c: (dist[c], c[1], c[0]))
    ids = {c: i for i, c in enumerate(order)}
    links = sorted({(min(ids[a], ids[b]), max(ids[a], ids[b])) for a in cells for b in adj[a]})
    rng = random.Random(seed)
    specs = tuple(LinkSpec(u, v, rssi - (rng.randint(0, spread) if spread else 0)) for u, v in links)
    return Network(tuple(range(len(order))), specs)


def hex_disc(radius: int, rssi: int = -60) -> Network:
    """Hexagon of the given radius around the master: 1 + 3r(r+1) nodes, diameter 2r."""
    cells = [(q, r) for q in range(-radius, radius + 1) for r in range(-radius, radius + 1)
             if abs(q + r) <= radius]
    return _number(cells, (0, 0), rssi)


def hex_grid(rows: int, cols: int, rssi: int = -60, spread: int = 0, seed: int = 0) -> Network:
    """Roughly rectangular patch of a hexagonal lattice with the master at its center."""
    cells = [(c - r // 2, r) for r in range(rows) for c in range(cols)]
    mid_r, mid_c = (rows - 1) // 2, (cols - 1) // 2
    return _number(cells, (mid_c - mid_r // 2, mid_r), rssi, spread, seed)


def hex_nodes(n: int, rssi: int = -60, spread: int = 0, seed: int = 0) -> Network:
    """``n`` lattice cells filled ring by ring around the master, so hop counts stay balanced."""
    radius = 0
    while 1 + 3 * radius * (radius + 1) < n:
        radius += 1
    cells = [(q, r) for q in range(-radius, radius + 1) for r in range(-radius, radius + 1)
             if abs(q + r) <= radius]
    cells.sort(key=lambda c: (max(abs(c[0]), abs(c[1]), abs(c[0] + c[1])), c[1], c[0]))
    return _number(cells[:n], (0, 0), rssi, spread, seed)


def preset(name: str) -> Network:
    """``comparison37`` or ``hex<rows>x<cols>``."""
    if name == "comparison37":
        return hex_disc(3)
    m = re.fullmatch(r"hex(\d+)x(\d+)", name)
    if m:
        return hex_grid(int(m.group(1)), int(m.group(2)))
    raise ValueError(f"unknown network preset {name!r}")
