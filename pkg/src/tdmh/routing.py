"""Master-side path computation over the strong-link graph."""
from __future__ import annotations

from collections import deque

from .topology import DualGraph


class Unroutable(Exception):
    def __init__(self, src: int, dst: int) -> None:
        super().__init__(f"no strong path from {src} to {dst}")
        self.src = src
        self.dst = dst


Path = tuple[int, ...]


def shortest_path(graph: DualGraph, src: int, dst: int) -> Path:
    """Minimum-hop path from ``src`` to ``dst`` over strong links.

    Neighbors are expanded in increasing id order and a node keeps the first
    predecessor that reached it, so among equal-length paths the one through
    lower ids wins.
    """
    if src == dst:
        raise ValueError("source and destination coincide")
    if not (graph.has_node(src) and graph.has_node(dst)):
        raise Unroutable(src, dst)
    parent = {src: src}
    frontier = deque([src])
    while frontier:
        u = frontier.popleft()
        if u == dst:
            break
        for v in graph.strong_neighbors(u):
            if v not in parent:
                parent[v] = u
                frontier.append(v)
    if dst not in parent:
        raise Unroutable(src, dst)
    path = [dst]
    while path[-1] != src:
        path.append(parent[path[-1]])
    return tuple(reversed(path))


def secondary_path(graph: DualGraph, src: int, dst: int, primary: Path, margin: int) -> Path | None:
    """Depth-limited DFS for a path sharing no intermediate node with ``primary``.

    The depth limit is ``len(primary) + margin`` hops, where the length of a
    path is its hop count. Returns the first path found expanding lowest ids
    first, or None.
    """
    limit = len(primary) - 1 + margin
    banned = set(primary[1:-1])
    # with a one-hop primary the only thing to avoid is that same link
    skip_direct = len(primary) == 2
    # hop distance to dst avoiding banned nodes; a lower bound used for pruning only
    dist = {dst: 0}
    frontier = deque([dst])
    while frontier:
        u = frontier.popleft()
        for v in graph.strong_neighbors(u):
            if v not in dist and v not in banned:
                dist[v] = dist[u] + 1
                frontier.append(v)
    path = [src]
    on_path = {src}

    def dfs(u: int) -> bool:
        if u == dst:
            return True
        budget = limit - (len(path) - 1)
        for v in graph.strong_neighbors(u):
            if v in on_path or v in banned or (skip_direct and u == src and v == dst):
                continue
            if dist.get(v, limit + 1) > budget - 1:
                continue
            path.append(v)
            on_path.add(v)
            if dfs(v):
                return True
            path.pop()
            on_path.discard(v)
        return False

    return tuple(path) if dfs(src) else None
