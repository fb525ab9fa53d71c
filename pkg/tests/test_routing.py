import random

import pytest

from tdmh.harness.replays import FAILED_NODE, FLOOR_STRONG, FLOOR_WEAK
from tdmh.routing import Unroutable, secondary_path, shortest_path
from tdmh.topology import DualGraph


def graph(links, n=16, weak=()):
    return DualGraph.from_links(n, [], [(u, v, True) for u, v in links] + [(u, v, False) for u, v in weak])


def floyd_warshall(g: DualGraph):
    nodes = g.nodes()
    inf = float("inf")
    d = {(u, v): 0 if u == v else (1 if g.has_strong(u, v) else inf) for u in nodes for v in nodes}
    for k in nodes:
        for i in nodes:
            for j in nodes:
                if d[i, k] + d[k, j] < d[i, j]:
                    d[i, j] = d[i, k] + d[k, j]
    return d


def random_graph(rng, n=20):
    links = [(u, v, rng.random() < 0.7) for u in range(n) for v in range(u + 1, n) if rng.random() < 0.15]
    return DualGraph.from_links(n, range(n), links)


def test_line_graph():
    assert shortest_path(graph([(0, 1), (1, 2)]), 2, 0) == (2, 1, 0)


def test_direct_link_wins():
    g = graph([(0, 3), (0, 1), (1, 2), (2, 3)])
    assert shortest_path(g, 3, 0) == (3, 0)


def test_tie_prefers_lower_ids():
    g = graph([(0, 4), (0, 2), (4, 5), (2, 5)])
    assert shortest_path(g, 5, 0) == (5, 2, 0)


def test_weak_links_are_not_routable():
    g = graph([(0, 1)], weak=[(1, 2)])
    with pytest.raises(Unroutable):
        shortest_path(g, 2, 0)


def test_same_endpoint_is_an_error():
    with pytest.raises(ValueError):
        shortest_path(graph([(0, 1)]), 1, 1)


def test_shortest_path_matches_floyd_warshall():
    rng = random.Random(11)
    for _ in range(40):
        g = random_graph(rng)
        d = floyd_warshall(g)
        for src in range(20):
            for dst in range(20):
                if src == dst:
                    continue
                if d[src, dst] == float("inf"):
                    with pytest.raises(Unroutable):
                        shortest_path(g, src, dst)
                    continue
                p = shortest_path(g, src, dst)
                assert p[0] == src and p[-1] == dst
                assert len(p) - 1 == d[src, dst]
                assert all(g.has_strong(a, b) for a, b in zip(p, p[1:]))


def test_diamond_secondary():
    g = graph([(0, 1), (1, 3), (0, 2), (2, 3)])
    assert secondary_path(g, 0, 3, (0, 1, 3), 2) == (0, 2, 3)


def test_line_has_no_secondary():
    g = graph([(0, 1), (1, 2)])
    assert secondary_path(g, 2, 0, (2, 1, 0), 5) is None


def test_secondary_respects_depth_limit():
    g = graph([(0, 1), (1, 3), (0, 2), (2, 4), (4, 5), (5, 3)])
    assert secondary_path(g, 3, 0, (3, 1, 0), 1) is None
    assert secondary_path(g, 3, 0, (3, 1, 0), 2) == (3, 5, 4, 2, 0)


def test_failure_reroute_on_floor():
    g = graph(FLOOR_STRONG, weak=FLOOR_WEAK)
    g.remove_node(FAILED_NODE)
    primary = shortest_path(g, 13, 0)
    assert primary == (13, 6, 0)
    assert secondary_path(g, 13, 0, primary, 3) == (13, 12, 11, 9, 7, 0)
    assert secondary_path(g, 13, 0, primary, 2) is None


def test_secondary_is_disjoint_and_bounded():
    rng = random.Random(5)
    for _ in range(60):
        g = random_graph(rng)
        src, dst = rng.sample(range(20), 2)
        try:
            primary = shortest_path(g, src, dst)
        except Unroutable:
            continue
        margin = rng.randint(0, 3)
        sec = secondary_path(g, src, dst, primary, margin)
        if sec is None:
            continue
        assert sec[0] == src and sec[-1] == dst
        assert not set(sec[1:-1]) & set(primary[1:-1])
        assert len(sec) - 1 <= len(primary) - 1 + margin
        assert len(set(sec)) == len(sec)
        assert all(g.has_strong(a, b) for a, b in zip(sec, sec[1:]))


def _any_disjoint_path(g, src, dst, banned, limit, skip_direct):
    def walk(u, seen, hops):
        if u == dst:
            return True
        if hops == limit:
            return False
        for v in g.strong_neighbors(u):
            if v in seen or v in banned or (skip_direct and u == src and v == dst):
                continue
            if walk(v, seen | {v}, hops + 1):
                return True
        return False
    return walk(src, {src}, 0)


def test_secondary_found_whenever_one_exists():
    rng = random.Random(8)
    for _ in range(300):
        g = random_graph(rng, 10)
        src, dst = rng.sample(range(10), 2)
        try:
            primary = shortest_path(g, src, dst)
        except Unroutable:
            continue
        margin = rng.randint(0, 3)
        exists = _any_disjoint_path(g, src, dst, set(primary[1:-1]), len(primary) - 1 + margin,
                                    len(primary) == 2)
        assert (secondary_path(g, src, dst, primary, margin) is not None) == exists
