"""Scripted scenarios: node failure on a 14-node building floor and a redundancy diamond."""
from __future__ import annotations

from ..core import NetworkConfig
from ..scheduler import StreamParams
from ..simulator import LinkSpec, Scenario, ScenarioEvent, StreamRequest

STRONG_RSSI = -60
WEAK_RSSI = -88

# master 0 in the middle of a corridor; node 13 reaches it through 5 or 6,
# or the long way round through 12, 11, 9 and 7
FLOOR_STRONG = ((0, 1), (0, 2), (0, 5), (0, 6), (0, 7), (1, 2), (1, 3), (2, 4), (3, 4), (5, 6),
                (5, 13), (6, 13), (7, 8), (7, 9), (8, 9), (8, 10), (9, 10), (9, 11), (10, 11),
                (11, 12), (12, 13))
# links good enough to interfere but too weak to route over
FLOOR_WEAK = ((2, 6), (3, 5), (4, 7))

FAILED_NODE = 5


def floor_links() -> tuple[LinkSpec, ...]:
    return (tuple(LinkSpec(u, v, STRONG_RSSI) for u, v in FLOOR_STRONG)
            + tuple(LinkSpec(u, v, WEAK_RSSI) for u, v in FLOOR_WEAK))


def node_failure_scenario(seed: int = 1, fail_at_ms: float = 150_000, duration_ms: float = 300_000) -> Scenario:
    """Every node streams to the master with triple spatial redundancy; node 5 dies mid-run."""
    # one extra hop of slack lets the disjoint path take the long way round
    cfg = NetworkConfig(dfs_depth_margin=3)
    params = StreamParams(10, redundancy=3, spatial=True)
    streams = tuple(StreamRequest(n, 0, 1, params) for n in range(1, 14))
    events = (ScenarioEvent(fail_at_ms, "node_down", (FAILED_NODE,)),)
    return Scenario(cfg, tuple(range(14)), floor_links(), events, streams, seed=seed, duration_ms=duration_ms)


def diamond_scenario(redundancy: int, seed: int = 0, per: float = 0.02, duration_ms: float = 60_000,
                     spatial: bool = False) -> Scenario:
    """Stream 3 -> 0 over two 2-hop paths (via 1 or 2), every link losing ``per`` of its frames."""
    links = tuple(LinkSpec(u, v, STRONG_RSSI, per) for u, v in ((0, 1), (0, 2), (1, 3), (2, 3)))
    stream = StreamRequest(3, 0, 1, StreamParams(1, redundancy=redundancy, spatial=spatial))
    return Scenario(NetworkConfig(), (0, 1, 2, 3), links, (), (stream,), seed=seed,
                    duration_ms=duration_ms, log_data=False)
