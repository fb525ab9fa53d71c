"""Parameter sweeps: network formation time and average current."""
from __future__ import annotations

from dataclasses import dataclass

from ..core import NetworkConfig
from ..scheduler import SLEEP, Action, ActionKind, ExpandedSchedule
from ..simulator import NonConvergence, PowerModel, Scenario, TopologyActivity, estimate_power, measure_formation
from ..topology import refresh_timeout_rounds
from .networks import hex_nodes

DEFAULT_FORMATION_GRID = ((16, 16, 1), (32, 32, 1), (64, 64, 1), (128, 128, 1), (128, 128, 4))
# dB of per-link RSSI variation in generated networks, so forwardee ties are rare
RSSI_SPREAD = 10
# per-frame uplink control when a tile carries several frames: 125 bytes at 250 kbit/s plus guard,
# which puts 4 frames per tile at a 34% control share
MULTI_FRAME_UPLINK = 10_000


@dataclass(frozen=True)
class FormationPoint:
    max_nodes: int
    nodes: int
    uplink_frames: int
    timeout_rounds: int
    formation_time: float | None


def formation_config(max_nodes: int, nodes: int, frames: int) -> NetworkConfig:
    extra = {"uplink_control_duration": MULTI_FRAME_UPLINK} if frames > 1 else {}
    base = NetworkConfig(max_nodes=max_nodes, uplink_frames_per_tile=frames, **extra)
    return NetworkConfig(max_nodes=max_nodes, uplink_frames_per_tile=frames,
                         topology_timeout_rounds=refresh_timeout_rounds(base, nodes), **extra)


def formation_time(max_nodes: int, nodes: int, frames: int, seed: int = 0,
                   limit_s: float = 3600.0) -> FormationPoint:
    cfg = formation_config(max_nodes, nodes, frames)
    net = hex_nodes(nodes, spread=RSSI_SPREAD, seed=seed)
    sc = Scenario(cfg, net.nodes, net.links, seed=seed, duration_ms=limit_s * 1000, log_data=False)
    try:
        t = measure_formation(sc)
    except NonConvergence:
        t = None
    return FormationPoint(max_nodes, nodes, frames, cfg.topology_timeout_rounds, t)


def formation_sweep(grid=DEFAULT_FORMATION_GRID, seed: int = 0) -> list[FormationPoint]:
    return [formation_time(m, n, f, seed) for m, n, f in sorted(grid)]


@dataclass(frozen=True)
class PowerPoint:
    utilization: float
    connectivity: float
    current_ma: float


def synthetic_schedule(config: NetworkConfig, active_slots: int, superframe_tiles: int | None = None) -> ExpandedSchedule:
    """A node transmitting in its first ``active_slots`` data slots."""
    tiles = superframe_tiles or config.superframe_tiles
    n = config.slots_in_tiles(tiles)
    if not 0 <= active_slots <= n:
        raise ValueError(f"active slots must be within 0..{n}")
    tx = Action(ActionKind.TRANSMIT_FROM_SESSION)
    return ExpandedSchedule(0, 0, n, [tx] * active_slots + [SLEEP] * (n - active_slots))


def power_sweep(utilizations=(0.0, 0.25, 0.5, 0.75, 1.0), connectivities=(0.0, 0.1, 0.2, 0.4),
                config: NetworkConfig | None = None, model: PowerModel | None = None) -> list[PowerPoint]:
    """Average current over utilization (share of data slots used) and connectivity (share of
    uplink frames overheard)."""
    config = config or NetworkConfig()
    model = model or PowerModel()
    tiles = config.superframe_tiles * 10
    slots = config.slots_in_tiles(tiles)
    rows = []
    for u in sorted(utilizations):
        sched = synthetic_schedule(config, round(u * slots), tiles)
        for c in sorted(connectivities):
            activity = TopologyActivity(1.0, 1 / config.max_nodes, c)
            rows.append(PowerPoint(u, c, estimate_power(sched, activity, model, config)))
    return rows
