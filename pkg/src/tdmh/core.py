"""Protocol constants, network configuration and TDMA time arithmetic.

All durations are integer microseconds so that slot arithmetic stays exact.

Data slots are indexed contiguously across the tiles of a data superframe:
control regions are not indexable, so index ``i`` always names a real data
slot.  Stream periods are converted to data slots using the average number
of data slots per tile over a control superframe, which is why a valid
configuration must have a data-slot count per control superframe that is a
multiple of the control superframe length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import reduce
from typing import Iterable, Iterator

MASTER = 0

# node ids travel in one byte on the wire and 0xFF encodes "no forwardee"
MAX_NODES_LIMIT = 255


class ConfigError(ValueError):
    """Raised when a NetworkConfig violates a protocol constraint."""


class TileKind(str, Enum):
    DOWNLINK = "D"
    UPLINK = "U"


@dataclass(frozen=True)
class NetworkConfig:
    """Network-wide static parameters, shared by every node."""

    max_nodes: int = 16
    tile_duration: int = 100_000
    data_slot_duration: int = 6_000
    downlink_control_duration: int = 28_000
    uplink_control_duration: int = 16_000
    uplink_frames_per_tile: int = 1
    control_superframe: tuple[TileKind, ...] = (TileKind.DOWNLINK, TileKind.UPLINK)
    rssi_strong_threshold: int = -80
    topology_timeout_rounds: int = 3
    schedule_repeats: int = 3
    dfs_depth_margin: int = 2
    max_uplink_payload: int = 125
    max_downlink_payload: int = 125
    # graph used to derive flood hop counts: "weak" or "strong"
    hop_graph: str = "weak"
    # per-hop probability that a flood is not relayed (0 = atomic floods)
    downlink_hop_loss: float = 0.0
    _prefix: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.control_superframe, str):
            try:
                kinds = tuple(TileKind(c) for c in self.control_superframe.upper())
            except ValueError:
                raise ConfigError(
                    f"control_superframe {self.control_superframe!r} may only contain 'D' and 'U'"
                ) from None
            object.__setattr__(self, "control_superframe", kinds)
        else:
            object.__setattr__(self, "control_superframe", tuple(TileKind(k) for k in self.control_superframe))
        self.validate()
        prefix = [0]
        for kind in self.control_superframe:
            prefix.append(prefix[-1] + self.data_slots_per_tile(kind))
        object.__setattr__(self, "_prefix", tuple(prefix))

    def validate(self) -> None:
        problems = []
        if not 1 <= self.max_nodes <= MAX_NODES_LIMIT:
            problems.append(f"max_nodes must be in [1, {MAX_NODES_LIMIT}], got {self.max_nodes}")
        for name in ("tile_duration", "data_slot_duration", "downlink_control_duration",
                     "uplink_control_duration"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("uplink_frames_per_tile", "topology_timeout_rounds", "schedule_repeats",
                     "max_uplink_payload", "max_downlink_payload"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.dfs_depth_margin < 0:
            problems.append(f"dfs_depth_margin must be nonnegative, got {self.dfs_depth_margin}")
        sf = self.control_superframe
        if TileKind.DOWNLINK not in sf or TileKind.UPLINK not in sf:
            problems.append("control_superframe needs at least one downlink and one uplink tile")
        if self.hop_graph not in ("weak", "strong"):
            problems.append(f"hop_graph must be 'weak' or 'strong', got {self.hop_graph!r}")
        if not 0.0 <= self.downlink_hop_loss < 1.0:
            problems.append(f"downlink_hop_loss must be in [0, 1), got {self.downlink_hop_loss}")
        if not problems:
            for kind in (TileKind.DOWNLINK, TileKind.UPLINK):
                if self.data_slots_per_tile(kind) < 1:
                    problems.append(
                        f"{kind.name.lower()} tile has no room for a data slot "
                        f"(control {self.control_region(kind)}us, tile {self.tile_duration}us)"
                    )
        if not problems:
            total = sum(self.data_slots_per_tile(k) for k in sf)
            if total % len(sf):
                problems.append(
                    f"{total} data slots per control superframe is not a multiple of its "
                    f"{len(sf)} tiles; stream periods would not map to whole data slots"
                )
        if problems:
            raise ConfigError("; ".join(problems))

    def control_region(self, kind: TileKind) -> int:
        if kind is TileKind.DOWNLINK:
            return self.downlink_control_duration
        return self.uplink_frames_per_tile * self.uplink_control_duration

    def data_slots_per_tile(self, kind: TileKind) -> int:
        return max(0, (self.tile_duration - self.control_region(kind)) // self.data_slot_duration)

    def tile_kind(self, tile: int) -> TileKind:
        return self.control_superframe[tile % len(self.control_superframe)]

    @property
    def superframe_tiles(self) -> int:
        """Length of the control superframe in tiles."""
        return len(self.control_superframe)

    @property
    def slots_per_control_superframe(self) -> int:
        return self._prefix[-1]

    @property
    def uplink_frames_per_superframe(self) -> int:
        return self.control_superframe.count(TileKind.UPLINK) * self.uplink_frames_per_tile

    def period_slots(self, multiplier: int) -> int:
        """Number of data slots spanned by a period of ``multiplier`` tiles."""
        return multiplier * self.slots_per_control_superframe // self.superframe_tiles

    def slots_in_tiles(self, tiles: int) -> int:
        q, r = divmod(tiles, self.superframe_tiles)
        return q * self.slots_per_control_superframe + self._prefix[r]

    def round_duration(self) -> float:
        """Seconds needed for every node id to get one uplink turn."""
        tiles = self.max_nodes * self.superframe_tiles / self.uplink_frames_per_superframe
        return tiles * self.tile_duration / 1e6

    def control_share(self) -> float:
        """Fraction of airtime spent in control slots over a control superframe."""
        ctrl = sum(self.control_region(k) for k in self.control_superframe)
        return ctrl / (self.tile_duration * self.superframe_tiles)


def data_slots_per_tile(config: NetworkConfig, kind: TileKind) -> int:
    return config.data_slots_per_tile(kind)


# ---------------------------------------------------------------------------
# period classes


def is_period_class(multiplier: int) -> bool:
    """True for members of 1, 2, 5, 10, 20, 50, ..."""
    if not isinstance(multiplier, int) or multiplier < 1:
        return False
    while multiplier % 10 == 0:
        multiplier //= 10
    return multiplier in (1, 2, 5)


def period_progression(limit: int) -> Iterator[int]:
    """Yield progression members not exceeding ``limit`` in increasing order."""
    decade = 1
    while decade <= limit:
        for m in (1, 2, 5):
            if m * decade <= limit:
                yield m * decade
        decade *= 10


@dataclass(frozen=True, order=True)
class PeriodClass:
    """A stream period expressed as a multiple of the tile duration."""

    multiplier: int

    def __post_init__(self) -> None:
        if not is_period_class(self.multiplier):
            raise ValueError(f"period {self.multiplier!r} is not in the 1, 2, 5, 10, ... progression")

    @property
    def index(self) -> int:
        """Position in the progression, used for the one-byte wire encoding."""
        decade, m = 0, self.multiplier
        while m % 10 == 0:
            m //= 10
            decade += 1
        return 3 * decade + (1, 2, 5).index(m)

    @classmethod
    def from_index(cls, index: int) -> PeriodClass:
        decade, r = divmod(index, 3)
        return cls((1, 2, 5)[r] * 10**decade)

    def slots(self, config: NetworkConfig) -> int:
        return config.period_slots(self.multiplier)

    def duration(self, config: NetworkConfig) -> int:
        return self.multiplier * config.tile_duration


def _multiplier(p: PeriodClass | int) -> int:
    m = p.multiplier if isinstance(p, PeriodClass) else p
    if not is_period_class(m):
        raise ValueError(f"period {m!r} is not in the 1, 2, 5, 10, ... progression")
    return m


def superframe_duration(config: NetworkConfig, periods: Iterable[PeriodClass | int]) -> int:
    """Data superframe length in tiles for a set of stream periods."""
    mults = [_multiplier(p) for p in periods]
    if not mults:
        raise ValueError("cannot size a data superframe without stream periods")
    hyper = reduce(math.lcm, mults)
    return math.lcm(hyper, config.superframe_tiles)


# ---------------------------------------------------------------------------
# data slot <-> time


@dataclass(frozen=True)
class TileLayout:
    kind: TileKind
    control_slots: int
    data_slots: int
    base: int


def tile_layouts(config: NetworkConfig, tiles: int | None = None) -> list[TileLayout]:
    """Layout of the first ``tiles`` tiles (default: one control superframe)."""
    if tiles is None:
        tiles = config.superframe_tiles
    out = []
    for t in range(tiles):
        kind = config.tile_kind(t)
        ctrl = 1 if kind is TileKind.DOWNLINK else config.uplink_frames_per_tile
        out.append(TileLayout(kind, ctrl, config.data_slots_per_tile(kind), config.slots_in_tiles(t)))
    return out


@dataclass(frozen=True)
class SlotTime:
    tile: int
    offset: int
    time: int  # microseconds from the superframe start


def slot_to_time(config: NetworkConfig, index: int, superframe_tiles: int | None = None) -> SlotTime:
    if superframe_tiles is None:
        superframe_tiles = config.superframe_tiles
    total = config.slots_in_tiles(superframe_tiles)
    if not 0 <= index < total:
        raise IndexError(f"data slot {index} outside superframe of {total} slots")
    q, r = divmod(index, config.slots_per_control_superframe)
    j = 0
    while config._prefix[j + 1] <= r:
        j += 1
    tile = q * config.superframe_tiles + j
    offset = r - config._prefix[j]
    kind = config.tile_kind(tile)
    time = tile * config.tile_duration + config.control_region(kind) + offset * config.data_slot_duration
    return SlotTime(tile, offset, time)


def time_to_slot(config: NetworkConfig, tile: int, offset: int) -> int:
    n = config.data_slots_per_tile(config.tile_kind(tile))
    if tile < 0 or not 0 <= offset < n:
        raise IndexError(f"tile {tile} has no data slot {offset}")
    return config.slots_in_tiles(tile) + offset
