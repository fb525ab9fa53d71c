"""Streams, schedule elements and the compact schedule wire format."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

from ..core import NetworkConfig, PeriodClass

SCHEDULE_HEADER = struct.Struct("<IHH")
ELEMENT = struct.Struct("<BBBBBBHH")


class Direction(str, Enum):
    FORWARD = "forward"  # src -> dst
    REVERSE = "reverse"  # dst -> src
    BIDIRECTIONAL = "bidirectional"

    @property
    def code(self) -> int:
        return ("forward", "reverse", "bidirectional").index(self.value)

    @classmethod
    def from_code(cls, code: int) -> Direction:
        return cls(("forward", "reverse", "bidirectional")[code])


class StreamState(str, Enum):
    REQUESTED = "requested"
    ESTABLISHED = "established"
    REJECTED = "rejected"
    CLOSED = "closed"


@dataclass(frozen=True, order=True)
class StreamId:
    src: int
    dst: int
    port: int

    def __str__(self) -> str:
        return f"{self.src}->{self.dst}:{self.port}"


@dataclass(frozen=True)
class StreamParams:
    period: PeriodClass
    direction: Direction = Direction.FORWARD
    redundancy: int = 1
    spatial: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.period, int):
            object.__setattr__(self, "period", PeriodClass(self.period))
        object.__setattr__(self, "direction", Direction(self.direction))
        if not 1 <= self.redundancy <= 3:
            raise ValueError(f"redundancy must be 1..3, got {self.redundancy}")
        if self.spatial and self.redundancy < 2:
            raise ValueError("spatial redundancy needs redundancy >= 2")

    @property
    def flags(self) -> int:
        """Direction, redundancy and spatial bits as carried in an SME."""
        return self.direction.code | (self.redundancy << 2) | (int(self.spatial) << 4)

    @classmethod
    def from_flags(cls, period: int, flags: int) -> StreamParams:
        return cls(PeriodClass(period), Direction.from_code(flags & 3), (flags >> 2) & 3, bool(flags >> 4 & 1))


@dataclass
class Stream:
    id: StreamId
    params: StreamParams
    state: StreamState = StreamState.REQUESTED


@dataclass(frozen=True, order=True)
class ScheduleElement:
    """One periodic transmission ``tx -> rx`` at data slot ``offset`` every ``period`` slots.

    ``reverse`` marks the dst->src chain of a stream and ``copy`` the
    redundant copy, so a relay can pair the receive and forward slots that
    share a buffer.
    """

    stream: StreamId
    tx: int
    rx: int
    offset: int
    period: int
    reverse: bool = False
    copy: int = 0

    @property
    def chain(self) -> tuple[StreamId, bool, int]:
        return (self.stream, self.reverse, self.copy)

    @property
    def source(self) -> int:
        return self.stream.dst if self.reverse else self.stream.src

    @property
    def sink(self) -> int:
        return self.stream.src if self.reverse else self.stream.dst


@dataclass(frozen=True)
class CompactSchedule:
    schedule_id: int
    superframe_tiles: int
    superframe_slots: int
    elements: tuple[ScheduleElement, ...] = field(default=())

    def streams(self) -> set[StreamId]:
        return {e.stream for e in self.elements}

    def to_bytes(self) -> bytes:
        out = bytearray(SCHEDULE_HEADER.pack(self.schedule_id, self.superframe_tiles, len(self.elements)))
        for e in self.elements:
            out += encode_element(e)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, config: NetworkConfig) -> CompactSchedule:
        if len(data) < SCHEDULE_HEADER.size:
            raise ValueError("truncated schedule header")
        sid, tiles, count = SCHEDULE_HEADER.unpack_from(data)
        expected = SCHEDULE_HEADER.size + count * ELEMENT.size
        if len(data) != expected:
            raise ValueError(f"schedule is {len(data)} bytes, header implies {expected}")
        elements = tuple(decode_element(data, SCHEDULE_HEADER.size + i * ELEMENT.size) for i in range(count))
        return cls(sid, tiles, config.slots_in_tiles(tiles), elements)


def encode_element(e: ScheduleElement) -> bytes:
    flags = int(e.reverse) | (e.copy << 1)
    return ELEMENT.pack(e.stream.src, e.stream.dst, e.stream.port, flags, e.tx, e.rx, e.offset, e.period)


def decode_element(data: bytes, pos: int = 0) -> ScheduleElement:
    src, dst, port, flags, tx, rx, offset, period = ELEMENT.unpack_from(data, pos)
    return ScheduleElement(StreamId(src, dst, port), tx, rx, offset, period, bool(flags & 1), (flags >> 1) & 3)
