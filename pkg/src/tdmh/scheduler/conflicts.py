"""Conflict predicates on the compact (offset, period) form."""
from __future__ import annotations

from math import gcd

from ..topology import DualGraph
from .model import ScheduleElement


def conflict_in_time(a: int, p: int, b: int, q: int) -> bool:
    """Whether slot progressions a + i*p and b + j*q ever share a slot.

    By the Chinese remainder theorem the two progressions meet iff
    gcd(p, q) divides a - b.
    """
    return (a - b) % gcd(p, q) == 0


def conflicts_in_slot(e1: ScheduleElement, e2: ScheduleElement, weak: DualGraph) -> bool:
    """Whether two transmissions sharing a slot would interfere."""
    if e1.tx in (e2.tx, e2.rx) or e1.rx in (e2.tx, e2.rx):
        return True
    return weak.has_weak(e2.tx, e1.rx) or weak.has_weak(e1.tx, e2.rx)


def conflicts(e1: ScheduleElement, e2: ScheduleElement, weak: DualGraph) -> bool:
    return conflict_in_time(e1.offset, e1.period, e2.offset, e2.period) and conflicts_in_slot(e1, e2, weak)
