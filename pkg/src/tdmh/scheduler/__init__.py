from .conflicts import conflict_in_time, conflicts, conflicts_in_slot
from .expansion import (SLEEP, Action, ActionKind, ExpandedSchedule, MalformedSchedule, expand,
                        find_violations, validate)
from .greedy import CAPACITY, NO_PATH, Chain, Rejection, Scheduler, ScheduleResult, plan_chains, schedule_streams
from .model import (CompactSchedule, Direction, ScheduleElement, Stream, StreamId, StreamParams,
                    StreamState)

__all__ = [
    "Action", "ActionKind", "CAPACITY", "Chain", "CompactSchedule", "Direction", "ExpandedSchedule",
    "MalformedSchedule", "NO_PATH", "Rejection", "SLEEP", "ScheduleElement", "ScheduleResult",
    "Scheduler", "Stream", "StreamId", "StreamParams", "StreamState", "conflict_in_time", "conflicts",
    "conflicts_in_slot", "expand", "find_violations", "plan_chains", "schedule_streams", "validate",
]
