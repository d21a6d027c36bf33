# -*- coding: utf-8 -*-

"""
SimClock
********

This module contains the deterministic discrete-event engine driving every simulation:
a heap of events ordered by ``(time, seq)``, a virtual clock in integer nanoseconds and
an optional tab-separated trace of every processed event.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import heapq
import logging

from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, TextIO, Tuple

from sbsim.exceptions import SimulationError

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

class EventKind(Enum):
    """Every kind of event the simulator processes."""
    REQUEST_ARRIVAL = "RequestArrival"
    SCHEDULE_TICK = "ScheduleTick"
    PASS_START = "PassStart"
    END_FORWARD = "EndForward"
    WATCHDOG_EXPIRY = "WatchdogExpiry"
    TOPOLOGY_CHANGE = "TopologyChange"
    DECODE_TICK = "DecodeTick"
    DECODE_STEP = "DecodeStep"
    INSTANCE_FAILURE = "InstanceFailure"


@dataclass
class Event:
    """
    A scheduled event. ``seq`` is assigned by :meth:`SimClock.schedule` and breaks ties between
    events sharing the same time.
    """
    time: int
    kind: EventKind
    payload: Any = None
    seq: int = -1


def describe(payload: Any) -> str:
    """
    Renders an event payload for the trace.

    :param Any payload: ``None``, a mapping of simple values or any object with a stable ``str``.

    :return: Single-line summary.
    """
    if payload is None:
        return "-"
    if isinstance(payload, dict):
        return ",".join(f"{key}={payload[key]}" for key in sorted(payload))
    return str(payload)


class SimClock:
    """
    The :class:`SimClock` owns the virtual clock and the event queue.

    Handlers are registered per :class:`EventKind` and are called with the event being processed;
    they may schedule further events at the current instant or later.

    :param TextIO trace_sink: optional text stream receiving one line per processed event
           (``time_ns``, ``seq``, ``kind``, payload summary, tab-separated).
    """

    def __init__(self, trace_sink: Optional[TextIO] = None) -> None:
        self.__now = 0
        self.__seq = 0
        self.__queue: List[Tuple[int, int, Event]] = []
        self.__handlers: Dict[EventKind, Callable[[Event], None]] = {}
        self.__trace_sink = trace_sink

    def __len__(self) -> int:
        return len(self.__queue)

    @property
    def now(self) -> int:
        """
        Returns the current simulated time.

        :return: Time in nanoseconds.
        """
        return self.__now

    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        """
        Registers the handler of an event kind, replacing any previous one.

        :return: None
        """
        self.__handlers[kind] = handler

    def schedule(self, event: Event) -> Event:
        """
        Enqueues an event and assigns its sequence number.

        :param Event event: event to process at ``event.time``.

        :raises SimulationError: if the event lies in the past.

        :return: The enqueued event.
        """
        if event.time < self.__now:
            raise SimulationError(f"{event.kind.value} scheduled at {event.time} ns, clock already at {self.__now} ns")
        event.seq = self.__seq
        self.__seq += 1
        heapq.heappush(self.__queue, (event.time, event.seq, event))
        return event

    def schedule_at(self, time: int, kind: EventKind, payload: Any = None) -> Event:
        """
        Shortcut building and enqueuing an event.

        :return: The enqueued event.
        """
        return self.schedule(Event(time=time, kind=kind, payload=payload))

    def run_until(self, t_end: int) -> int:
        """
        Processes, in ``(time, seq)`` order, every event whose time is ``≤ t_end``,
        including events scheduled by handlers along the way. The clock ends at ``t_end``.

        :param int t_end: horizon in nanoseconds.

        :raises SimulationError: if ``t_end`` lies in the past or an event has no handler.

        :return: Number of events processed.
        """
        if t_end < self.__now:
            raise SimulationError(f"cannot run until {t_end} ns, clock already at {self.__now} ns")
        processed = 0
        while self.__queue and self.__queue[0][0] <= t_end:
            _, _, event = heapq.heappop(self.__queue)
            self.__now = event.time
            handler = self.__handlers.get(event.kind)
            if handler is None:
                raise SimulationError(f"no handler registered for {event.kind.value}")
            if self.__trace_sink is not None:
                self.__trace_sink.write(f"{event.time}\t{event.seq}\t{event.kind.value}\t{describe(event.payload)}\n")
            handler(event)
            processed += 1
        self.__now = t_end
        logger.debug("Clock advanced to %d ns after %d events", t_end, processed)
        return processed

    def next_time(self) -> Optional[int]:
        """
        Returns the time of the earliest queued event.

        :return: Time in nanoseconds, or ``None`` if the queue is empty.
        """
        return self.__queue[0][0] if self.__queue else None
