# -*- coding: utf-8 -*-

"""
Staggered Dispatcher
********************

This module contains the staggered batch scheduler of the prefill pool.

Arrivals are buffered and dispatched as one batch per scheduling tick, ticks being ``I_opt`` apart so that
consecutive instances are served in a staggered rotation. A tick serves the next ready instance and splits
the buffered batch over its DP units with the prioritized batch allocator. When no instance is ready the
dispatch waits for the next EndForward, idle transition, watchdog expiry or topology change. An instance
that signals EndForward with work still queued on its device is served on the spot, so the buffered batch joins
the pass that its leftover starts.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from collections import deque
from typing import List, Optional

from sbsim import interval_control
from sbsim.config import ClusterConfig
from sbsim.core import InstanceState, Request, SchedulerState
from sbsim.dispatch.base import PrefillDispatcher
from sbsim.engine_model import PrefillEngine
from sbsim.metrics import MetricsRecorder
from sbsim.prefill_alloc import allocate_batch
from sbsim.simclock import Event, EventKind, SimClock

logger = logging.getLogger(__name__)


# ----------------------------------------- CLASS -----------------------------------------

class StaggeredDispatcher(PrefillDispatcher):
    """
    The :class:`StaggeredDispatcher` couples the interval control loop with the prioritized batch allocator.

    :param SimClock clock: event engine.
    :param List[InstanceState] instances: prefill instances, indexed by instance id.
    :param PrefillEngine engine: prefill pool.
    :param ClusterConfig config: cluster configuration.
    :param MetricsRecorder metrics: run metrics.
    :param SchedulerState state: interval-control state shared with the simulator.
    """

    def __init__(self, clock: SimClock, instances: List[InstanceState], engine: PrefillEngine,
                 config: ClusterConfig, metrics: MetricsRecorder, state: SchedulerState) -> None:
        super().__init__(clock, instances, engine, config, metrics)
        self.state = state
        self.__q_new: List[Request] = []
        self.__waiting_ready = False
        self.__tick_generation = 0
        self.__tick_at: Optional[int] = None
        clock.on(EventKind.SCHEDULE_TICK, self.__handle_tick)

    @property
    def name(self) -> str:
        return "sbs"

    @property
    def buffered(self) -> int:
        """
        Returns the number of requests waiting on the scheduler side.

        :return: Pending plus newly arrived requests.
        """
        return len(self.state.pending) + len(self.__q_new)

    def on_arrival(self, request: Request) -> None:
        self.__q_new.append(request)
        self.__arm_tick()

    def on_end_forward(self, instance: InstanceState, measured: int, remaining: List[int]) -> None:
        previous = self.state.i_opt
        interval_control.on_end_forward(self.state, measured)
        interval_control.acknowledge_end_forward(instance)
        if (any(remaining) and self.buffered and instance.healthy and not self.state.suspended
                and any(unit.c_avail > 0 for unit in instance.dp_units)):
            # the leftover starts a pass right now: the buffered batch joins it
            self.__waiting_ready = False
            self.run_cycle(instance)
            return
        if self.__waiting_ready:
            self.__waiting_ready = False
            self.__arm_tick()
        elif self.state.i_opt != previous and self.__tick_at is not None:
            self.__arm_tick()

    def on_idle(self, instance: InstanceState) -> None:
        if self.__waiting_ready:
            self.__waiting_ready = False
            self.__arm_tick()

    def on_watchdog_expiry(self, instance: InstanceState, generation: int) -> None:
        if not interval_control.on_watchdog_expiry(instance, generation):
            return
        self._metrics.watchdog_expiries += 1
        if self.__waiting_ready:
            self.__waiting_ready = False
            self.__arm_tick()

    def on_topology_change(self, n_active: int) -> None:
        super().on_topology_change(n_active)
        interval_control.on_topology_change(self.state, n_active)
        self.__waiting_ready = False
        self.__arm_tick()

    def __arm_tick(self) -> None:
        """
        Schedules the next scheduling tick at ``max(now, last_dispatch + I_opt)``, immediately at cold start,
        replacing a tick armed for another time.

        :return: None
        """
        if self.state.suspended or self.__waiting_ready or not self.buffered:
            return
        now = self._clock.now
        target = now if self.state.last_dispatch is None else max(now, self.state.last_dispatch + self.state.i_opt)
        if self.__tick_at == target:
            return
        self.__tick_generation += 1
        self.__tick_at = target
        self._clock.schedule_at(target, EventKind.SCHEDULE_TICK, {"generation": self.__tick_generation})

    def __handle_tick(self, event: Event) -> None:
        if event.payload["generation"] != self.__tick_generation:
            return
        self.__tick_at = None
        self.run_cycle()

    def run_cycle(self, target: Optional[InstanceState] = None) -> None:
        """
        Runs one scheduling cycle: selects the next ready instance, or serves ``target``, allocates the
        buffered batch on its DP units, delivers the assignments, rejects throttled requests, keeps the
        deferred ones for the next cycle and arms the instance's watchdog.

        :param InstanceState target: instance to serve, bypassing the round-robin selection.

        :return: None
        """
        if self.state.suspended or not self.buffered:
            return
        now = self._clock.now
        self._metrics.record_tick(now, self.state.i_opt, self.state.t_fwd_bar, self.state.n_active)
        if target is not None:
            instance_id = target.instance_id
        else:
            instance_id = interval_control.select_ready_instance(self._instances, now, self.state.last_dispatched)
        if instance_id is None:
            self.__waiting_ready = True
            logger.debug("No ready prefill instance at %d ns, %d request(s) buffered", now, self.buffered)
            return
        instance = self._instances[instance_id]
        q_new, self.__q_new = self.__q_new, []
        pending = list(self.state.pending)
        result = allocate_batch(pending, q_new, instance.dp_units, self._config.n_limit, self._mode)
        by_id = {request.id: request for request in pending + q_new}
        batch = [(dp_id.local_index, by_id[request_id], result.tokens[request_id])
                 for request_id, dp_id in result.mapping]
        self._reject(by_id[request_id] for request_id in result.throttled)
        self.state.pending = deque(result.deferred)
        self._deliver(instance, batch)
        if batch:
            interval_control.arm_watchdog(instance, self._clock, self.state.t_fwd_bar,
                                          self._config.watchdog_multiplier)
        interval_control.mark_dispatched(instance)
        self.state.last_dispatch = now
        self.state.last_dispatched = instance_id
        dp_tokens = result.dp_tokens()
        self._metrics.record_cycle(now, instance_id, len(pending) + len(q_new), len(batch), len(result.deferred),
                                   len(result.throttled),
                                   [dp_tokens.get(unit.dp_id, 0) for unit in instance.dp_units])
        self.__arm_tick()
