# -*- coding: utf-8 -*-

"""
Interval Control
****************

This module contains the throughput-adaptive interval control loop and the state synchronization protocol
of the staggered scheduler.

The dispatch interval is ``I_opt = (T̄_fwd + L_net) / N_active``, where ``T̄_fwd`` is the unweighted mean of the
last ``W_size`` measured forward times. An instance is ready for a new batch when it is quiescent, when it
acknowledged its previous batch with an EndForward (fast path), or when its liveness watchdog expired
(safety path).
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from typing import Optional, Sequence

from sbsim.core import InstanceState, SchedulerState
from sbsim.simclock import Event, EventKind, SimClock

logger = logging.getLogger(__name__)


# ---------------------------------------- METHODS ----------------------------------------

def recompute_interval(state: SchedulerState) -> int:
    """
    Recomputes ``I_opt`` from the smoothed forward time, the network latency and the number of
    healthy instances. With no healthy instance the interval is kept and dispatching is suspended.

    :param SchedulerState state: scheduler state, updated in place.

    :return: The interval in effect, in nanoseconds.
    """
    if state.n_active > 0:
        state.i_opt = int((state.t_fwd_bar + state.l_net) // state.n_active)
        if state.suspended:
            logger.info("Dispatching resumed with %d active instances", state.n_active)
        state.suspended = False
    else:
        if not state.suspended:
            logger.warning("No active prefill instance: dispatching suspended")
        state.suspended = True
    return state.i_opt


def on_end_forward(state: SchedulerState, t_measured: int) -> bool:
    """
    Feeds a measured forward time into the moving-average window and recomputes the interval.

    :param SchedulerState state: scheduler state, updated in place.
    :param int t_measured: measured pass duration in nanoseconds.

    :return: ``True`` if the sample was accepted, ``False`` if it was rejected (non-positive).
    """
    if t_measured <= 0:
        logger.warning("Rejected non-positive forward time sample (%d ns)", t_measured)
        return False
    state.exec_window.append(t_measured)
    if len(state.exec_window) > state.w_size:
        state.exec_window.popleft()
    state.t_fwd_bar = sum(state.exec_window) / len(state.exec_window)
    recompute_interval(state)
    return True


def on_topology_change(state: SchedulerState, n_new: int) -> None:
    """
    Applies a new count of healthy instances and recomputes the interval immediately.

    :param SchedulerState state: scheduler state, updated in place.
    :param int n_new: number of healthy instances.

    :return: None
    """
    if n_new != state.n_active:
        logger.info("Active prefill instances: %d -> %d", state.n_active, n_new)
    state.n_active = n_new
    recompute_interval(state)


def acknowledge_end_forward(instance: InstanceState) -> None:
    """
    Records an EndForward received from ``instance``: it becomes ready through the fast path and
    its pending watchdog is disarmed.

    :return: None
    """
    instance.end_forward_received = True
    instance.watchdog_deadline = None
    instance.watchdog_generation += 1


def is_ready(instance: InstanceState, now: int) -> bool:
    """
    Checks whether an instance may receive a new batch. Quiescence is tested first: an idle instance with no
    outstanding task is ready whether or not its watchdog is still armed.

    :param InstanceState instance: candidate instance.
    :param int now: current simulated time in nanoseconds.

    :return: ``True`` if quiescent, acknowledged or timed out, ``False`` otherwise.
    """
    if not instance.healthy:
        return False
    if not instance.busy and instance.task_depth == 0:
        return True
    if instance.end_forward_received or instance.watchdog_expired:
        return True
    if instance.watchdog_deadline is not None:
        return now >= instance.watchdog_deadline
    return False


def select_ready_instance(instances: Sequence[InstanceState], now: int,
                          last_dispatched: Optional[int] = None) -> Optional[int]:
    """
    Returns the first ready instance in round-robin order, starting right after the last dispatched one.

    :param Sequence[InstanceState] instances: prefill instances, indexed by instance id.
    :param int now: current simulated time in nanoseconds.
    :param int last_dispatched: id of the last instance dispatched to (``None`` at cold start).

    :return: The id of the selected instance, or ``None`` if no instance is ready.
    """
    count = len(instances)
    start = 0 if last_dispatched is None else (last_dispatched + 1) % count
    for offset in range(count):
        instance = instances[(start + offset) % count]
        if is_ready(instance, now):
            return instance.instance_id
    return None


def mark_dispatched(instance: InstanceState) -> None:
    """
    Consumes the readiness of an instance that has just been served by a scheduling cycle.

    :return: None
    """
    instance.end_forward_received = False
    instance.watchdog_expired = False


def arm_watchdog(instance: InstanceState, clock: SimClock, t_bar: float, multiplier: float) -> Event:
    """
    Arms the liveness watchdog of an instance that just received a batch. ``t_bar`` is bound now;
    any earlier pending expiry is cancelled.

    :param InstanceState instance: instance dispatched to.
    :param SimClock clock: event engine.
    :param float t_bar: smoothed forward time in nanoseconds.
    :param float multiplier: timeout as a multiple of ``t_bar``.

    :return: The scheduled expiry event.
    """
    instance.watchdog_generation += 1
    instance.watchdog_deadline = clock.now + int(round(multiplier * t_bar))
    return clock.schedule_at(instance.watchdog_deadline, EventKind.WATCHDOG_EXPIRY,
                             {"instance": instance.instance_id, "generation": instance.watchdog_generation})


def on_watchdog_expiry(instance: InstanceState, generation: int) -> bool:
    """
    Handles a watchdog expiry: a stale generation is ignored, otherwise the instance is forced ready.

    :param InstanceState instance: instance whose timer fired.
    :param int generation: generation carried by the expiry event.

    :return: ``True`` if the instance was reset, ``False`` for a cancelled timer.
    """
    if generation != instance.watchdog_generation or instance.watchdog_deadline is None:
        return False
    logger.warning("Watchdog expired on instance %d: forcing it ready", instance.instance_id)
    instance.watchdog_deadline = None
    instance.watchdog_expired = True
    return True
