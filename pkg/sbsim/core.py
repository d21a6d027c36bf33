# -*- coding: utf-8 -*-

"""
Core
****

This module contains the domain types shared by every part of the simulator: requests,
DP units, instances and the scheduler's global state, plus the factory building a fresh cluster.

Simulated time is an integer count of nanoseconds everywhere in the package.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, List, NamedTuple, Optional, Tuple

from sbsim.config import ClusterConfig
from sbsim.exceptions import InvalidRequestError
from sbsim.prefix_cache import PrefixCache

NS_PER_SECOND = 1_000_000_000


# ---------------------------------------- METHODS ----------------------------------------

def to_ns(seconds: float) -> int:
    """
    Converts simulated seconds to integer nanoseconds.

    :param float seconds: duration or instant in seconds.

    :return: Rounded nanosecond count.
    """
    return int(round(seconds * NS_PER_SECOND))


def to_seconds(ns: float) -> float:
    """
    Converts nanoseconds back to seconds.

    :param float ns: duration or instant in nanoseconds.

    :return: Value in seconds.
    """
    return ns / NS_PER_SECOND


# ---------------------------------------- CLASSES ----------------------------------------

class Role(Enum):
    """Pool an instance belongs to."""
    PREFILL = "prefill"
    DECODE = "decode"


class RequestStatus(Enum):
    """Lifecycle of a request inside the simulated cluster."""
    WAITING = "waiting"
    PREFILLING = "prefilling"
    DECODING = "decoding"
    COMPLETED = "completed"
    REJECTED = "rejected"


class DpId(NamedTuple):
    """Global identifier of a DP unit: owning instance and index inside it."""
    instance_id: int
    local_index: int


@dataclass
class Request:
    """
    An inference request. All timestamps are simulated nanoseconds and stay ``None`` until set.
    """
    id: int
    arrival_time: int
    prompt_len: int
    output_len: int
    wait_cycles: int = 0
    prefix_tokens: Tuple[int, ...] = ()
    dispatch_time: Optional[int] = None
    prefill_start: Optional[int] = None
    first_token_time: Optional[int] = None
    completion_time: Optional[int] = None
    status: RequestStatus = RequestStatus.WAITING
    prefill_dp: Optional[DpId] = None
    cached_tokens: int = 0
    decode_dp: Optional[DpId] = None
    generated: int = 0

    def __post_init__(self) -> None:
        if self.prompt_len < 1:
            raise InvalidRequestError("prompt_len")
        if self.output_len < 0:
            raise InvalidRequestError("output_len")
        if self.wait_cycles < 0:
            raise InvalidRequestError("wait_cycles")

    @property
    def total_length(self) -> int:
        """
        Returns the full expected KV residency of the request.

        :return: ``prompt_len + output_len``.
        """
        return self.prompt_len + self.output_len

    def timestamps_monotone(self) -> bool:
        """
        Checks that the timestamps set so far never go backwards
        (arrival ≤ dispatch ≤ prefill_start ≤ first_token ≤ completion).

        :return: ``True`` if the ordering holds, ``False`` otherwise.
        """
        stamps = [self.arrival_time, self.dispatch_time, self.prefill_start,
                  self.first_token_time, self.completion_time]
        known = [stamp for stamp in stamps if stamp is not None]
        return all(earlier <= later for earlier, later in zip(known, known[1:]))


@dataclass
class DpUnitState:
    """
    Live state of one DP unit.

    Prefill side: ``u_flight`` counts tokens executing in the current pass (dispatched but not
    yet acknowledged by an EndForward), ``r_queued`` counts tokens buffered on the device for later
    passes. Decode side: ``batch_size`` (B) resident requests holding ``kv_load`` (K) cached tokens.
    """
    dp_id: DpId
    c_chunk: int
    cache: PrefixCache
    u_flight: int = 0
    r_queued: int = 0
    batch_size: int = 0
    kv_load: int = 0
    backlog: Deque[List] = field(default_factory=deque)
    chunk: List[Tuple[Request, int, bool]] = field(default_factory=list)

    @property
    def c_avail(self) -> int:
        """
        Returns the dispatchable headroom of the unit, ``C_chunk − U_flight − R_queued``.
        May be negative when the device backlog exceeds one chunk.

        :return: Available capacity in tokens.
        """
        return self.c_chunk - self.u_flight - self.r_queued

    @property
    def outstanding(self) -> int:
        """
        Returns the tokens dispatched to this unit and not yet processed.

        :return: ``u_flight + r_queued``.
        """
        return self.u_flight + self.r_queued


@dataclass
class InstanceState:
    """
    A prefill or decode instance owning a fixed set of DP units.

    ``watchdog_deadline`` is set exactly while a dispatch is outstanding without an EndForward
    acknowledgment; ``watchdog_generation`` is bumped to cancel a pending expiry.
    """
    instance_id: int
    role: Role
    dp_units: List[DpUnitState]
    busy: bool = False
    task_depth: int = 0
    watchdog_deadline: Optional[int] = None
    watchdog_generation: int = 0
    healthy: bool = True
    failed: bool = False
    end_forward_received: bool = False
    watchdog_expired: bool = False
    pass_started_at: Optional[int] = None
    pass_start_pending: bool = False
    step_count: int = 0

    @property
    def r_queued(self) -> int:
        """
        Returns the device-side backlog summed over the instance's DP units.

        :return: Buffered tokens.
        """
        return sum(unit.r_queued for unit in self.dp_units)


@dataclass
class SchedulerState:
    """
    Global state of the interval controller. Times are nanoseconds; ``t_fwd_bar`` is the
    (possibly fractional) mean of ``exec_window``.
    """
    w_size: int
    t_default: int
    l_net: int
    n_active: int
    exec_window: Deque[int] = field(default_factory=deque)
    t_fwd_bar: float = 0.0
    i_opt: int = 0
    pending: Deque[Request] = field(default_factory=deque)
    suspended: bool = False
    last_dispatch: Optional[int] = None
    last_dispatched: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.exec_window and not self.t_fwd_bar:
            self.t_fwd_bar = float(self.t_default)


def new_cluster(config: ClusterConfig) -> Tuple[SchedulerState, List[InstanceState]]:
    """
    Builds an idle cluster: every instance idle with an empty device queue, every DP unit with
    its full chunk of headroom and no decode residency, and the scheduler seeded with ``T_default``.

    Prefill instances get ids ``0..n_instances_prefill-1``; decode instances follow.

    :param ClusterConfig config: validated cluster configuration.

    :raises ConfigurationError: if ``config`` violates one of its invariants.

    :return: The scheduler state and the list of instances.
    """
    config.validate()
    instances = []
    pools = [(Role.PREFILL, config.n_instances_prefill, config.dp_degree),
             (Role.DECODE, config.n_instances_decode, config.decode_dp_degree or config.dp_degree)]
    for role, count, degree in pools:
        for _ in range(count):
            instance_id = len(instances)
            units = [DpUnitState(dp_id=DpId(instance_id, index), c_chunk=config.c_chunk,
                                 cache=PrefixCache(tuple(config.cache.probe_lengths), config.cache.budget_tokens))
                     for index in range(degree)]
            instances.append(InstanceState(instance_id=instance_id, role=role, dp_units=units))
    state = SchedulerState(w_size=config.w_size, t_default=to_ns(config.t_default), l_net=to_ns(config.l_net),
                           n_active=config.n_instances_prefill)
    state.i_opt = int((state.t_fwd_bar + state.l_net) // state.n_active)
    return state, instances
