# -*- coding: utf-8 -*-

"""
Prefill Allocation
******************

This module contains the prioritized batch allocator of the prefill pool: a capacity-constrained greedy
"water-filling" assignment of a buffered batch onto the DP units of one instance.

Requests are taken longest first and each goes to the DP unit with the largest remaining capacity,
provided that unit still has positive headroom before the assignment. Requests deferred in previous
cycles are placed before new arrivals, and a request deferred more than ``n_limit`` times is throttled.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

from sbsim.core import DpId, DpUnitState, Request
from sbsim.exceptions import SimulationError

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

class AllocationMode(Enum):
    """Capacity model of the allocator."""
    BASIC = "basic"
    CACHE_AWARE = "cache_aware"


@dataclass
class AllocationResult:
    """
    Outcome of one allocation cycle.

    ``mapping`` lists ``(request_id, dp_id)`` in assignment order and ``tokens`` the tokens each assigned
    request places on its DP unit. ``deferred`` keeps the input order. ``flow_control`` is raised when at
    least one request was throttled.
    """
    mapping: List[Tuple[int, DpId]] = field(default_factory=list)
    tokens: Dict[int, int] = field(default_factory=dict)
    deferred: List[Request] = field(default_factory=list)
    throttled: List[int] = field(default_factory=list)
    flow_control: bool = False

    def dp_tokens(self) -> Dict[DpId, int]:
        """
        Returns the tokens assigned to each DP unit in this cycle.

        :return: Dictionary ``dp_id`` → tokens (DP units with no assignment are absent).
        """
        loads: Dict[DpId, int] = {}
        for request_id, dp_id in self.mapping:
            loads[dp_id] = loads.get(dp_id, 0) + self.tokens[request_id]
        return loads


# ---------------------------------------- METHODS ----------------------------------------

def len_hit(request: Request, dp: DpUnitState) -> int:
    """
    Returns the longest cached prefix of ``request`` on a DP unit.

    :return: Matched prefix length in tokens, never more than ``prompt_len``.
    """
    if not request.prefix_tokens:
        return 0
    return min(dp.cache.longest_match(request.prefix_tokens, request.prompt_len), request.prompt_len)


def capacity(request: Request, dp: DpUnitState, mode: AllocationMode = AllocationMode.BASIC,
             c_avail: Optional[int] = None) -> int:
    """
    Remaining headroom of a DP unit once ``request`` is placed on it.

    :param Request request: candidate request.
    :param DpUnitState dp: candidate DP unit.
    :param AllocationMode mode: ``BASIC`` charges the full prompt, ``CACHE_AWARE`` only its uncached part.
    :param int c_avail: working headroom to use instead of ``dp.c_avail``.

    :return: Signed capacity in tokens.
    """
    headroom = dp.c_avail if c_avail is None else c_avail
    if mode is AllocationMode.CACHE_AWARE:
        return headroom - (request.prompt_len - len_hit(request, dp))
    return headroom - request.prompt_len


def effective_tokens(request: Request, dp: DpUnitState, mode: AllocationMode) -> int:
    """
    Tokens a request actually places on a DP unit (cached prefix skipped, at least one token).

    :return: Token count.
    """
    if mode is AllocationMode.CACHE_AWARE:
        return max(1, request.prompt_len - len_hit(request, dp))
    return request.prompt_len


def greedy_dispatch(queue: Sequence[Request], dps: Sequence[DpUnitState],
                    mode: AllocationMode = AllocationMode.BASIC,
                    working: Optional[List[int]] = None) -> AllocationResult:
    """
    Assigns ``queue`` longest first (ties by id) to the DP unit of maximal capacity (ties to the lowest
    DP unit). The target must have positive headroom before the assignment; its headroom then becomes the
    request's capacity, which may be negative. Requests that do not fit are deferred.

    :param Sequence[Request] queue: requests to place.
    :param Sequence[DpUnitState] dps: DP units of the target instance, in ``dp_id`` order.
    :param AllocationMode mode: capacity model.
    :param List[int] working: working headroom per DP unit, updated in place (defaults to a snapshot).

    :raises SimulationError: if ``dps`` is empty.

    :return: A partial :class:`AllocationResult` (mapping, tokens and deferred requests).
    """
    if not dps:
        raise SimulationError("greedy_dispatch needs at least one DP unit")
    if working is None:
        working = [dp.c_avail for dp in dps]
    result = AllocationResult()
    for request in sorted(queue, key=lambda r: (-r.prompt_len, r.id)):
        best_index, best_capacity = 0, capacity(request, dps[0], mode, working[0])
        for index in range(1, len(dps)):
            candidate = capacity(request, dps[index], mode, working[index])
            if candidate > best_capacity:
                best_index, best_capacity = index, candidate
        if working[best_index] > 0:
            working[best_index] = best_capacity
            result.mapping.append((request.id, dps[best_index].dp_id))
            result.tokens[request.id] = effective_tokens(request, dps[best_index], mode)
        else:
            result.deferred.append(request)
    return result


def allocate_batch(q_pending: Sequence[Request], q_new: Sequence[Request], dps: Sequence[DpUnitState],
                   n_limit: int, mode: AllocationMode = AllocationMode.BASIC) -> AllocationResult:
    """
    Runs one allocation cycle: legacy requests first, then new arrivals on the residual capacity.
    Every deferred request ages by one wait cycle; those over ``n_limit`` are throttled and flow control
    is raised.

    :param Sequence[Request] q_pending: requests deferred by earlier cycles, oldest first.
    :param Sequence[Request] q_new: requests that arrived since the previous cycle.
    :param Sequence[DpUnitState] dps: DP units of the target instance.
    :param int n_limit: maximum tolerated wait cycles.
    :param AllocationMode mode: capacity model.

    :return: The complete :class:`AllocationResult`.
    """
    if not q_pending and not q_new:
        return AllocationResult()
    working = [dp.c_avail for dp in dps]
    legacy = greedy_dispatch(q_pending, dps, mode, working)
    fresh = greedy_dispatch(q_new, dps, mode, working)
    result = AllocationResult(mapping=legacy.mapping + fresh.mapping, tokens={**legacy.tokens, **fresh.tokens})
    deferred_ids = {request.id for request in legacy.deferred + fresh.deferred}
    for request in list(q_pending) + list(q_new):
        if request.id not in deferred_ids:
            continue
        request.wait_cycles += 1
        if request.wait_cycles > n_limit:
            result.throttled.append(request.id)
        else:
            result.deferred.append(request)
    if result.throttled:
        result.flow_control = True
        logger.warning("Flow control: %d request(s) throttled after %d wait cycles", len(result.throttled), n_limit)
    return result
