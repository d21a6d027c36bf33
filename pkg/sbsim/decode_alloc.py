# -*- coding: utf-8 -*-

"""
Decode Allocation
*****************

This module contains the IQR-aware lexicographical allocator of the decode pool.

For every request (longest first) the allocator masks the DP units whose KV load is a statistical outlier,
``K_n > Q3 + k·(Q3 − Q1)``, then picks the surviving unit with the smallest batch size, breaking ties on the
KV load and finally on the DP index.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from sbsim.core import DpId, DpUnitState, Request
from sbsim.exceptions import SimulationError

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

@dataclass
class DecodeAllocation:
    """
    Outcome of one decode batch: ``(request_id, dp_id)`` pairs in assignment order, how many assignments
    saw at least one unit masked, how many fell back to every unit, and ``(B, K)`` of each unit afterwards.
    """
    mapping: List[Tuple[int, DpId]] = field(default_factory=list)
    masked_events: int = 0
    fallback_events: int = 0
    units_after: List[Tuple[int, int]] = field(default_factory=list)


# ---------------------------------------- METHODS ----------------------------------------

def percentile(values: Sequence[float], p: float) -> float:
    """
    Linear-interpolation percentile: rank ``(n − 1)·p/100`` of the sorted sample.

    :param Sequence[float] values: non-empty sample.
    :param float p: percentile in ``[0, 100]``.

    :raises SimulationError: if ``values`` is empty.

    :return: The interpolated value.
    """
    if len(values) == 0:
        raise SimulationError("percentile of an empty sample")
    return float(np.percentile(np.asarray(values, dtype=float), p))


def outlier_threshold(kv_loads: Sequence[float], k: float) -> float:
    """
    Upper IQR fence of the KV loads.

    :param Sequence[float] kv_loads: KV load of each DP unit.
    :param float k: IQR multiplier.

    :return: ``Q3 + k·(Q3 − Q1)``.
    """
    q1, q3 = percentile(kv_loads, 25), percentile(kv_loads, 75)
    return q3 + k * (q3 - q1)


def lex_compare(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    """
    Strict lexicographic order on ``(B, K)``.

    :return: ``True`` if ``a`` strictly precedes ``b``.
    """
    return a[0] < b[0] or (a[0] == b[0] and a[1] < b[1])


def sequence_length(request: Request, output_len_known: bool = True) -> int:
    """
    Length used to order a decode batch: prompt plus expected output, or the prompt alone when
    output lengths are not known at scheduling time.

    :return: Token count.
    """
    return request.prompt_len + request.output_len if output_len_known else request.prompt_len


def schedule_decode_batch(requests: Sequence[Request], units: Sequence[DpUnitState], k: float,
                          kv_capacity: Optional[int] = None, output_len_known: bool = True) -> DecodeAllocation:
    """
    Places a batch of prefilled requests on decode DP units.

    The units' ``(B, K)`` are snapshotted once and updated after each assignment (``B + 1``,
    ``K + prompt_len``), so each request sees the effect of the previous ones. The threshold is recomputed
    for every request. Units over ``kv_capacity`` once the request is added are masked too; when every unit
    is masked the allocator falls back to all of them.

    :param Sequence[Request] requests: requests to place.
    :param Sequence[DpUnitState] units: candidate decode DP units.
    :param float k: IQR multiplier.
    :param int kv_capacity: optional per-unit KV token capacity.
    :param bool output_len_known: order by prompt plus output length instead of prompt length.

    :raises SimulationError: if ``units`` is empty.

    :return: The :class:`DecodeAllocation`; ``units`` themselves are left untouched.
    """
    if not units:
        raise SimulationError("schedule_decode_batch needs at least one DP unit")
    batch = [unit.batch_size for unit in units]
    kv = [unit.kv_load for unit in units]
    allocation = DecodeAllocation()
    everyone = range(len(units))
    for request in sorted(requests, key=lambda r: (-sequence_length(r, output_len_known), r.id)):
        threshold = outlier_threshold(kv, k)
        safe = [index for index in everyone
                if kv[index] <= threshold and (kv_capacity is None or kv[index] + request.prompt_len <= kv_capacity)]
        if len(safe) < len(units):
            allocation.masked_events += 1
        if not safe:
            allocation.fallback_events += 1
            safe = list(everyone)
        chosen = min(safe, key=lambda index: (batch[index], kv[index], index))
        batch[chosen] += 1
        kv[chosen] += request.prompt_len
        allocation.mapping.append((request.id, units[chosen].dp_id))
    if allocation.fallback_events:
        logger.debug("Decode batch fell back to every unit %d time(s)", allocation.fallback_events)
    allocation.units_after = list(zip(batch, kv))
    return allocation
