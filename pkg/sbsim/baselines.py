# -*- coding: utf-8 -*-

"""
Baselines
*********

This module contains the reference policies the staggered scheduler is compared against. They all place
a request as soon as it arrives, whatever the state of the target instance, so every wait they cause
happens on the device queue.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from sbsim.core import DpId, DpUnitState, InstanceState, Request


# ---------------------------------------- CLASSES ----------------------------------------

@dataclass
class RotationCursor:
    """Round-robin position: next instance, next DP unit inside each instance, next unit in a flat rotation."""
    instance: int = 0
    dp: Dict[int, int] = field(default_factory=dict)
    flat: int = 0


# ---------------------------------------- METHODS ----------------------------------------

def _healthy(instances: Sequence[InstanceState]) -> List[InstanceState]:
    return [instance for instance in instances if instance.healthy]


def immediate_dispatch(request: Request, instances: Sequence[InstanceState],
                       cursor: RotationCursor) -> Optional[DpId]:
    """
    Sends a request to the rotation-next healthy instance, on that instance's rotation-next DP unit.

    :param Request request: arriving request.
    :param Sequence[InstanceState] instances: prefill instances, indexed by instance id.
    :param RotationCursor cursor: rotation state, advanced in place.

    :return: The target DP unit, or ``None`` if no instance is healthy.
    """
    count = len(instances)
    for offset in range(count):
        instance = instances[(cursor.instance + offset) % count]
        if not instance.healthy:
            continue
        cursor.instance = (instance.instance_id + 1) % count
        local_index = cursor.dp.get(instance.instance_id, 0)
        cursor.dp[instance.instance_id] = (local_index + 1) % len(instance.dp_units)
        return instance.dp_units[local_index].dp_id
    return None


def round_robin(request: Request, instances: Sequence[InstanceState], cursor: RotationCursor) -> Optional[DpId]:
    """
    Sends a request to the next DP unit of a flat rotation over every healthy DP unit.

    :return: The target DP unit, or ``None`` if no instance is healthy.
    """
    units = [unit for instance in _healthy(instances) for unit in instance.dp_units]
    if not units:
        return None
    unit = units[cursor.flat % len(units)]
    cursor.flat = (cursor.flat + 1) % len(units)
    return unit.dp_id


def least_outstanding(request: Request, instances: Sequence[InstanceState]) -> Optional[DpId]:
    """
    Sends a request to the healthy DP unit with the fewest outstanding tokens (in flight plus queued),
    ties to the lowest DP unit.

    :return: The target DP unit, or ``None`` if no instance is healthy.
    """
    units = [unit for instance in _healthy(instances) for unit in instance.dp_units]
    if not units:
        return None
    return min(units, key=lambda unit: (unit.outstanding, unit.dp_id)).dp_id


def random_decode(request: Request, units: Sequence[DpUnitState], rng: np.random.Generator) -> DpId:
    """
    Places a request on a decode DP unit drawn uniformly at random.

    :return: The target DP unit.
    """
    return units[int(rng.integers(len(units)))].dp_id


def round_robin_decode(request: Request, units: Sequence[DpUnitState], cursor: RotationCursor) -> DpId:
    """
    Places a request on the next decode DP unit of a flat rotation.

    :return: The target DP unit.
    """
    unit = units[cursor.flat % len(units)]
    cursor.flat = (cursor.flat + 1) % len(units)
    return unit.dp_id
