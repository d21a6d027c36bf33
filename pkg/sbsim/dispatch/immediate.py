# -*- coding: utf-8 -*-

"""
Immediate Dispatcher
********************

This module contains the baseline prefill schedulers. Each request is sent to a DP unit the moment it arrives,
whether or not the target instance is busy.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from typing import Callable, Dict, List, Optional

from sbsim import baselines
from sbsim.config import ClusterConfig
from sbsim.core import DpId, InstanceState, Request
from sbsim.dispatch.base import PrefillDispatcher
from sbsim.engine_model import PrefillEngine
from sbsim.metrics import MetricsRecorder
from sbsim.prefill_alloc import effective_tokens
from sbsim.simclock import SimClock

logger = logging.getLogger(__name__)


# ----------------------------------------- CLASS -----------------------------------------

class ImmediateDispatcher(PrefillDispatcher):
    """
    The :class:`ImmediateDispatcher` places requests on arrival with one of the baseline policies:
    ``immediate`` (rotation over instances, then over their DP units), ``round_robin`` (flat rotation over
    every DP unit) or ``least_outstanding`` (fewest in-flight plus queued tokens).

    Requests arriving while no instance is healthy are held until the topology recovers.

    :param SimClock clock: event engine.
    :param List[InstanceState] instances: prefill instances, indexed by instance id.
    :param PrefillEngine engine: prefill pool.
    :param ClusterConfig config: cluster configuration.
    :param MetricsRecorder metrics: run metrics.
    :param str policy: baseline policy name.
    """

    def __init__(self, clock: SimClock, instances: List[InstanceState], engine: PrefillEngine,
                 config: ClusterConfig, metrics: MetricsRecorder, policy: str = "immediate") -> None:
        super().__init__(clock, instances, engine, config, metrics)
        cursor = baselines.RotationCursor()
        policies: Dict[str, Callable[[Request], Optional[DpId]]] = {
            "immediate": lambda request: baselines.immediate_dispatch(request, self._instances, cursor),
            "round_robin": lambda request: baselines.round_robin(request, self._instances, cursor),
            "least_outstanding": lambda request: baselines.least_outstanding(request, self._instances),
        }
        self.__policy = policy
        self.__select = policies[policy]
        self.__held: List[Request] = []

    @property
    def name(self) -> str:
        return self.__policy

    def on_arrival(self, request: Request) -> None:
        dp_id = self.__select(request)
        if dp_id is None:
            self.__held.append(request)
            return
        instance = self._instances[dp_id.instance_id]
        unit = instance.dp_units[dp_id.local_index]
        self._deliver(instance, [(dp_id.local_index, request, effective_tokens(request, unit, self._mode))])

    def on_topology_change(self, n_active: int) -> None:
        super().on_topology_change(n_active)
        held, self.__held = self.__held, []
        if held:
            logger.info("Releasing %d request(s) held while no prefill instance was healthy", len(held))
        for request in held:
            self.on_arrival(request)
