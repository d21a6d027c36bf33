# -*- coding: utf-8 -*-

"""
Dispatcher
**********

This module includes the base classes of the scheduling policies plugged into the simulation loop:
one for the prefill pool, one for the decode pool.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from abc import ABC, abstractmethod
from typing import Iterable, List, Tuple

from sbsim.config import ClusterConfig
from sbsim.core import DpId, DpUnitState, InstanceState, Request, RequestStatus
from sbsim.engine_model import DecodeEngine, PrefillEngine
from sbsim.metrics import MetricsRecorder
from sbsim.prefill_alloc import AllocationMode
from sbsim.simclock import SimClock

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

class PrefillDispatcher(ABC):
    """
    The :class:`PrefillDispatcher` abstracts out what every prefill scheduling policy shares:
    delivering batches to the engine, rejecting requests and tracking healthy instances.

    :param SimClock clock: event engine.
    :param List[InstanceState] instances: prefill instances, indexed by instance id.
    :param PrefillEngine engine: prefill pool.
    :param ClusterConfig config: cluster configuration.
    :param MetricsRecorder metrics: run metrics.
    """

    def __init__(self, clock: SimClock, instances: List[InstanceState], engine: PrefillEngine,
                 config: ClusterConfig, metrics: MetricsRecorder) -> None:
        self._clock = clock
        self._instances = instances
        self._engine = engine
        self._config = config
        self._metrics = metrics
        self._mode = AllocationMode.CACHE_AWARE if config.cache.enabled else AllocationMode.BASIC

    def __str__(self) -> str:
        return f"<{type(self).__name__} - {len(self._instances)} prefill instances>"

    """
    PROPERTIES
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """
        Returns the name of the policy, as written in config files.

        :return: Policy name.
        """
        pass

    """
    PROTECTED METHODS
    """

    def _deliver(self, instance: InstanceState, batch: List[Tuple[int, Request, int]]) -> None:
        """
        Hands a batch to the engine and records the dispatch.

        :param InstanceState instance: target instance.
        :param batch: ``(local_dp_index, request, tokens)`` triples.

        :return: None
        """
        for _, request, tokens in batch:
            request.cached_tokens = request.prompt_len - tokens
        self._engine.deliver(instance, batch)
        if batch:
            self._metrics.record_dispatch(self._clock.now, instance.instance_id, len(batch))

    def _reject(self, requests: Iterable[Request]) -> None:
        """
        Rejects throttled requests with a terminal status.

        :return: None
        """
        for request in requests:
            request.status = RequestStatus.REJECTED
            request.completion_time = self._clock.now

    """
    PUBLIC METHODS
    """

    @abstractmethod
    def on_arrival(self, request: Request) -> None:
        """
        Handles a request entering the prefill pool.

        :return: None
        """
        pass

    def on_end_forward(self, instance: InstanceState, measured: int, remaining: List[int]) -> None:
        """
        Handles an EndForward signal. Policies that do not track forward passes ignore it.

        :param InstanceState instance: signalling instance.
        :param int measured: measured pass duration in nanoseconds.
        :param List[int] remaining: device backlog of each DP unit.

        :return: None
        """

    def on_idle(self, instance: InstanceState) -> None:
        """
        Handles an instance that finished its last pass with nothing left on the device.

        :return: None
        """

    def on_watchdog_expiry(self, instance: InstanceState, generation: int) -> None:
        """
        Handles a watchdog expiry. Policies without a watchdog never receive one.

        :return: None
        """

    def on_topology_change(self, n_active: int) -> None:
        """
        Marks prefill instances ``0..n_active−1`` healthy and the others excluded.

        :param int n_active: number of healthy prefill instances.

        :return: None
        """
        for instance in self._instances:
            instance.healthy = instance.instance_id < n_active
        logger.debug("%s: %d healthy prefill instance(s)", self.name, n_active)


class DecodeDispatcher(ABC):
    """
    The :class:`DecodeDispatcher` abstracts out the placement of prefilled requests on decode DP units.

    :param SimClock clock: event engine.
    :param List[DpUnitState] units: every decode DP unit of the cluster.
    :param DecodeEngine engine: decode pool.
    :param ClusterConfig config: cluster configuration.
    :param MetricsRecorder metrics: run metrics.
    """

    def __init__(self, clock: SimClock, units: List[DpUnitState], engine: DecodeEngine,
                 config: ClusterConfig, metrics: MetricsRecorder) -> None:
        self._clock = clock
        self._units = units
        self._engine = engine
        self._config = config
        self._metrics = metrics

    def __str__(self) -> str:
        return f"<{type(self).__name__} - {len(self._units)} decode DP units>"

    @property
    @abstractmethod
    def name(self) -> str:
        """
        Returns the name of the policy, as written in config files.

        :return: Policy name.
        """
        pass

    def _admit(self, request: Request, dp_id: DpId) -> None:
        self._engine.admit(request, dp_id)

    @abstractmethod
    def on_ready(self, request: Request) -> None:
        """
        Handles a request whose prefill completed and which still has tokens to generate.

        :return: None
        """
        pass
