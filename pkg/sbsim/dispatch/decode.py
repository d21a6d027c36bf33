# -*- coding: utf-8 -*-

"""
Decode Dispatchers
******************

This module contains the placement policies of the decode pool: the IQR-aware lexicographical allocator,
which batches ready requests every ``decode_interval`` seconds, and the random and round-robin baselines,
which place each request as soon as it is ready.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from typing import List

import numpy as np

from sbsim import baselines
from sbsim.config import ClusterConfig
from sbsim.core import DpUnitState, Request, to_ns
from sbsim.decode_alloc import schedule_decode_batch
from sbsim.dispatch.base import DecodeDispatcher
from sbsim.engine_model import DecodeEngine
from sbsim.metrics import MetricsRecorder
from sbsim.simclock import Event, EventKind, SimClock

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

class IqrLexDispatcher(DecodeDispatcher):
    """
    The :class:`IqrLexDispatcher` masks KV-load outliers and fills the valleys of the batch-size profile.
    """

    def __init__(self, clock: SimClock, units: List[DpUnitState], engine: DecodeEngine,
                 config: ClusterConfig, metrics: MetricsRecorder) -> None:
        super().__init__(clock, units, engine, config, metrics)
        self.__buffer: List[Request] = []
        self.__tick_armed = False
        self.__interval = to_ns(config.decode_interval)
        clock.on(EventKind.DECODE_TICK, self.__handle_tick)

    @property
    def name(self) -> str:
        return "iqr_lex"

    def on_ready(self, request: Request) -> None:
        self.__buffer.append(request)
        if not self.__tick_armed:
            self.__tick_armed = True
            self._clock.schedule_at(self._clock.now + self.__interval, EventKind.DECODE_TICK)

    def __handle_tick(self, event: Event) -> None:
        self.__tick_armed = False
        batch, self.__buffer = self.__buffer, []
        allocation = schedule_decode_batch(batch, self._units, self._config.iqr_k,
                                           kv_capacity=self._config.kv_capacity_tokens,
                                           output_len_known=self._config.output_len_known)
        self._metrics.decode_mask_events += allocation.masked_events
        self._metrics.decode_fallback_events += allocation.fallback_events
        by_id = {request.id: request for request in batch}
        for request_id, dp_id in allocation.mapping:
            self._admit(by_id[request_id], dp_id)
        logger.debug("Decode batch of %d request(s) placed", len(batch))


class RandomDecodeDispatcher(DecodeDispatcher):
    """
    The :class:`RandomDecodeDispatcher` draws the target DP unit uniformly, with its own seeded generator.

    :param int seed: seed of the placement generator.
    """

    def __init__(self, clock: SimClock, units: List[DpUnitState], engine: DecodeEngine,
                 config: ClusterConfig, metrics: MetricsRecorder, seed: int = 0) -> None:
        super().__init__(clock, units, engine, config, metrics)
        self.__rng = np.random.default_rng(seed)

    @property
    def name(self) -> str:
        return "random"

    def on_ready(self, request: Request) -> None:
        self._admit(request, baselines.random_decode(request, self._units, self.__rng))


class RoundRobinDecodeDispatcher(DecodeDispatcher):
    """The :class:`RoundRobinDecodeDispatcher` cycles over the decode DP units."""

    def __init__(self, clock: SimClock, units: List[DpUnitState], engine: DecodeEngine,
                 config: ClusterConfig, metrics: MetricsRecorder) -> None:
        super().__init__(clock, units, engine, config, metrics)
        self.__cursor = baselines.RotationCursor()

    @property
    def name(self) -> str:
        return "round_robin"

    def on_ready(self, request: Request) -> None:
        self._admit(request, baselines.round_robin_decode(request, self._units, self.__cursor))
