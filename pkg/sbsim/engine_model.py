# -*- coding: utf-8 -*-

"""
Engine Model
************

This module contains the mock inference instances.

Prefill instances run non-preemptive gated forward passes: a pass takes at most ``c_chunk`` tokens per DP unit
from the device backlog, lasts as long as its most loaded DP unit requires, and ends with an EndForward
signal. Decode instances advance every resident request by ``tokens_per_step`` tokens per step, each step
lasting as long as the slowest DP unit requires.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from collections import defaultdict
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from sbsim.config import EngineCoefficients, FaultConfig
from sbsim.core import DpId, InstanceState, Request, RequestStatus, to_ns
from sbsim.exceptions import SimulationError
from sbsim.simclock import Event, EventKind, SimClock

logger = logging.getLogger(__name__)


# ---------------------------------------- METHODS ----------------------------------------

def prefill_forward_time(dp_token_loads: Sequence[int], coeff: EngineCoefficients) -> float:
    """
    Duration of a prefill forward pass: the DP units synchronise, so the most loaded one sets the pace.

    :param Sequence[int] dp_token_loads: tokens processed by each DP unit in the pass.
    :param EngineCoefficients coeff: engine cost model.

    :raises SimulationError: if ``dp_token_loads`` is empty.

    :return: Pass duration in seconds.
    """
    if not dp_token_loads:
        raise SimulationError("prefill_forward_time needs one load per DP unit")
    return coeff.prefill_base + coeff.prefill_per_token * max(dp_token_loads)


def decode_step_time(dp_states: Sequence[Tuple[int, int]], coeff: EngineCoefficients) -> float:
    """
    Duration of a decode step, bound by the slowest DP unit.

    :param dp_states: ``(B_i, K_i)`` of each DP unit.
    :param EngineCoefficients coeff: engine cost model.

    :raises SimulationError: if ``dp_states`` is empty.

    :return: Step duration in seconds.
    """
    if not dp_states:
        raise SimulationError("decode_step_time needs one state per DP unit")
    return coeff.decode_base + max(coeff.decode_per_request * batch + coeff.decode_per_kv_token * kv
                                   for batch, kv in dp_states)


# ---------------------------------------- CLASSES ----------------------------------------

class PrefillEngine:
    """
    The :class:`PrefillEngine` executes the prefill pool.

    Dispatched tokens land on their DP unit's device backlog (``r_queued``). Passes start through a
    zero-delay ``PassStart`` event so that every dispatch made at the same instant joins the same pass.

    :param SimClock clock: event engine.
    :param List[InstanceState] instances: prefill instances, indexed by instance id.
    :param EngineCoefficients coeff: engine cost model.
    :param FaultConfig faults: deterministic fault injection.
    :param bool cache_enabled: insert completed prompts into the DP units' prefix caches.
    """

    def __init__(self, clock: SimClock, instances: List[InstanceState], coeff: EngineCoefficients,
                 faults: FaultConfig = None, cache_enabled: bool = False) -> None:
        self.clock = clock
        self.instances = instances
        self.coeff = coeff
        self.cache_enabled = cache_enabled
        faults = faults or FaultConfig()
        self.__lost: Dict[int, List[int]] = defaultdict(list)
        for point in sorted(faults.lost_end_forward, key=lambda p: (p.time, p.instance)):
            self.__lost[point.instance].append(to_ns(point.time))
        self.__suppress_after = (to_ns(faults.suppress_end_forward_after)
                                 if faults.suppress_end_forward_after is not None else None)
        self.on_end_forward: Callable[[InstanceState, int, List[int]], None] = lambda *_: None
        self.on_first_token: Callable[[Request], None] = lambda _: None
        self.on_pass: Callable[[int, int, List[int]], None] = lambda *_: None
        self.on_idle: Callable[[InstanceState], None] = lambda _: None
        self.lost_signals = 0
        clock.on(EventKind.PASS_START, self.__handle_pass_start)
        clock.on(EventKind.END_FORWARD, self.__handle_end_forward)

    def deliver(self, instance: InstanceState, batch: Iterable[Tuple[int, Request, int]]) -> None:
        """
        Places a dispatched batch on the device queues of an instance. A busy instance simply buffers
        the tokens for its next pass.

        :param InstanceState instance: target instance.
        :param batch: ``(local_dp_index, request, tokens)`` triples.

        :return: None
        """
        now = self.clock.now
        delivered = False
        for local_index, request, tokens in batch:
            unit = instance.dp_units[local_index]
            unit.backlog.append([request, tokens])
            unit.r_queued += tokens
            request.dispatch_time = now
            request.prefill_dp = unit.dp_id
            delivered = True
        if not delivered:
            return
        instance.task_depth += 1
        self.__request_pass(instance)

    def fail(self, instance: InstanceState) -> None:
        """
        Halts an instance silently: no further passes, no EndForward. Buffered work is stranded.

        :return: None
        """
        instance.failed = True
        logger.warning("Prefill instance %d failed at %d ns", instance.instance_id, self.clock.now)

    def begin_prefill_pass(self, instance: InstanceState) -> Optional[Event]:
        """
        Closes the gate and starts a pass: each DP unit moves up to ``c_chunk`` backlog tokens in FIFO order
        into flight, splitting requests into chunks, and an EndForward is scheduled at the end of the pass.

        :param InstanceState instance: idle instance with a non-empty backlog.

        :raises SimulationError: if the instance is already executing a pass.

        :return: The scheduled EndForward event, or ``None`` if there was nothing to run.
        """
        if instance.busy:
            raise SimulationError(f"instance {instance.instance_id} started a pass while busy")
        now = self.clock.now
        loads = []
        for unit in instance.dp_units:
            budget = min(unit.c_chunk, unit.r_queued)
            load = 0
            while budget > 0:
                entry = unit.backlog[0]
                request, remaining = entry
                take = min(budget, remaining)
                if request.prefill_start is None:
                    request.prefill_start = now
                    request.status = RequestStatus.PREFILLING
                entry[1] -= take
                final = entry[1] == 0
                if final:
                    unit.backlog.popleft()
                unit.chunk.append((request, take, final))
                budget -= take
                load += take
            unit.r_queued -= load
            unit.u_flight += load
            loads.append(load)
        if not any(loads):
            return None
        if instance.r_queued == 0:
            instance.task_depth = 0
        instance.busy = True
        instance.pass_started_at = now
        duration = to_ns(prefill_forward_time(loads, self.coeff))
        self.on_pass(now, instance.instance_id, loads)
        return self.clock.schedule_at(now + duration, EventKind.END_FORWARD, {"instance": instance.instance_id})

    def emit_end_forward(self, instance: InstanceState) -> bool:
        """
        Completes the running pass: releases ``u_flight``, stamps the first token of every request whose
        final chunk just ran and signals the scheduler with the measured time and remaining backlog,
        unless the signal is lost. Work left on the device starts the next gated pass, otherwise the
        instance goes idle and the idle callback fires whether or not the signal was delivered.

        :param InstanceState instance: busy instance.

        :raises SimulationError: if the instance is not executing a pass.

        :return: ``True`` if the signal reached the scheduler, ``False`` if it was lost.
        """
        if not instance.busy:
            raise SimulationError(f"instance {instance.instance_id} signalled EndForward while idle")
        now = self.clock.now
        instance.busy = False
        for unit in instance.dp_units:
            for request, tokens, final in unit.chunk:
                unit.u_flight -= tokens
                if final:
                    request.first_token_time = now
                    if self.cache_enabled and request.prefix_tokens:
                        unit.cache.insert(request.prefix_tokens, request.prompt_len)
                    self.on_first_token(request)
            unit.chunk.clear()
        measured = now - instance.pass_started_at
        delivered = not self.__signal_lost(instance.instance_id, now)
        if delivered:
            self.on_end_forward(instance, measured, [unit.r_queued for unit in instance.dp_units])
        else:
            self.lost_signals += 1
            logger.debug("EndForward of instance %d lost at %d ns", instance.instance_id, now)
        if instance.r_queued > 0:
            self.__request_pass(instance)
        else:
            self.on_idle(instance)
        return delivered

    def __signal_lost(self, instance_id: int, now: int) -> bool:
        if self.__suppress_after is not None and now >= self.__suppress_after:
            return True
        pending = self.__lost.get(instance_id)
        if pending and pending[0] <= now:
            pending.pop(0)
            return True
        return False

    def __request_pass(self, instance: InstanceState) -> None:
        if instance.busy or instance.pass_start_pending or instance.failed:
            return
        instance.pass_start_pending = True
        self.clock.schedule_at(self.clock.now, EventKind.PASS_START, {"instance": instance.instance_id})

    def __handle_pass_start(self, event: Event) -> None:
        instance = self.instances[event.payload["instance"]]
        instance.pass_start_pending = False
        if instance.failed or instance.busy:
            return
        self.begin_prefill_pass(instance)

    def __handle_end_forward(self, event: Event) -> None:
        instance = self.instances[event.payload["instance"]]
        if instance.failed:
            return
        self.emit_end_forward(instance)


class DecodeEngine:
    """
    The :class:`DecodeEngine` executes the decode pool.

    A request admitted to a DP unit counts in ``B_i`` and brings its prompt into ``K_i`` immediately,
    joins the instance's next step and leaves once it has produced its remaining ``output_len − 1``
    tokens, releasing its slot and all of its KV. Each step costs ``O(#DP + #finishing)``.

    :param SimClock clock: event engine.
    :param List[InstanceState] instances: every instance of the cluster (decode ones are looked up by id).
    :param EngineCoefficients coeff: engine cost model.
    :param int tokens_per_step: output tokens generated per resident request and step.
    """

    def __init__(self, clock: SimClock, instances: List[InstanceState], coeff: EngineCoefficients,
                 tokens_per_step: int = 1) -> None:
        self.clock = clock
        self.instances = instances
        self.coeff = coeff
        self.tokens_per_step = tokens_per_step
        self.on_complete: Callable[[Request], None] = lambda _: None
        self.on_step: Callable[[int, int, int], None] = lambda *_: None
        self.__active: Dict[DpId, int] = defaultdict(int)
        self.__joining: Dict[int, List[Request]] = defaultdict(list)
        self.__finishing: Dict[int, Dict[int, List[Request]]] = defaultdict(lambda: defaultdict(list))
        self.__stepping: Dict[int, bool] = defaultdict(bool)
        self.__boundary_pending: Dict[int, bool] = defaultdict(bool)
        clock.on(EventKind.DECODE_STEP, self.__handle_step_boundary)

    def admit(self, request: Request, dp_id: DpId) -> None:
        """
        Makes a prefilled request resident on a decode DP unit.

        :param Request request: request with at least one token left to generate.
        :param DpId dp_id: target decode DP unit.

        :return: None
        """
        instance = self.instances[dp_id.instance_id]
        unit = instance.dp_units[dp_id.local_index]
        unit.batch_size += 1
        unit.kv_load += request.prompt_len
        request.decode_dp = dp_id
        request.status = RequestStatus.DECODING
        self.__joining[instance.instance_id].append(request)
        if not self.__stepping[instance.instance_id] and not self.__boundary_pending[instance.instance_id]:
            self.__boundary_pending[instance.instance_id] = True
            self.clock.schedule_at(self.clock.now, EventKind.DECODE_STEP, {"instance": instance.instance_id})

    def steps_needed(self, request: Request) -> int:
        """
        Returns the number of decode steps a request stays resident.

        :return: ``ceil((output_len − 1) / tokens_per_step)``.
        """
        return -(-(request.output_len - 1) // self.tokens_per_step)

    def __finish_step(self, instance: InstanceState, now: int) -> None:
        produced = 0
        for unit in instance.dp_units:
            grown = self.tokens_per_step * self.__active[unit.dp_id]
            unit.kv_load += grown
            produced += grown
        for request in self.__finishing[instance.instance_id].pop(instance.step_count, []):
            unit = instance.dp_units[request.decode_dp.local_index]
            steps = self.steps_needed(request)
            request.generated = request.output_len - 1
            produced -= steps * self.tokens_per_step - request.generated
            unit.batch_size -= 1
            unit.kv_load -= request.prompt_len + steps * self.tokens_per_step
            self.__active[unit.dp_id] -= 1
            request.completion_time = now
            request.status = RequestStatus.COMPLETED
            self.on_complete(request)
        self.on_step(now, instance.instance_id, produced)

    def __handle_step_boundary(self, event: Event) -> None:
        instance = self.instances[event.payload["instance"]]
        instance_id = instance.instance_id
        now = self.clock.now
        if event.payload.get("end"):
            self.__finish_step(instance, now)
        else:
            self.__boundary_pending[instance_id] = False
        joining = self.__joining.pop(instance_id, [])
        step = instance.step_count + 1
        for request in joining:
            self.__active[request.decode_dp] += 1
            self.__finishing[instance_id][step + self.steps_needed(request) - 1].append(request)
        if not any(self.__active[unit.dp_id] for unit in instance.dp_units):
            self.__stepping[instance_id] = False
            return
        instance.step_count = step
        self.__stepping[instance_id] = True
        duration = to_ns(decode_step_time([(unit.batch_size, unit.kv_load) for unit in instance.dp_units],
                                          self.coeff))
        self.clock.schedule_at(now + max(duration, 1), EventKind.DECODE_STEP, {"instance": instance_id, "end": True})
