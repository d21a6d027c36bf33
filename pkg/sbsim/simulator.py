# -*- coding: utf-8 -*-

"""
Simulator
*********

This module contains the main class of the package: it builds a cluster from an experiment configuration,
wires the event engine, the mock engines, the scheduling policies, the workload and the metrics together,
and runs the experiment.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO

from sbsim.config import ExperimentConfig
from sbsim.core import Request, RequestStatus, Role, new_cluster, to_ns
from sbsim.dispatch import (DecodeDispatcher, ImmediateDispatcher, IqrLexDispatcher, PrefillDispatcher,
                            RandomDecodeDispatcher, RoundRobinDecodeDispatcher, StaggeredDispatcher)
from sbsim.engine_model import DecodeEngine, PrefillEngine
from sbsim.exceptions import SimulationError
from sbsim.metrics import MetricsRecorder
from sbsim.simclock import Event, EventKind, SimClock
from sbsim.workload import WorkloadGenerator

logger = logging.getLogger(__name__)


# ---------------------------------------- CLASSES ----------------------------------------

@dataclass
class SimulationResult:
    """Outcome of a run: the summary written to ``summary.json`` and the raw metrics behind it."""
    summary: Dict[str, Any]
    metrics: MetricsRecorder
    requests: List[Request] = field(default_factory=list)

    def write(self, out_dir: Path) -> None:
        """
        Writes the CSV files and ``summary.json``.

        :param Path out_dir: output directory (created if needed).

        :return: None
        """
        self.metrics.write(Path(out_dir), self.summary)


class ClusterSimulator:
    """
    The :class:`ClusterSimulator` runs one experiment on a simulated P/D-disaggregated cluster.

    :param ExperimentConfig config: validated experiment configuration.
    :param TextIO trace_sink: optional stream receiving the event trace.
    """

    def __init__(self, config: ExperimentConfig, trace_sink: Optional[TextIO] = None) -> None:
        self.config = config
        cluster = config.cluster
        self.clock = SimClock(trace_sink)
        self.state, self.instances = new_cluster(cluster)
        self.prefill_instances = [instance for instance in self.instances if instance.role is Role.PREFILL]
        self.decode_instances = [instance for instance in self.instances if instance.role is Role.DECODE]
        self.decode_units = [unit for instance in self.decode_instances for unit in instance.dp_units]
        duration = to_ns(config.workload.duration_s)
        self.end_time = duration + to_ns(config.drain_s)
        self.metrics = MetricsRecorder(cluster.c_chunk, int(duration * config.warmup_fraction), duration)
        materialize = max(cluster.cache.probe_lengths) if cluster.cache.enabled else 0
        self.workload = WorkloadGenerator(config.workload, config.seed, materialize)
        self.__requests: Dict[int, Request] = {}
        self.__last_kv_sample: Optional[int] = None

        self.prefill_engine = PrefillEngine(self.clock, self.prefill_instances, cluster.engine, config.faults,
                                            cache_enabled=cluster.cache.enabled)
        self.decode_engine = DecodeEngine(self.clock, self.instances, cluster.engine, cluster.tokens_per_step)
        self.prefill_dispatcher = self.__build_prefill_dispatcher(config.scheduler)
        self.decode_dispatcher = self.__build_decode_dispatcher(config.resolved_decode_scheduler)

        self.prefill_engine.on_end_forward = self.prefill_dispatcher.on_end_forward
        self.prefill_engine.on_idle = self.prefill_dispatcher.on_idle
        self.prefill_engine.on_first_token = self.__on_first_token
        self.prefill_engine.on_pass = self.metrics.record_pass
        self.decode_engine.on_complete = self.__on_complete
        self.decode_engine.on_step = self.__on_decode_step
        self.clock.on(EventKind.REQUEST_ARRIVAL, self.__handle_arrival)
        self.clock.on(EventKind.WATCHDOG_EXPIRY, self.__handle_watchdog_expiry)
        self.clock.on(EventKind.TOPOLOGY_CHANGE, self.__handle_topology_change)
        self.clock.on(EventKind.INSTANCE_FAILURE, self.__handle_instance_failure)

    def __str__(self) -> str:
        return (f"<ClusterSimulator - {self.config.name}: {self.prefill_dispatcher.name} / "
                f"{self.decode_dispatcher.name}, mode {self.config.mode}>")

    """
    PRIVATE METHODS
    """

    def __build_prefill_dispatcher(self, name: str) -> PrefillDispatcher:
        arguments = (self.clock, self.prefill_instances, self.prefill_engine, self.config.cluster, self.metrics)
        if name == "sbs":
            return StaggeredDispatcher(*arguments, state=self.state)
        return ImmediateDispatcher(*arguments, policy=name)

    def __build_decode_dispatcher(self, name: str) -> DecodeDispatcher:
        arguments = (self.clock, self.decode_units, self.decode_engine, self.config.cluster, self.metrics)
        if name == "iqr_lex":
            return IqrLexDispatcher(*arguments)
        if name == "random":
            return RandomDecodeDispatcher(*arguments, seed=self.config.seed + 1)
        return RoundRobinDecodeDispatcher(*arguments)

    def __schedule_arrival(self, request: Request) -> None:
        self.__requests[request.id] = request
        self.clock.schedule_at(request.arrival_time, EventKind.REQUEST_ARRIVAL, {"id": request.id})

    def __handle_arrival(self, event: Event) -> None:
        request = self.__requests[event.payload["id"]]
        self.metrics.requests.append(request)
        if self.config.mode == "decode_only":
            request.dispatch_time = request.prefill_start = request.first_token_time = request.arrival_time
            self.__on_first_token(request)
            return
        self.prefill_dispatcher.on_arrival(request)

    def __on_first_token(self, request: Request) -> None:
        if self.config.mode == "prefill_only" or request.output_len <= 1:
            self.__complete(request)
            return
        self.decode_dispatcher.on_ready(request)

    def __on_complete(self, request: Request) -> None:
        replacement = self.workload.replacement(self.clock.now)
        if replacement is not None:
            self.__schedule_arrival(replacement)

    def __complete(self, request: Request) -> None:
        request.completion_time = self.clock.now
        request.status = RequestStatus.COMPLETED
        self.__on_complete(request)

    def __on_decode_step(self, time: int, instance_id: int, produced: int) -> None:
        self.metrics.record_decode_step(time, produced)
        interval = to_ns(self.config.kvband_interval_s)
        if self.__last_kv_sample is None or time - self.__last_kv_sample >= interval:
            self.__last_kv_sample = time
            self.metrics.record_kv(time, [unit.kv_load for unit in self.decode_units])

    def __handle_watchdog_expiry(self, event: Event) -> None:
        instance = self.prefill_instances[event.payload["instance"]]
        self.prefill_dispatcher.on_watchdog_expiry(instance, event.payload["generation"])

    def __handle_topology_change(self, event: Event) -> None:
        self.prefill_dispatcher.on_topology_change(event.payload["n_active"])

    def __handle_instance_failure(self, event: Event) -> None:
        self.prefill_engine.fail(self.prefill_instances[event.payload["instance"]])

    def __stranded(self) -> int:
        failed = {instance.instance_id for instance in self.prefill_instances if instance.failed}
        return sum(1 for request in self.metrics.requests
                   if request.first_token_time is None and request.status is not RequestStatus.REJECTED
                   and request.prefill_dp is not None and request.prefill_dp.instance_id in failed)

    """
    PUBLIC METHODS
    """

    def check_invariants(self) -> None:
        """
        Verifies the conservation invariants of the final state.

        :raises SimulationError: if a DP unit holds negative counters or a request's timestamps go backwards.

        :return: None
        """
        for instance in self.instances:
            for unit in instance.dp_units:
                if min(unit.u_flight, unit.r_queued, unit.batch_size, unit.kv_load) < 0:
                    raise SimulationError(f"negative counter on DP unit {tuple(unit.dp_id)}")
        for request in self.metrics.requests:
            if not request.timestamps_monotone():
                raise SimulationError(f"request {request.id} has non-monotone timestamps")

    def run(self) -> SimulationResult:
        """
        Runs the experiment to the end of its duration plus drain period.

        :raises SimulationError: if an invariant is broken.

        :return: The :class:`SimulationResult` of the run.
        """
        for request in self.workload.requests():
            self.__schedule_arrival(request)
        for event in sorted(self.config.topology, key=lambda e: e.time):
            self.clock.schedule_at(to_ns(event.time), EventKind.TOPOLOGY_CHANGE, {"n_active": event.n_active})
        for point in sorted(self.config.faults.dead_instance, key=lambda p: (p.time, p.instance)):
            if point.instance >= len(self.prefill_instances):
                raise SimulationError(f"fault targets unknown prefill instance {point.instance}")
            self.clock.schedule_at(to_ns(point.time), EventKind.INSTANCE_FAILURE, {"instance": point.instance})
        logger.info("Running %s", self)
        events = self.clock.run_until(self.end_time)
        self.check_invariants()
        summary = self.metrics.summary(stranded=self.__stranded())
        summary.update({
            "name": self.config.name,
            "scheduler": self.prefill_dispatcher.name,
            "decode_scheduler": self.decode_dispatcher.name,
            "mode": self.config.mode,
            "seed": self.config.seed,
            "events": events,
            "lost_end_forward": self.prefill_engine.lost_signals,
            "i_opt_final": self.state.i_opt / 1e9,
            "t_fwd_bar_final": self.state.t_fwd_bar / 1e9,
            "workload_digest": self.workload.digest,
            "config": self.config.to_dict(),
        })
        logger.info("%s finished: %d events, %d requests", self.config.name, events, len(self.metrics.requests))
        return SimulationResult(summary=summary, metrics=self.metrics, requests=list(self.metrics.requests))


# ---------------------------------------- METHODS ----------------------------------------

def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> SimulationResult:
    """
    Runs an experiment and optionally writes its outputs (plus ``trace.tsv`` when tracing is enabled).

    :param ExperimentConfig config: validated experiment configuration.
    :param Path out_dir: output directory, or ``None`` to keep the results in memory.

    :return: The :class:`SimulationResult` of the run.
    """
    if out_dir is not None and config.trace:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "trace.tsv", "w", encoding="utf-8") as trace_sink:
            result = ClusterSimulator(config, trace_sink).run()
    else:
        result = ClusterSimulator(config).run()
    if out_dir is not None:
        result.write(Path(out_dir))
    return result
