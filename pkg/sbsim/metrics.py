# -*- coding: utf-8 -*-

"""
Metrics
*******

This module contains the measurements of a run (latency decomposition, chunk utilization, DP balance,
decode throughput), their CSV / JSON export and the closed-form queuing oracle of gated batch service.

Column orders of the CSV outputs::

    requests.csv  id, arrival, dispatch, prefill_start, first_token, completion, scheduler_wait, device_wait,
                  ttft, prompt_len, output_len, cached_tokens, status
    passes.csv    time, instance, dp, assigned_tokens, utilization
    kvband.csv    time, mean, lo, hi, min, max
    ticks.csv     time, i_opt, t_fwd_bar, n_active
    cycles.csv    time, instance, batch_size, assigned, deferred, throttled, dp_tokens

Times are seconds written with nine decimals (exact nanoseconds).
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import csv
import json
import logging

from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from sbsim.core import Request, RequestStatus, to_seconds

logger = logging.getLogger(__name__)

REQUEST_COLUMNS = ["id", "arrival", "dispatch", "prefill_start", "first_token", "completion", "scheduler_wait",
                   "device_wait", "ttft", "prompt_len", "output_len", "cached_tokens", "status"]
PASS_COLUMNS = ["time", "instance", "dp", "assigned_tokens", "utilization"]
KVBAND_COLUMNS = ["time", "mean", "lo", "hi", "min", "max"]
TICK_COLUMNS = ["time", "i_opt", "t_fwd_bar", "n_active"]
CYCLE_COLUMNS = ["time", "instance", "batch_size", "assigned", "deferred", "throttled", "dp_tokens"]


# ---------------------------------------- CLASSES ----------------------------------------

class Strategy(Enum):
    """Dispatch strategy of the queuing oracle."""
    IMMEDIATE = "immediate"
    STAGGERED = "staggered"


class RequestMetrics(NamedTuple):
    """Latency decomposition of one request, in seconds (``None`` for phases not reached)."""
    ttft: Optional[float]
    scheduler_wait: Optional[float]
    device_wait: Optional[float]
    tpot: Optional[float]


class KvBand(NamedTuple):
    """Population statistics of the DP KV loads at one instant."""
    mean: float
    lo: float
    hi: float
    min: float
    max: float


# ---------------------------------------- METHODS ----------------------------------------

def expected_wait(strategy: Strategy, t: float, n: int) -> float:
    """
    Mean queuing delay of uniformly arriving requests in front of ``n`` gated servers of period ``t``:
    immediate dispatch waits half a pass whatever ``n``, staggered dispatch spreads the gates ``t/n`` apart.

    :param Strategy strategy: dispatch strategy.
    :param float t: deterministic service time in seconds.
    :param int n: number of instances.

    :return: Expected wait in seconds.
    """
    if strategy is Strategy.IMMEDIATE:
        return t / 2
    return t / (2 * n)


def chunk_utilization(assigned_tokens: int, c_chunk: int) -> float:
    """
    Fraction of a DP unit's chunk filled by a pass.

    :return: ``min(assigned_tokens, c_chunk) / c_chunk``.
    """
    return min(assigned_tokens, c_chunk) / c_chunk


def kv_band(samples: Iterable[Sequence[float]]) -> List[KvBand]:
    """
    Computes the ``±1σ`` band of the DP KV loads over time (population σ).

    :param samples: one sequence of per-DP KV loads per sampled instant.

    :return: One :class:`KvBand` per sample.
    """
    bands = []
    for loads in samples:
        values = np.asarray(loads, dtype=float)
        mean, sigma = float(values.mean()), float(values.std())
        bands.append(KvBand(mean, mean - sigma, mean + sigma, float(values.min()), float(values.max())))
    return bands


def request_metrics(request: Request) -> RequestMetrics:
    """
    Decomposes the latency of a request: ``ttft = scheduler_wait + device_wait + prefill execution``.

    :return: The :class:`RequestMetrics` of the request.
    """
    def span(start: Optional[int], end: Optional[int]) -> Optional[float]:
        return to_seconds(end - start) if start is not None and end is not None else None

    tpot = None
    if request.completion_time is not None and request.first_token_time is not None and request.output_len > 1:
        tpot = to_seconds(request.completion_time - request.first_token_time) / (request.output_len - 1)
    return RequestMetrics(ttft=span(request.arrival_time, request.first_token_time),
                          scheduler_wait=span(request.arrival_time, request.dispatch_time),
                          device_wait=span(request.dispatch_time, request.prefill_start),
                          tpot=tpot)


def format_seconds(ns: Optional[int]) -> str:
    """
    Renders a nanosecond count as seconds with nine decimals.

    :return: Exact decimal string, empty for ``None``.
    """
    if ns is None:
        return ""
    sign = "-" if ns < 0 else ""
    ns = abs(int(ns))
    return f"{sign}{ns // 1_000_000_000}.{ns % 1_000_000_000:09d}"


def _mean(values: Sequence[float]) -> Optional[float]:
    return float(np.mean(values)) if len(values) else None


def _quantile(values: Sequence[float], p: float) -> Optional[float]:
    return float(np.percentile(values, p)) if len(values) else None


# ----------------------------------------- CLASS -----------------------------------------

class MetricsRecorder:
    """
    The :class:`MetricsRecorder` accumulates the samples of a run and summarises them over the steady-state
    window ``[warmup_end, window_end)`` (requests by arrival time, passes and decode samples by event time).

    :param int c_chunk: prefill chunk capacity, in tokens.
    :param int warmup_end: start of the steady-state window, in nanoseconds.
    :param int window_end: end of the steady-state window, in nanoseconds.
    """

    def __init__(self, c_chunk: int, warmup_end: int, window_end: int) -> None:
        self.c_chunk = c_chunk
        self.warmup_end = warmup_end
        self.window_end = window_end
        self.requests: List[Request] = []
        self.passes: List[Tuple[int, int, List[int]]] = []
        self.kv_samples: List[Tuple[int, List[int]]] = []
        self.ticks: List[Tuple[int, int, float, int]] = []
        self.cycles: List[Tuple[int, int, int, int, int, int, List[int]]] = []
        self.decode_steps: List[Tuple[int, int]] = []
        self.decode_mask_events = 0
        self.decode_fallback_events = 0
        self.flow_control_events = 0
        self.watchdog_expiries = 0
        self.dispatches: List[Tuple[int, int, int]] = []

    def in_window(self, time: int) -> bool:
        return self.warmup_end <= time < self.window_end

    def record_pass(self, time: int, instance_id: int, loads: List[int]) -> None:
        self.passes.append((time, instance_id, list(loads)))

    def record_kv(self, time: int, loads: List[int]) -> None:
        self.kv_samples.append((time, list(loads)))

    def record_tick(self, time: int, i_opt: int, t_fwd_bar: float, n_active: int) -> None:
        self.ticks.append((time, i_opt, t_fwd_bar, n_active))

    def record_cycle(self, time: int, instance_id: int, batch_size: int, assigned: int, deferred: int,
                     throttled: int, dp_tokens: List[int]) -> None:
        self.cycles.append((time, instance_id, batch_size, assigned, deferred, throttled, list(dp_tokens)))
        if throttled:
            self.flow_control_events += 1

    def record_dispatch(self, time: int, instance_id: int, requests: int) -> None:
        """
        Records a non-empty batch handed to a prefill instance.

        :return: None
        """
        self.dispatches.append((time, instance_id, requests))

    def record_decode_step(self, time: int, produced: int) -> None:
        self.decode_steps.append((time, produced))

    def pass_utilizations(self) -> List[float]:
        """
        Returns the chunk utilization of each pass in the window, averaged over the pass's DP units.

        :return: One value per pass.
        """
        return [float(np.mean([chunk_utilization(load, self.c_chunk) for load in loads]))
                for time, _, loads in self.passes if self.in_window(time)]

    def pass_imbalances(self) -> List[float]:
        """
        Returns the DP spread ``(max − min) / c_chunk`` of each pass in the window.

        :return: One value per pass.
        """
        return [(max(loads) - min(loads)) / self.c_chunk for time, _, loads in self.passes if self.in_window(time)]

    def kv_sigmas(self) -> List[float]:
        """
        Returns the population σ of the DP KV loads at each sampled instant of the window.

        :return: One value per sample.
        """
        return [float(np.std(loads)) for time, loads in self.kv_samples if self.in_window(time)]

    def summary(self, stranded: int = 0) -> Dict[str, Any]:
        """
        Aggregates the run over the steady-state window.

        :param int stranded: requests left on failed instances.

        :return: Dictionary of aggregates (``None`` where no sample exists).
        """
        window = [request for request in self.requests if self.in_window(request.arrival_time)]
        served = [request for request in window if request.status is not RequestStatus.REJECTED]
        decomposed = [request_metrics(request) for request in served]
        ttft = [item.ttft for item in decomposed if item.ttft is not None]
        span = to_seconds(self.window_end - self.warmup_end)
        produced = sum(tokens for time, tokens in self.decode_steps if self.in_window(time))
        completed_in_window = sum(1 for request in self.requests
                                  if request.completion_time is not None and self.in_window(request.completion_time))
        return {
            "requests_total": len(self.requests),
            "requests_window": len(window),
            "completed": sum(1 for request in self.requests if request.status is RequestStatus.COMPLETED),
            "rejected": sum(1 for request in self.requests if request.status is RequestStatus.REJECTED),
            "stranded": stranded,
            "unfinished_window": sum(1 for request in served if request.first_token_time is None),
            "ttft_mean": _mean(ttft),
            "ttft_p50": _quantile(ttft, 50),
            "ttft_p90": _quantile(ttft, 90),
            "ttft_p99": _quantile(ttft, 99),
            "scheduler_wait_mean": _mean([item.scheduler_wait for item in decomposed
                                          if item.scheduler_wait is not None]),
            "device_wait_mean": _mean([item.device_wait for item in decomposed if item.device_wait is not None]),
            "tpot_mean": _mean([item.tpot for item in decomposed if item.tpot is not None]),
            "passes_window": sum(1 for time, _, _ in self.passes if self.in_window(time)),
            "chunk_util_mean": _mean(self.pass_utilizations()),
            "dp_imbalance_mean": _mean(self.pass_imbalances()),
            "completed_per_s": completed_in_window / span if span > 0 else None,
            "decode_tokens_per_s": produced / span if span > 0 else None,
            "kv_sigma_mean": _mean(self.kv_sigmas()),
            "decode_mask_events": self.decode_mask_events,
            "decode_fallback_events": self.decode_fallback_events,
            "flow_control_events": self.flow_control_events,
            "watchdog_expiries": self.watchdog_expiries,
        }

    def write(self, out_dir: Path, summary: Dict[str, Any]) -> None:
        """
        Writes the CSV files and ``summary.json`` into ``out_dir`` (created if needed).

        :return: None
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        self.__write_csv(out_dir / "requests.csv", REQUEST_COLUMNS, self.__request_rows())
        self.__write_csv(out_dir / "passes.csv", PASS_COLUMNS, (
            {"time": format_seconds(time), "instance": instance_id, "dp": dp, "assigned_tokens": load,
             "utilization": f"{chunk_utilization(load, self.c_chunk):.6f}"}
            for time, instance_id, loads in self.passes for dp, load in enumerate(loads)))
        self.__write_csv(out_dir / "kvband.csv", KVBAND_COLUMNS, (
            dict(time=format_seconds(time), **{key: f"{value:.3f}" for key, value in band._asdict().items()})
            for (time, _), band in zip(self.kv_samples, kv_band(loads for _, loads in self.kv_samples))))
        self.__write_csv(out_dir / "ticks.csv", TICK_COLUMNS, (
            {"time": format_seconds(time), "i_opt": format_seconds(i_opt),
             "t_fwd_bar": format_seconds(int(round(t_fwd_bar))), "n_active": n_active}
            for time, i_opt, t_fwd_bar, n_active in self.ticks))
        self.__write_csv(out_dir / "cycles.csv", CYCLE_COLUMNS, (
            {"time": format_seconds(time), "instance": instance_id, "batch_size": batch_size, "assigned": assigned,
             "deferred": deferred, "throttled": throttled, "dp_tokens": " ".join(str(t) for t in dp_tokens)}
            for time, instance_id, batch_size, assigned, deferred, throttled, dp_tokens in self.cycles))
        with open(out_dir / "summary.json", "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write("\n")
        logger.info("Wrote metrics to %s", out_dir)

    def __request_rows(self) -> Iterable[Dict[str, Any]]:
        def elapsed(start: Optional[int], end: Optional[int]) -> str:
            return format_seconds(end - start) if start is not None and end is not None else ""

        for request in sorted(self.requests, key=lambda r: r.id):
            yield {"id": request.id, "arrival": format_seconds(request.arrival_time),
                   "dispatch": format_seconds(request.dispatch_time),
                   "prefill_start": format_seconds(request.prefill_start),
                   "first_token": format_seconds(request.first_token_time),
                   "completion": format_seconds(request.completion_time),
                   "scheduler_wait": elapsed(request.arrival_time, request.dispatch_time),
                   "device_wait": elapsed(request.dispatch_time, request.prefill_start),
                   "ttft": elapsed(request.arrival_time, request.first_token_time),
                   "prompt_len": request.prompt_len, "output_len": request.output_len,
                   "cached_tokens": request.cached_tokens, "status": request.status.value}

    @staticmethod
    def __write_csv(path: Path, columns: List[str], rows: Iterable[Dict[str, Any]]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
