# -*- coding: utf-8 -*-

"""
Tests of the mock prefill and decode engines.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import pytest

from sbsim.config import CacheConfig, ClusterConfig, EngineCoefficients, FaultConfig, FaultPoint
from sbsim.core import DpId, Request, RequestStatus, Role, new_cluster, to_ns
from sbsim.engine_model import DecodeEngine, PrefillEngine, decode_step_time, prefill_forward_time
from sbsim.exceptions import SimulationError
from sbsim.simclock import EventKind, SimClock

COEFF = EngineCoefficients(prefill_base=0.1, prefill_per_token=1e-4, decode_base=0.01, decode_per_request=0.0,
                           decode_per_kv_token=0.0)


# ---------------------------------------- METHODS ----------------------------------------

def _prefill(faults=None, cache_enabled=False, dp_degree=1):
    cluster = ClusterConfig(n_instances_prefill=1, dp_degree=dp_degree, c_chunk=3000, engine=COEFF,
                            cache=CacheConfig(enabled=cache_enabled))
    _, instances = new_cluster(cluster)
    clock = SimClock()
    engine = PrefillEngine(clock, [instances[0]], COEFF, faults, cache_enabled=cache_enabled)
    return clock, engine, instances[0]


def _decode(tokens_per_step=1):
    _, instances = new_cluster(ClusterConfig(n_instances_prefill=1, n_instances_decode=1, dp_degree=2))
    clock = SimClock()
    engine = DecodeEngine(clock, instances, COEFF, tokens_per_step)
    return clock, engine, instances[1]


# ----------------------------------------- TESTS -----------------------------------------

def test_prefill_forward_time_is_straggler_bound():
    coeff = EngineCoefficients(prefill_base=0.1, prefill_per_token=1e-4)
    assert prefill_forward_time([3000, 3000, 3000], coeff) == pytest.approx(0.4)
    assert prefill_forward_time([3000, 0, 0], coeff) == pytest.approx(0.4)
    assert prefill_forward_time([0, 0], coeff) == pytest.approx(0.1)


def test_decode_step_time_takes_the_slowest_unit():
    coeff = EngineCoefficients(decode_base=0.01, decode_per_request=1e-4, decode_per_kv_token=1e-7)
    assert decode_step_time([(35, 87500)], coeff) == pytest.approx(0.02225)
    coeff = EngineCoefficients(decode_base=0.0, decode_per_request=1e-3, decode_per_kv_token=1e-7)
    assert decode_step_time([(10, 0), (0, 100000)], coeff) == pytest.approx(0.01)
    assert decode_step_time([(0, 0), (0, 0)], COEFF) == pytest.approx(0.01)


def test_timing_functions_need_units():
    with pytest.raises(SimulationError):
        prefill_forward_time([], COEFF)
    with pytest.raises(SimulationError):
        decode_step_time([], COEFF)


def test_single_chunk_request():
    clock, engine, instance = _prefill()
    signals = []
    engine.on_end_forward = lambda inst, measured, remaining: signals.append((measured, remaining))
    request = Request(id=0, arrival_time=0, prompt_len=1000, output_len=1)
    engine.deliver(instance, [(0, request, 1000)])
    assert instance.dp_units[0].r_queued == 1000
    clock.run_until(to_ns(10))
    assert request.dispatch_time == 0 and request.prefill_start == 0
    assert request.first_token_time == to_ns(0.2)
    assert request.prefill_dp == DpId(0, 0)
    assert signals == [(to_ns(0.2), [0])]
    unit = instance.dp_units[0]
    assert (unit.u_flight, unit.r_queued, instance.busy, instance.task_depth) == (0, 0, False, 0)


def test_long_request_is_chunked_over_gated_passes():
    clock, engine, instance = _prefill()
    passes, signals = [], []
    engine.on_pass = lambda time, instance_id, loads: passes.append((time, loads))
    engine.on_end_forward = lambda inst, measured, remaining: signals.append(remaining)
    request = Request(id=0, arrival_time=0, prompt_len=7000, output_len=1)
    engine.deliver(instance, [(0, request, 7000)])
    clock.run_until(to_ns(10))
    assert [loads for _, loads in passes] == [[3000], [3000], [1000]]
    assert [time for time, _ in passes] == [0, to_ns(0.4), to_ns(0.8)]
    assert signals == [[4000], [1000], [0]]
    assert request.prefill_start == 0
    assert request.first_token_time == to_ns(1.0)


def test_dispatch_to_a_busy_instance_waits_for_the_gate():
    clock, engine, instance = _prefill()
    first = Request(id=0, arrival_time=0, prompt_len=500, output_len=1)
    second = Request(id=1, arrival_time=to_ns(0.05), prompt_len=500, output_len=1)
    clock.on(EventKind.REQUEST_ARRIVAL, lambda event: engine.deliver(instance, [(0, second, 500)]))
    engine.deliver(instance, [(0, first, 500)])
    clock.schedule_at(second.arrival_time, EventKind.REQUEST_ARRIVAL)
    clock.run_until(to_ns(10))
    assert second.dispatch_time == to_ns(0.05)
    assert second.prefill_start == to_ns(0.15)
    assert second.first_token_time == to_ns(0.3)


def test_same_instant_dispatches_join_one_pass():
    clock, engine, instance = _prefill(dp_degree=2)
    passes = []
    engine.on_pass = lambda time, instance_id, loads: passes.append(loads)
    requests = [Request(id=i, arrival_time=0, prompt_len=100, output_len=1) for i in range(2)]
    engine.deliver(instance, [(0, requests[0], 100)])
    engine.deliver(instance, [(1, requests[1], 100)])
    assert instance.task_depth == 2
    clock.run_until(to_ns(1))
    assert passes == [[100, 100]]


def test_lost_signal_still_completes_the_pass():
    faults = FaultConfig(lost_end_forward=[FaultPoint(time=0.0, instance=0)])
    clock, engine, instance = _prefill(faults=faults)
    signals = []
    engine.on_end_forward = lambda *args: signals.append(args)
    requests = [Request(id=i, arrival_time=0, prompt_len=100, output_len=1) for i in range(2)]
    engine.deliver(instance, [(0, requests[0], 100)])
    clock.run_until(to_ns(1))
    engine.deliver(instance, [(0, requests[1], 100)])
    clock.run_until(to_ns(2))
    assert engine.lost_signals == 1
    assert len(signals) == 1
    assert all(request.first_token_time is not None for request in requests)


def test_suppressed_signals():
    clock, engine, instance = _prefill(faults=FaultConfig(suppress_end_forward_after=0.0))
    signals = []
    engine.on_end_forward = lambda *args: signals.append(args)
    engine.deliver(instance, [(0, Request(id=0, arrival_time=0, prompt_len=10, output_len=1), 10)])
    clock.run_until(to_ns(1))
    assert signals == [] and engine.lost_signals == 1


def test_idle_callback_follows_the_last_pass_even_without_signal():
    clock, engine, instance = _prefill(faults=FaultConfig(suppress_end_forward_after=0.0))
    idle = []
    engine.on_idle = lambda inst: idle.append(clock.now)
    request = Request(id=0, arrival_time=0, prompt_len=7000, output_len=1)
    engine.deliver(instance, [(0, request, 7000)])
    clock.run_until(to_ns(10))
    assert idle == [to_ns(1.0)]
    assert engine.lost_signals == 3


def test_failed_instance_halts_silently():
    clock, engine, instance = _prefill()
    request = Request(id=0, arrival_time=0, prompt_len=100, output_len=1)
    engine.fail(instance)
    engine.deliver(instance, [(0, request, 100)])
    clock.run_until(to_ns(5))
    assert instance.failed
    assert request.prefill_start is None and request.first_token_time is None
    assert instance.dp_units[0].r_queued == 100


def test_completed_prompts_enter_the_prefix_cache():
    clock, engine, instance = _prefill(cache_enabled=True)
    tokens = tuple(range(64))
    request = Request(id=0, arrival_time=0, prompt_len=100, output_len=1, prefix_tokens=tokens)
    engine.deliver(instance, [(0, request, 100)])
    clock.run_until(to_ns(1))
    assert instance.dp_units[0].cache.longest_match(tokens, 100) == 64


def test_begin_pass_on_a_busy_instance_is_an_error():
    clock, engine, instance = _prefill()
    instance.busy = True
    with pytest.raises(SimulationError):
        engine.begin_prefill_pass(instance)
    instance.busy = False
    with pytest.raises(SimulationError):
        engine.emit_end_forward(instance)


def test_decode_request_leaves_after_its_steps():
    clock, engine, instance = _decode()
    completed, produced = [], []
    engine.on_complete = completed.append
    engine.on_step = lambda time, instance_id, tokens: produced.append((time, tokens))
    request = Request(id=0, arrival_time=0, prompt_len=10, output_len=4)
    dp_id = DpId(instance.instance_id, 0)
    engine.admit(request, dp_id)
    unit = instance.dp_units[0]
    assert (unit.batch_size, unit.kv_load, request.status) == (1, 10, RequestStatus.DECODING)
    clock.run_until(to_ns(1))
    assert completed == [request]
    assert request.completion_time == to_ns(0.03)
    assert request.generated == 3
    assert produced == [(to_ns(0.01), 1), (to_ns(0.02), 1), (to_ns(0.03), 1)]
    assert (unit.batch_size, unit.kv_load) == (0, 0)
    assert instance.role is Role.DECODE


def test_decode_with_several_tokens_per_step():
    clock, engine, instance = _decode(tokens_per_step=2)
    produced = []
    engine.on_step = lambda time, instance_id, tokens: produced.append(tokens)
    request = Request(id=0, arrival_time=0, prompt_len=10, output_len=4)
    assert engine.steps_needed(request) == 2
    engine.admit(request, DpId(instance.instance_id, 1))
    clock.run_until(to_ns(1))
    assert request.completion_time == to_ns(0.02)
    assert sum(produced) == 3
    assert instance.dp_units[1].kv_load == 0


def test_decode_joiners_wait_for_the_step_boundary():
    clock, engine, instance = _decode()
    first = Request(id=0, arrival_time=0, prompt_len=10, output_len=3)
    second = Request(id=1, arrival_time=0, prompt_len=10, output_len=3)
    clock.on(EventKind.REQUEST_ARRIVAL, lambda event: engine.admit(second, DpId(instance.instance_id, 1)))
    engine.admit(first, DpId(instance.instance_id, 0))
    clock.schedule_at(to_ns(0.005), EventKind.REQUEST_ARRIVAL)
    clock.run_until(to_ns(1))
    assert first.completion_time == to_ns(0.02)
    assert second.completion_time == to_ns(0.03)
