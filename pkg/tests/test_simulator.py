# -*- coding: utf-8 -*-

"""
End-to-end tests of the cluster simulator on small and reference scenarios.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

from dataclasses import replace

import pytest

from sbsim.cli import check_peak_acceptance, find_peak_qps
from sbsim.config import load_config
from sbsim.core import RequestStatus
from sbsim.metrics import Strategy, expected_wait
from sbsim.simulator import ClusterSimulator, run_experiment

SECOND = 1_000_000_000


# ---------------------------------------- METHODS ----------------------------------------

def _run(config):
    return ClusterSimulator(config).run()


def _dispatch_times(result, instance_id):
    return [time for time, instance, _ in result.metrics.dispatches if instance == instance_id]


def _with_rate(config, rate):
    return replace(config, workload=replace(config.workload, rate=rate))


# ----------------------------------------- TESTS -----------------------------------------

@pytest.mark.parametrize("scheduler", ["sbs", "immediate", "round_robin", "least_outstanding"])
def test_every_request_gets_its_first_token(make_config, scheduler):
    result = _run(make_config(scheduler=scheduler))
    summary = result.summary
    assert summary["requests_total"] == 100
    assert summary["completed"] == 100
    assert summary["unfinished_window"] == 0
    assert summary["scheduler"] == scheduler
    assert all(request.timestamps_monotone() for request in result.requests)


def test_baselines_never_wait_on_the_scheduler_side(make_config):
    summary = _run(make_config(scheduler="immediate")).summary
    assert summary["scheduler_wait_mean"] == 0


@pytest.mark.slow
def test_gated_service_matches_the_queuing_oracle(configs_dir):
    config = load_config(configs_dir / "oracle.yaml")
    n = config.cluster.n_instances_prefill
    for scheduler, strategy in (("immediate", Strategy.IMMEDIATE), ("sbs", Strategy.STAGGERED)):
        summary = _run(replace(config, scheduler=scheduler)).summary
        waited = summary["scheduler_wait_mean"] + summary["device_wait_mean"]
        assert waited == pytest.approx(expected_wait(strategy, 1.0, n), rel=0.1)


@pytest.mark.slow
def test_staggering_cuts_ttft_at_sixty_percent_of_the_baseline_peak(configs_dir):
    config = load_config(configs_dir / "short.yaml")
    peak = find_peak_qps(replace(config, scheduler=config.baseline), config.slo.ttft_s)
    assert config.workload.rate == pytest.approx(0.6 * peak, rel=0.15)
    loaded = _with_rate(config, 0.6 * peak)
    sbs = _run(replace(loaded, scheduler="sbs")).summary
    baseline = _run(replace(loaded, scheduler=config.baseline)).summary
    assert sbs["workload_digest"] == baseline["workload_digest"]
    assert sbs["ttft_mean"] <= config.acceptance.ttft_ratio_max * baseline["ttft_mean"]
    assert sbs["device_wait_mean"] <= config.acceptance.device_wait_ratio_max * baseline["device_wait_mean"]


@pytest.fixture(scope="module")
def saturation(configs_dir):
    """
    Peak rate of sbs and of the baseline on the saturation scenario, and the summary of each scheduler
    run at its own peak rate.
    """
    config = load_config(configs_dir / "saturation.yaml")
    schedulers = ("sbs", config.baseline)
    peaks = {name: find_peak_qps(replace(config, scheduler=name), config.slo.ttft_s) for name in schedulers}
    at_peak = {name: _run(_with_rate(replace(config, scheduler=name), peaks[name])).summary for name in schedulers}
    return config, peaks, at_peak


@pytest.mark.slow
def test_staggering_raises_the_peak_rate(saturation):
    config, peaks, _ = saturation
    assert peaks["sbs"] >= config.acceptance.peak_ratio_min * peaks[config.baseline]


@pytest.mark.slow
def test_staggering_fills_the_chunk_at_peak_rate(saturation):
    config, peaks, at_peak = saturation
    assert at_peak["sbs"]["chunk_util_mean"] >= config.acceptance.peak_sbs_chunk_util_min
    assert at_peak[config.baseline]["chunk_util_mean"] <= config.acceptance.peak_baseline_chunk_util_max
    assert at_peak["sbs"]["rejected"] == 0
    assert check_peak_acceptance(peaks, at_peak, config.acceptance) == []


@pytest.mark.slow
def test_iqr_lex_balances_the_decode_pool(configs_dir):
    config = load_config(configs_dir / "decode.yaml")
    config = replace(config, workload=replace(config.workload, duration_s=20.0))
    balanced = _run(config).summary
    scattered = _run(replace(config, scheduler="immediate")).summary
    assert balanced["decode_scheduler"] == "iqr_lex"
    assert scattered["decode_scheduler"] == "random"
    assert balanced["kv_sigma_mean"] <= 0.7 * scattered["kv_sigma_mean"]
    assert balanced["decode_tokens_per_s"] >= 1.05 * scattered["decode_tokens_per_s"]


def test_dispatch_survives_lost_end_forward_signals(configs_dir):
    config = load_config(configs_dir / "liveness.yaml")
    result = _run(config)
    summary = result.summary
    assert summary["lost_end_forward"] > 0
    assert summary["watchdog_expiries"] > 0
    assert summary["unfinished_window"] == 0
    t0 = int(config.faults.suppress_end_forward_after * SECOND)
    bound = int((config.cluster.watchdog_multiplier * summary["t_fwd_bar_final"] + summary["i_opt_final"]) * SECOND)
    bound += 1000
    for instance_id in range(config.cluster.n_instances_prefill):
        times = [time for time in _dispatch_times(result, instance_id) if time > t0]
        assert times
        assert times[0] <= t0 + bound
        assert all(later - earlier <= bound for earlier, later in zip(times, times[1:]))


def test_isolated_lost_signal_is_recovered(make_config):
    config = make_config(faults={"lost_end_forward": [{"time": 1.0, "instance": 0}]})
    summary = _run(config).summary
    assert summary["lost_end_forward"] == 1
    assert summary["unfinished_window"] == 0


def test_dead_instance_strands_its_requests(make_config):
    summary = _run(make_config(faults={"dead_instance": [{"time": 1.0, "instance": 0}]})).summary
    assert summary["stranded"] > 0
    assert summary["completed"] + summary["stranded"] <= summary["requests_total"]


def test_shrinking_topology(make_config):
    result = _run(make_config(topology=[{"time": 2.0, "n_active": 1}]))
    assert all(instance == 0 for time, instance, _ in result.metrics.dispatches if time > 2 * SECOND)
    assert result.summary["i_opt_final"] == pytest.approx(result.summary["t_fwd_bar_final"], abs=1e-8)
    assert result.summary["unfinished_window"] == 0


@pytest.mark.parametrize("scheduler", ["sbs", "immediate"])
def test_full_outage_holds_requests_until_recovery(make_config, scheduler):
    config = make_config(scheduler=scheduler, topology=[{"time": 1.01, "n_active": 0}, {"time": 2.01, "n_active": 2}])
    result = _run(config)
    times = [time for time, _, _ in result.metrics.dispatches]
    assert not [time for time in times if 1.01 * SECOND <= time < 2.01 * SECOND]
    assert any(time >= 2.01 * SECOND for time in times)
    assert result.summary["unfinished_window"] == 0


def test_full_pipeline(make_config):
    config = make_config(mode="full", workload={"output": {"law": "uniform", "low": 2, "high": 20}})
    result = _run(config)
    summary = result.summary
    assert summary["completed"] == summary["requests_total"]
    assert summary["tpot_mean"] is not None
    assert summary["decode_scheduler"] == "iqr_lex"
    for request in result.requests:
        assert request.status is RequestStatus.COMPLETED
        assert request.completion_time > request.first_token_time


def test_decode_only_skips_prefill(make_config):
    config = make_config(mode="decode_only", workload={"output": {"law": "constant", "value": 5}})
    result = _run(config)
    assert not result.metrics.passes
    for request in result.requests:
        assert request.first_token_time == request.dispatch_time == request.arrival_time
        assert request.status is RequestStatus.COMPLETED


def test_closed_workload_keeps_its_population(make_config):
    config = make_config(mode="decode_only", workload={"arrival": "closed", "concurrency": 6,
                                                       "output": {"law": "constant", "value": 5}})
    result = _run(config)
    assert result.summary["requests_total"] > 6
    assert sum(1 for request in result.requests if request.arrival_time == 0) == 6


def test_cache_aware_allocation_reuses_prefixes(make_config):
    config = make_config(cluster={"cache": {"enabled": True}},
                         workload={"prompt": {"law": "constant", "value": 2000}, "shared_prefix_fraction": 1.0,
                                   "prefix_groups": 1, "prefix_len": 1024})
    result = _run(config)
    assert any(request.cached_tokens == 1024 for request in result.requests)
    assert result.summary["unfinished_window"] == 0


def test_flow_control_rejects_starved_requests(make_config):
    config = make_config(cluster={"n_instances_prefill": 1, "dp_degree": 1, "c_chunk": 1000, "n_limit": 1},
                         workload={"rate": 100.0, "prompt": {"law": "constant", "value": 1000}})
    summary = _run(config).summary
    assert summary["rejected"] > 0
    assert summary["flow_control_events"] > 0


def test_runs_are_reproducible(make_config, tmp_path):
    config = make_config(trace=True, mode="full", workload={"output": {"law": "uniform", "low": 1, "high": 8}})
    run_experiment(config, tmp_path / "first")
    run_experiment(config, tmp_path / "second")
    for name in ("requests.csv", "passes.csv", "kvband.csv", "ticks.csv", "cycles.csv", "summary.json",
                 "trace.tsv"):
        assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()
    lines = (tmp_path / "first" / "trace.tsv").read_text().splitlines()
    assert lines
    assert all(len(line.split("\t")) == 4 for line in lines)
