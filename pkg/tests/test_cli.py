# -*- coding: utf-8 -*-

"""
Tests of the command-line interface and the peak-rate search.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import sys
import json
import runpy

import pytest

from sbsim.cli import (EXIT_CONFIGURATION, EXIT_OK, EXIT_SLO, check_acceptance, check_peak_acceptance,
                       find_peak_qps, main)
from sbsim.config import AcceptanceConfig
from sbsim.exceptions import ConfigurationError, SloViolationError


# ----------------------------------------- TESTS -----------------------------------------

def test_without_arguments_prints_the_help():
    with pytest.raises(SystemExit):
        main([])


def test_run_writes_the_outputs(write_config, tmp_path):
    out = tmp_path / "out"
    assert main(["run", "-c", str(write_config()), "-o", str(out), "-s", "9", "-q"]) == EXIT_OK
    for name in ("requests.csv", "passes.csv", "kvband.csv", "ticks.csv", "cycles.csv", "summary.json"):
        assert (out / name).exists()
    with open(out / "summary.json") as f:
        summary = json.load(f)
    assert summary["seed"] == 9
    assert summary["config"]["seed"] == 9


def test_run_with_an_unknown_key(write_config, tmp_path, capsys):
    path = write_config(bogus=1)
    assert main(["run", "-c", str(path), "-o", str(tmp_path / "out"), "-q"]) == EXIT_CONFIGURATION
    assert "unknown key 'bogus'" in capsys.readouterr().err


def test_run_with_a_missing_file(tmp_path):
    assert main(["run", "-c", str(tmp_path / "absent.yaml"), "-o", str(tmp_path / "out"), "-q"]) == EXIT_CONFIGURATION


def test_check_needs_an_objective(write_config, tmp_path):
    assert main(["run", "-c", str(write_config()), "-o", str(tmp_path / "out"), "--check", "-q"]) \
        == EXIT_CONFIGURATION


def test_check_fails_on_a_missed_objective(write_config, tmp_path):
    path = write_config(slo={"ttft_s": 1.0e-6})
    assert main(["run", "-c", str(path), "-o", str(tmp_path / "out"), "--check", "-q"]) == EXIT_SLO


def test_check_passes_on_a_loose_objective(write_config, tmp_path):
    path = write_config(slo={"ttft_s": 10.0})
    assert main(["run", "-c", str(path), "-o", str(tmp_path / "out"), "--check", "-q"]) == EXIT_OK


def test_compare_replays_the_same_workload(write_config, tmp_path):
    out = tmp_path / "out"
    assert main(["compare", "-c", str(write_config()), "-o", str(out), "-q"]) == EXIT_OK
    assert (out / "sbs" / "summary.json").exists()
    assert (out / "immediate" / "summary.json").exists()
    with open(out / "compare.json") as f:
        comparison = json.load(f)
    assert set(comparison) == {"sbs", "immediate"}
    assert comparison["sbs"]["workload_digest"] == comparison["immediate"]["workload_digest"]
    assert "config" not in comparison["sbs"]


def test_compare_rejects_an_unknown_scheduler(write_config, tmp_path):
    path = write_config()
    assert main(["compare", "-c", str(path), "-o", str(tmp_path / "out"), "--schedulers", "sbs,fifo", "-q"]) \
        == EXIT_CONFIGURATION


def test_sweep_runs_each_load_level(write_config, tmp_path):
    out = tmp_path / "out"
    args = ["sweep", "-c", str(write_config()), "-o", str(out), "--peak-qps", "10", "--loads", "50,100",
            "--workers", "1", "-q"]
    assert main(args) == EXIT_OK
    assert (out / "load_050" / "summary.json").exists()
    assert (out / "load_100" / "summary.json").exists()


def test_peak_writes_its_result(write_config, tmp_path):
    out = tmp_path / "out"
    path = write_config(slo={"rate_min": 1.0, "rate_max": 10.0})
    assert main(["peak", "-c", str(path), "-o", str(out), "--slo-ttft", "100", "-q"]) == EXIT_OK
    with open(out / "peak.json") as f:
        assert json.load(f) == {"slo_ttft_s": 100.0, "peak_qps": {"sbs": 10.0}}


def test_peak_search_bounds(make_config):
    config = make_config(slo={"rate_min": 1.0, "rate_max": 10.0})
    assert find_peak_qps(config, 100.0) == 10.0
    with pytest.raises(SloViolationError):
        find_peak_qps(config, 1.0e-6)
    with pytest.raises(ConfigurationError):
        find_peak_qps(config, 0.0)


def test_peak_search_needs_an_open_workload(make_config):
    config = make_config(workload={"arrival": "closed", "concurrency": 4})
    with pytest.raises(ConfigurationError):
        find_peak_qps(config, 1.0)


def test_peak_reruns_each_scheduler_at_its_peak(write_config, tmp_path):
    out = tmp_path / "out"
    path = write_config(slo={"rate_min": 1.0, "rate_max": 10.0})
    args = ["peak", "-c", str(path), "-o", str(out), "--slo-ttft", "100", "--schedulers", "sbs,immediate", "-q"]
    assert main(args) == EXIT_OK
    with open(out / "peak.json") as f:
        report = json.load(f)
    assert report["peak_qps"] == {"sbs": 10.0, "immediate": 10.0}
    assert set(report["chunk_util_at_peak"]) == {"sbs", "immediate"}
    assert (out / "sbs" / "summary.json").exists()
    assert (out / "immediate" / "summary.json").exists()


def test_peak_check_fails_on_a_low_peak_ratio(write_config, tmp_path):
    path = write_config(slo={"rate_min": 1.0, "rate_max": 10.0}, acceptance={"peak_ratio_min": 1.1})
    args = ["peak", "-c", str(path), "-o", str(tmp_path / "out"), "--slo-ttft", "100", "--schedulers",
            "sbs,immediate", "--check", "-q"]
    assert main(args) == EXIT_SLO


def test_peak_check_needs_a_baseline(write_config, tmp_path):
    path = write_config(slo={"rate_min": 1.0, "rate_max": 10.0})
    args = ["peak", "-c", str(path), "-o", str(tmp_path / "out"), "--slo-ttft", "100", "--check", "-q"]
    assert main(args) == EXIT_CONFIGURATION


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_module_runs_as_a_script(monkeypatch, tmp_path):
    monkeypatch.setattr(sys, "argv", ["sbsim", "run", "-c", str(tmp_path / "absent.yaml"), "-q"])
    with pytest.raises(SystemExit) as exit_info:
        runpy.run_module("sbsim.cli", run_name="__main__")
    assert exit_info.value.code == EXIT_CONFIGURATION


def test_acceptance_thresholds():
    summaries = {"sbs": {"ttft_mean": 0.3, "device_wait_mean": 0.01},
                 "immediate": {"ttft_mean": 0.5, "device_wait_mean": 0.2}}
    passing = AcceptanceConfig(ttft_ratio_max=0.7, device_wait_ratio_max=0.2, peak_sbs_chunk_util_min=0.85)
    assert check_acceptance(summaries, passing) == []
    failing = AcceptanceConfig(ttft_ratio_max=0.5, kv_sigma_ratio_max=0.7)
    failures = check_acceptance(summaries, failing)
    assert len(failures) == 2
    assert failures[0].startswith("mean TTFT ratio 0.6000")
    assert failures[1] == "KV sigma ratio not measured"


def test_peak_acceptance_thresholds():
    peaks = {"sbs": 165.0, "immediate": 90.0}
    at_peak = {"sbs": {"chunk_util_mean": 0.92}, "immediate": {"chunk_util_mean": 0.46}}
    passing = AcceptanceConfig(ttft_ratio_max=0.1, peak_ratio_min=1.1, peak_sbs_chunk_util_min=0.85,
                               peak_baseline_chunk_util_max=0.65)
    assert check_peak_acceptance(peaks, at_peak, passing) == []
    failing = AcceptanceConfig(peak_ratio_min=2.0, peak_baseline_chunk_util_max=0.4)
    assert check_peak_acceptance(peaks, at_peak, failing) == [
        "peak ratio 1.8333 (expected >= 2.0)",
        "immediate chunk utilization at peak 0.4600 (expected <= 0.4)",
    ]


def test_acceptance_needs_a_baseline():
    with pytest.raises(ConfigurationError):
        check_acceptance({"sbs": {}}, AcceptanceConfig())
    with pytest.raises(ConfigurationError):
        check_peak_acceptance({"sbs": 1.0}, {"sbs": {}}, AcceptanceConfig())
