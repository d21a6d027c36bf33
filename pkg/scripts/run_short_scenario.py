# -*- coding: utf-8 -*-

"""
Run Short Scenario
******************

This script shows how to compare the staggered scheduler with the immediate-dispatch baseline
on the short-context prefill scenario.
"""

from dataclasses import replace
from pathlib import Path

from sbsim import ClusterSimulator, load_config


# Load the scenario shipped with the repository
config = load_config(Path(__file__).resolve().parents[1] / "configs" / "short.yaml")

# Run both schedulers on the same seeded workload
summaries = {}
for scheduler in ("sbs", config.baseline):
    summaries[scheduler] = ClusterSimulator(replace(config, scheduler=scheduler)).run().summary

for scheduler, summary in summaries.items():
    print(f"{scheduler}: mean TTFT {summary['ttft_mean']:.4f} s "
          f"(scheduler wait {summary['scheduler_wait_mean']:.4f} s, device wait {summary['device_wait_mean']:.4f} s), "
          f"chunk utilization {summary['chunk_util_mean']:.3f}")
print(f"TTFT ratio: {summaries['sbs']['ttft_mean'] / summaries[config.baseline]['ttft_mean']:.3f}")
