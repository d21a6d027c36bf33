# -*- coding: utf-8 -*-

"""
CLI
***

Command Line Interface (CLI) of SBSim, the Staggered Batch Scheduling simulator.

Exit codes: 0 success, 1 configuration error, 2 SLO or acceptance check failed, 3 simulation error.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import sys
import json
import logging
import argparse

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import psutil

from sbsim.config import PREFILL_SCHEDULERS, AcceptanceConfig, ExperimentConfig, load_config
from sbsim.exceptions import ConfigurationError, SimulationError, SloViolationError
from sbsim.simulator import ClusterSimulator, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIGURATION = 1
EXIT_SLO = 2
EXIT_SIMULATION = 3


# ---------------------------------------- METHODS ----------------------------------------

def sbsim_command() -> None:
    """
    Command-line binding to ``sbsim`` package main features.

    :return: None
    """
    sys.exit(main())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parses the command line and runs the requested action.

    :param argv: arguments (defaults to ``sys.argv[1:]``).

    :return: Process exit code.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", required=True, help="Experiment config file (YAML).")
    common.add_argument("-s", "--seed", type=int, help="Override the seed of the config file.")
    common.add_argument("-o", "--out", default="results", help="Output directory (default: results).")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only.")

    global_parser = argparse.ArgumentParser(prog="sbsim", description="Command Line Interface for SBSim, the "
                                                                      "Staggered Batch Scheduling simulator.")
    subparsers = global_parser.add_subparsers(title="Actions", metavar="<action>")

    run_info = "Run one experiment and write its metrics."
    run_parser = subparsers.add_parser("run", help=run_info, description=run_info, parents=[common])
    run_parser.add_argument("--check", action="store_true", help="Fail (exit 2) if mean TTFT exceeds slo.ttft_s.")
    run_parser.set_defaults(action=_run)

    sweep_info = "Run the experiment at several load levels, as percentages of a peak rate."
    sweep_parser = subparsers.add_parser("sweep", help=sweep_info, description=sweep_info, parents=[common])
    sweep_parser.add_argument("--loads", default="40,60,80,100", help="Comma-separated load percentages.")
    sweep_parser.add_argument("--peak-qps", type=float,
                              help="Reference peak rate (default: measured on the baseline under slo.ttft_s).")
    sweep_parser.add_argument("--workers", type=int, help="Parallel processes (default: physical cores).")
    sweep_parser.set_defaults(action=_sweep)

    compare_info = "Run several schedulers on the same workload and compare them."
    compare_parser = subparsers.add_parser("compare", help=compare_info, description=compare_info,
                                           parents=[common])
    compare_parser.add_argument("--schedulers", help="Comma-separated schedulers (default: sbs and the baseline).")
    compare_parser.add_argument("--check", action="store_true",
                                help="Fail (exit 2) if a threshold of the acceptance section is missed.")
    compare_parser.set_defaults(action=_compare)

    peak_info = "Find the highest arrival rate meeting the TTFT objective."
    peak_parser = subparsers.add_parser("peak", help=peak_info, description=peak_info, parents=[common])
    peak_parser.add_argument("--slo-ttft", type=float, help="TTFT objective in seconds (default: slo.ttft_s).")
    peak_parser.add_argument("--schedulers", help="Comma-separated schedulers (default: the configured one).")
    peak_parser.add_argument("--check", action="store_true",
                             help="Fail (exit 2) if the peak ratio or the chunk utilization at the peaks misses "
                                  "the acceptance section.")
    peak_parser.set_defaults(action=_peak)

    argv = list(sys.argv[1:] if argv is None else argv)
    args = global_parser.parse_args(args=argv if argv else ['-h'])
    _configure_logging(args)
    try:
        args.action(args)
    except ConfigurationError as error:
        print(f"Configuration error: {error}", file=sys.stderr)
        return EXIT_CONFIGURATION
    except SloViolationError as error:
        print(f"Check failed: {error}", file=sys.stderr)
        return EXIT_SLO
    except SimulationError as error:
        print(f"Simulation error: {error}", file=sys.stderr)
        return EXIT_SIMULATION
    return EXIT_OK


def find_peak_qps(config: ExperimentConfig, slo_ttft: float) -> float:
    """
    Bisects the arrival rate between ``slo.rate_min`` and ``slo.rate_max`` for the highest rate whose
    steady-state mean TTFT stays within ``slo_ttft`` with every request served.

    :param ExperimentConfig config: experiment to probe (open workload).
    :param float slo_ttft: TTFT objective in seconds.

    :raises ConfigurationError: if the objective is not positive or the workload is closed.
    :raises SloViolationError: if the objective is missed even at ``slo.rate_min``.

    :return: The peak rate, to ``slo.rate_resolution``.
    """
    if not slo_ttft > 0:
        raise ConfigurationError("the TTFT objective must be > 0")
    if config.workload.arrival == "closed":
        raise ConfigurationError("peak search needs an open workload (poisson or uniform)")
    slo = config.slo

    def meets(rate: float) -> bool:
        summary = ClusterSimulator(_with_rate(config, rate)).run().summary
        ok = (summary["ttft_mean"] is not None and summary["ttft_mean"] <= slo_ttft
              and summary["unfinished_window"] == 0 and summary["rejected"] == 0)
        logger.info("%s at %.3f req/s: mean TTFT %s -> %s", config.scheduler, rate, summary["ttft_mean"],
                    "ok" if ok else "violated")
        return ok

    low, high = slo.rate_min, slo.rate_max
    if not meets(low):
        raise SloViolationError(f"{config.scheduler}: TTFT objective of {slo_ttft} s unattainable "
                                f"even at {low} req/s")
    if meets(high):
        return high
    while high - low > slo.rate_resolution:
        middle = (low + high) / 2
        if meets(middle):
            low = middle
        else:
            high = middle
    return low


def _failures(checks: List[Tuple[str, Optional[float], Optional[float], str]]) -> List[str]:
    failures = []
    for label, value, bound, operator in checks:
        if bound is None:
            continue
        if value is None:
            failures.append(f"{label} not measured")
        elif (operator == "<=" and value > bound) or (operator == ">=" and value < bound):
            failures.append(f"{label} {value:.4f} (expected {operator} {bound})")
    return failures


def _split_baseline(results: Dict[str, Any]) -> Tuple[Any, str, Any]:
    if "sbs" not in results or len(results) < 2:
        raise ConfigurationError("acceptance checks compare 'sbs' with at least one baseline")
    baseline_name = next(name for name in results if name != "sbs")
    return results["sbs"], baseline_name, results[baseline_name]


def check_acceptance(summaries: Dict[str, Dict[str, Any]], acceptance: AcceptanceConfig) -> List[str]:
    """
    Evaluates the same-rate thresholds of a comparison: ``sbs`` against the first other scheduler.

    :param summaries: scheduler name → run summary.
    :param AcceptanceConfig acceptance: thresholds (unset ones are skipped).

    :raises ConfigurationError: if the comparison lacks ``sbs`` or a baseline.

    :return: Descriptions of the failed checks (empty when everything passed).
    """
    sbs, _, baseline = _split_baseline(summaries)

    def ratio(key: str) -> Optional[float]:
        if sbs.get(key) is None or not baseline.get(key):
            return None
        return sbs[key] / baseline[key]

    return _failures([
        ("mean TTFT ratio", ratio("ttft_mean"), acceptance.ttft_ratio_max, "<="),
        ("device wait ratio", ratio("device_wait_mean"), acceptance.device_wait_ratio_max, "<="),
        ("KV sigma ratio", ratio("kv_sigma_mean"), acceptance.kv_sigma_ratio_max, "<="),
        ("decode throughput ratio", ratio("decode_tokens_per_s"), acceptance.decode_throughput_ratio_min, ">="),
    ])


def check_peak_acceptance(peaks: Dict[str, float], at_peak: Dict[str, Dict[str, Any]],
                          acceptance: AcceptanceConfig) -> List[str]:
    """
    Evaluates the saturation thresholds: the ratio of peak rates and the chunk utilization of every
    scheduler run at its own peak rate.

    :param peaks: scheduler name → peak rate.
    :param at_peak: scheduler name → summary of the run at that scheduler's peak rate.
    :param AcceptanceConfig acceptance: thresholds (unset ones are skipped).

    :raises ConfigurationError: if the peaks lack ``sbs`` or a baseline.

    :return: Descriptions of the failed checks (empty when everything passed).
    """
    sbs_peak, baseline_name, baseline_peak = _split_baseline(peaks)
    sbs, _, baseline = _split_baseline(at_peak)
    return _failures([
        ("peak ratio", sbs_peak / baseline_peak if baseline_peak else None, acceptance.peak_ratio_min, ">="),
        ("sbs chunk utilization at peak", sbs.get("chunk_util_mean"), acceptance.peak_sbs_chunk_util_min, ">="),
        (f"{baseline_name} chunk utilization at peak", baseline.get("chunk_util_mean"),
         acceptance.peak_baseline_chunk_util_max, "<="),
    ])


def _with_rate(config: ExperimentConfig, rate: float) -> ExperimentConfig:
    return replace(config, workload=replace(config.workload, rate=rate))


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    """
    Loads the config file named on the command line and applies the ``--seed`` override.

    :return: The experiment configuration.
    """
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _schedulers(text: Optional[str], default: List[str]) -> List[str]:
    if not text:
        return default
    names = [name.strip() for name in text.split(",") if name.strip()]
    unknown = [name for name in names if name not in PREFILL_SCHEDULERS]
    if unknown or not names:
        raise ConfigurationError(f"unknown scheduler(s): {', '.join(unknown) or text}")
    return names


def _print_summary(label: str, summary: Dict[str, Any]) -> None:
    def show(value: Optional[float], unit: str = "") -> str:
        return "n/a" if value is None else f"{value:.4f}{unit}"

    print(f"{label}: TTFT mean {show(summary['ttft_mean'], ' s')}, p99 {show(summary['ttft_p99'], ' s')}, "
          f"scheduler wait {show(summary['scheduler_wait_mean'], ' s')}, "
          f"device wait {show(summary['device_wait_mean'], ' s')}, "
          f"chunk util {show(summary['chunk_util_mean'])}, "
          f"decode {show(summary['decode_tokens_per_s'], ' tok/s')}, KV sigma {show(summary['kv_sigma_mean'])}, "
          f"completed {summary['completed']}, rejected {summary['rejected']}")


def _run(args: argparse.Namespace) -> None:
    """
    Runs one experiment.

    :param argparse.Namespace args: object holding attributes entered by the user.

    :raises SloViolationError: with ``--check``, if the mean TTFT misses ``slo.ttft_s``.

    :return: None
    """
    config = _load(args)
    if args.check and config.slo.ttft_s is None:
        raise ConfigurationError("--check needs slo.ttft_s in the config file")
    result = run_experiment(config, Path(args.out))
    _print_summary(config.name, result.summary)
    print(f"Results written to {args.out}")
    if args.check:
        ttft = result.summary["ttft_mean"]
        if ttft is None or ttft > config.slo.ttft_s or result.summary["unfinished_window"]:
            raise SloViolationError(f"mean TTFT {ttft} s exceeds the {config.slo.ttft_s} s objective "
                                    f"or requests were left unserved")


def _run_point(config: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    return run_experiment(config, Path(out_dir)).summary


def _sweep(args: argparse.Namespace) -> None:
    """
    Runs the configured scheduler at several percentages of a peak rate, in parallel processes.

    :param argparse.Namespace args: object holding attributes entered by the user.

    :return: None
    """
    config = _load(args)
    try:
        loads = [float(load) for load in args.loads.split(",")]
    except ValueError:
        raise ConfigurationError(f"invalid --loads list '{args.loads}'") from None
    if not loads or any(load <= 0 for load in loads):
        raise ConfigurationError("--loads needs positive percentages")
    peak = args.peak_qps
    if peak is None:
        if config.slo.ttft_s is None:
            raise ConfigurationError("sweep needs --peak-qps or slo.ttft_s in the config file")
        peak = find_peak_qps(replace(config, scheduler=config.baseline), config.slo.ttft_s)
        print(f"Peak rate of {config.baseline} under a {config.slo.ttft_s} s TTFT objective: {peak:.3f} req/s")
    workers = args.workers or psutil.cpu_count(logical=False) or 1
    out = Path(args.out)
    points = [(load, _with_rate(config, peak * load / 100), str(out / f"load_{int(round(load)):03d}"))
              for load in loads]
    with ProcessPoolExecutor(max_workers=min(workers, len(points))) as executor:
        futures = [executor.submit(_run_point, point_config, point_dir) for _, point_config, point_dir in points]
        summaries = [future.result() for future in futures]
    for (load, point_config, _), summary in zip(points, summaries):
        _print_summary(f"{load:g}% ({point_config.workload.rate:.3f} req/s)", summary)
    print(f"Results written to {out}")


def _compare(args: argparse.Namespace) -> None:
    """
    Runs several schedulers on the same workload.

    :param argparse.Namespace args: object holding attributes entered by the user.

    :raises SloViolationError: with ``--check``, if an acceptance threshold is missed.

    :return: None
    """
    config = _load(args)
    schedulers = _schedulers(args.schedulers, ["sbs", config.baseline])
    out = Path(args.out)
    summaries = {}
    for scheduler in schedulers:
        summaries[scheduler] = run_experiment(replace(config, scheduler=scheduler), out / scheduler).summary
        _print_summary(scheduler, summaries[scheduler])
    digests = {summary["workload_digest"] for summary in summaries.values()}
    if config.workload.arrival != "closed" and len(digests) != 1:
        raise SimulationError("compared runs did not replay the same workload")
    with open(out / "compare.json", "w", encoding="utf-8") as f:
        json.dump({name: {key: value for key, value in summary.items() if key != "config"}
                   for name, summary in summaries.items()}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"Results written to {out}")
    if args.check:
        failures = check_acceptance(summaries, config.acceptance)
        if failures:
            raise SloViolationError("; ".join(failures))
        print("All acceptance checks passed")


def _peak(args: argparse.Namespace) -> None:
    """
    Finds the peak rate of one or more schedulers under a TTFT objective. With ``sbs`` and a baseline,
    each scheduler is run again at its own peak rate to measure its chunk utilization at saturation.

    :param argparse.Namespace args: object holding attributes entered by the user.

    :raises SloViolationError: with ``--check``, if the peak ratio or a chunk-utilization bound is missed.

    :return: None
    """
    config = _load(args)
    slo_ttft = args.slo_ttft if args.slo_ttft is not None else config.slo.ttft_s
    if slo_ttft is None:
        raise ConfigurationError("peak needs --slo-ttft or slo.ttft_s in the config file")
    peaks = {}
    for scheduler in _schedulers(args.schedulers, [config.scheduler]):
        peaks[scheduler] = find_peak_qps(replace(config, scheduler=scheduler), slo_ttft)
        print(f"{scheduler}: peak {peaks[scheduler]:.3f} req/s under a {slo_ttft} s TTFT objective")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report: Dict[str, Any] = {"slo_ttft_s": slo_ttft, "peak_qps": peaks}
    compared = "sbs" in peaks and len(peaks) > 1
    at_peak = {}
    if compared:
        for scheduler, rate in peaks.items():
            at_peak[scheduler] = run_experiment(_with_rate(replace(config, scheduler=scheduler), rate),
                                                out / scheduler).summary
            _print_summary(f"{scheduler} at {rate:.3f} req/s", at_peak[scheduler])
        report["chunk_util_at_peak"] = {name: summary["chunk_util_mean"] for name, summary in at_peak.items()}
    with open(out / "peak.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    if not compared:
        if args.check:
            raise ConfigurationError("peak --check needs sbs and a baseline in --schedulers")
        return
    baseline = next(name for name in peaks if name != "sbs")
    print(f"sbs / {baseline} peak ratio: {peaks['sbs'] / peaks[baseline]:.3f}")
    if args.check:
        failures = check_peak_acceptance(peaks, at_peak, config.acceptance)
        if failures:
            raise SloViolationError("; ".join(failures))
        print("All peak acceptance checks passed")


if __name__ == "__main__":
    sbsim_command()
