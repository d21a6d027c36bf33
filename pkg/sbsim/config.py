# -*- coding: utf-8 -*-

"""
Config
******

This module contains the experiment configuration: nested dataclasses holding every knob of a run,
and the YAML loader mapping a config file onto them.

Unknown keys, mistyped values and invariant violations are rejected with a :class:`ConfigurationError`
whose message starts with the line of the offending key.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import dataclasses
import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union, get_args, get_origin, get_type_hints

import yaml

from sbsim import parameters
from sbsim.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

MODES = ("full", "prefill_only", "decode_only")
PREFILL_SCHEDULERS = ("sbs", "immediate", "round_robin", "least_outstanding")
DECODE_SCHEDULERS = ("iqr_lex", "random", "round_robin")
ARRIVAL_PROCESSES = ("poisson", "uniform", "closed", "trace")
LENGTH_LAWS = ("constant", "uniform", "lognormal")


# ---------------------------------------- METHODS ----------------------------------------

def _require(condition: bool, key: str, message: str, lines: Optional[Mapping[str, int]], prefix: str) -> None:
    """
    Raises a :class:`ConfigurationError` located at ``prefix + key`` when ``condition`` is false.

    :return: None
    """
    if not condition:
        path = f"{prefix}{key}"
        line = lines.get(path, lines.get(prefix.rstrip("."))) if lines else None
        raise ConfigurationError(f"{path} {message}", line=line)


# ---------------------------------------- CLASSES ----------------------------------------

@dataclass
class EngineCoefficients:
    """Affine cost model of the mock engines (seconds)."""
    prefill_base: float = parameters.PREFILL_BASE
    prefill_per_token: float = parameters.PREFILL_PER_TOKEN
    decode_base: float = parameters.DECODE_BASE
    decode_per_request: float = parameters.DECODE_PER_REQUEST
    decode_per_kv_token: float = parameters.DECODE_PER_KV_TOKEN

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        for name in ("prefill_base", "decode_base", "decode_per_request", "decode_per_kv_token"):
            _require(getattr(self, name) >= 0, name, "must be >= 0", lines, prefix)
        _require(self.prefill_per_token > 0, "prefill_per_token", "must be > 0", lines, prefix)


@dataclass
class CacheConfig:
    """Per-DP prefix-cache stub and cache-aware allocation switch."""
    enabled: bool = False
    probe_lengths: List[int] = field(default_factory=lambda: list(parameters.PROBE_LENGTHS))
    budget_tokens: int = parameters.CACHE_BUDGET_TOKENS

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        _require(len(self.probe_lengths) > 0 and all(length >= 1 for length in self.probe_lengths),
                 "probe_lengths", "must be a non-empty list of positive lengths", lines, prefix)
        _require(self.budget_tokens >= 0, "budget_tokens", "must be >= 0", lines, prefix)


@dataclass
class ClusterConfig:
    """Shape of the simulated cluster and tuning of its schedulers."""
    n_instances_prefill: int = 1
    n_instances_decode: int = 1
    dp_degree: int = parameters.DP_DEGREE
    decode_dp_degree: Optional[int] = None
    c_chunk: int = parameters.C_CHUNK
    t_default: float = parameters.T_DEFAULT
    w_size: int = parameters.W_SIZE
    l_net: float = parameters.L_NET
    n_limit: int = parameters.N_LIMIT
    iqr_k: float = parameters.IQR_K
    watchdog_multiplier: float = parameters.WATCHDOG_MULTIPLIER
    decode_interval: float = parameters.DECODE_INTERVAL
    tokens_per_step: int = parameters.TOKENS_PER_STEP
    kv_capacity_tokens: Optional[int] = None
    output_len_known: bool = True
    engine: EngineCoefficients = field(default_factory=EngineCoefficients)
    cache: CacheConfig = field(default_factory=CacheConfig)

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        for name in ("n_instances_prefill", "n_instances_decode", "dp_degree", "c_chunk", "w_size",
                     "n_limit", "tokens_per_step"):
            _require(getattr(self, name) >= 1, name, "must be >= 1", lines, prefix)
        _require(self.decode_dp_degree is None or self.decode_dp_degree >= 1, "decode_dp_degree",
                 "must be >= 1", lines, prefix)
        _require(self.t_default > 0, "t_default", "must be > 0", lines, prefix)
        _require(self.l_net >= 0, "l_net", "must be >= 0", lines, prefix)
        _require(self.iqr_k > 0, "iqr_k", "must be > 0", lines, prefix)
        _require(self.watchdog_multiplier > 0, "watchdog_multiplier", "must be > 0", lines, prefix)
        _require(self.decode_interval >= 0, "decode_interval", "must be >= 0", lines, prefix)
        _require(self.kv_capacity_tokens is None or self.kv_capacity_tokens >= 1, "kv_capacity_tokens",
                 "must be >= 1", lines, prefix)
        self.engine.validate(lines, f"{prefix}engine.")
        self.cache.validate(lines, f"{prefix}cache.")


@dataclass
class LengthSpec:
    """
    A token-length law. ``constant`` uses ``value``; ``uniform`` draws integers in ``[low, high]``;
    ``lognormal`` draws a lognormal of shape ``sigma`` clamped to ``[low, high]`` whose clamped
    mean is ``mean``.
    """
    law: str = "constant"
    value: int = 1
    low: int = 1
    high: int = 1
    mean: float = 1.0
    sigma: float = 1.0

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "", minimum: int = 1) -> None:
        _require(self.law in LENGTH_LAWS, "law", f"must be one of {', '.join(LENGTH_LAWS)}", lines, prefix)
        if self.law == "constant":
            _require(self.value >= minimum, "value", f"must be >= {minimum}", lines, prefix)
            return
        _require(self.low >= minimum, "low", f"must be >= {minimum}", lines, prefix)
        _require(self.high >= self.low, "high", "must be >= low", lines, prefix)
        if self.law == "lognormal":
            _require(self.sigma > 0, "sigma", "must be > 0", lines, prefix)
            _require(self.low < self.mean < self.high, "mean", "must lie strictly between low and high",
                     lines, prefix)


@dataclass
class WorkloadSpec:
    """Arrival process, length laws and prefix sharing of the generated requests."""
    arrival: str = "poisson"
    rate: float = 1.0
    concurrency: int = 0
    duration_s: float = 60.0
    prompt: LengthSpec = field(default_factory=LengthSpec)
    output: LengthSpec = field(default_factory=LengthSpec)
    shared_prefix_fraction: float = 0.0
    prefix_groups: int = 1
    prefix_len: int = 0

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        _require(self.arrival in ARRIVAL_PROCESSES, "arrival",
                 f"must be one of {', '.join(ARRIVAL_PROCESSES)}", lines, prefix)
        _require(self.arrival != "trace", "arrival", "'trace' replay is not implemented", lines, prefix)
        if self.arrival == "closed":
            _require(self.concurrency >= 1, "concurrency", "must be >= 1 for a closed workload", lines, prefix)
        else:
            _require(self.rate > 0, "rate", "must be > 0", lines, prefix)
        _require(self.duration_s > 0, "duration_s", "must be > 0", lines, prefix)
        self.prompt.validate(lines, f"{prefix}prompt.", minimum=1)
        self.output.validate(lines, f"{prefix}output.", minimum=0)
        _require(0.0 <= self.shared_prefix_fraction <= 1.0, "shared_prefix_fraction", "must lie in [0, 1]",
                 lines, prefix)
        _require(self.prefix_groups >= 1, "prefix_groups", "must be >= 1", lines, prefix)
        _require(self.prefix_len >= 0, "prefix_len", "must be >= 0", lines, prefix)


@dataclass
class FaultPoint:
    """An instance hit by a fault at a given simulated time (seconds)."""
    time: float = 0.0
    instance: int = 0


@dataclass
class FaultConfig:
    """Deterministic fault injection."""
    lost_end_forward: List[FaultPoint] = field(default_factory=list)
    dead_instance: List[FaultPoint] = field(default_factory=list)
    suppress_end_forward_after: Optional[float] = None

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        for name in ("lost_end_forward", "dead_instance"):
            _require(all(point.time >= 0 and point.instance >= 0 for point in getattr(self, name)), name,
                     "entries need time >= 0 and instance >= 0", lines, prefix)
        _require(self.suppress_end_forward_after is None or self.suppress_end_forward_after >= 0,
                 "suppress_end_forward_after", "must be >= 0", lines, prefix)


@dataclass
class TopologyEvent:
    """Number of healthy prefill instances from ``time`` (seconds) on."""
    time: float = 0.0
    n_active: int = 0


@dataclass
class SloConfig:
    """TTFT objective and bisection range of the peak-QPS search."""
    ttft_s: Optional[float] = None
    rate_min: float = 1.0
    rate_max: float = 100.0
    rate_resolution: float = 1.0

    def validate(self, lines: Mapping[str, int] = None, prefix: str = "") -> None:
        _require(self.ttft_s is None or self.ttft_s > 0, "ttft_s", "must be > 0", lines, prefix)
        _require(0 < self.rate_min <= self.rate_max, "rate_min", "must satisfy 0 < rate_min <= rate_max",
                 lines, prefix)
        _require(self.rate_resolution > 0, "rate_resolution", "must be > 0", lines, prefix)


@dataclass
class AcceptanceConfig:
    """
    Directional thresholds; unset ones are skipped. Same-rate ratios are checked by ``compare --check``;
    the peak ratio and the ``peak_*`` chunk-utilization bounds, measured with each scheduler at its own
    peak rate, by ``peak --check``.
    """
    ttft_ratio_max: Optional[float] = None
    device_wait_ratio_max: Optional[float] = None
    peak_sbs_chunk_util_min: Optional[float] = None
    peak_baseline_chunk_util_max: Optional[float] = None
    kv_sigma_ratio_max: Optional[float] = None
    decode_throughput_ratio_min: Optional[float] = None
    peak_ratio_min: Optional[float] = None


@dataclass
class ExperimentConfig:
    """A complete, reproducible experiment."""
    name: str = "experiment"
    seed: int = 0
    mode: str = "full"
    scheduler: str = "sbs"
    decode_scheduler: Optional[str] = None
    baseline: str = "immediate"
    warmup_fraction: float = parameters.WARMUP_FRACTION
    drain_s: float = parameters.DRAIN_S
    kvband_interval_s: float = 0.05
    trace: bool = False
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    faults: FaultConfig = field(default_factory=FaultConfig)
    topology: List[TopologyEvent] = field(default_factory=list)
    slo: SloConfig = field(default_factory=SloConfig)
    acceptance: AcceptanceConfig = field(default_factory=AcceptanceConfig)

    @property
    def resolved_decode_scheduler(self) -> str:
        """
        Returns the decode policy in effect: the configured one, else ``iqr_lex`` under SBS
        and ``random`` under every baseline.

        :return: Decode scheduler name.
        """
        if self.decode_scheduler is not None:
            return self.decode_scheduler
        return "iqr_lex" if self.scheduler == "sbs" else "random"

    def validate(self, lines: Mapping[str, int] = None) -> None:
        """
        Checks every invariant of the configuration tree.

        :param Mapping[str, int] lines: dotted key path → line number, as produced by the loader.

        :raises ConfigurationError: on the first violated invariant.

        :return: None
        """
        _require(self.mode in MODES, "mode", f"must be one of {', '.join(MODES)}", lines, "")
        _require(self.scheduler in PREFILL_SCHEDULERS, "scheduler",
                 f"must be one of {', '.join(PREFILL_SCHEDULERS)}", lines, "")
        _require(self.baseline in PREFILL_SCHEDULERS, "baseline",
                 f"must be one of {', '.join(PREFILL_SCHEDULERS)}", lines, "")
        _require(self.decode_scheduler is None or self.decode_scheduler in DECODE_SCHEDULERS, "decode_scheduler",
                 f"must be one of {', '.join(DECODE_SCHEDULERS)}", lines, "")
        _require(0.0 <= self.warmup_fraction < 1.0, "warmup_fraction", "must lie in [0, 1)", lines, "")
        _require(self.drain_s >= 0, "drain_s", "must be >= 0", lines, "")
        _require(self.kvband_interval_s >= 0, "kvband_interval_s", "must be >= 0", lines, "")
        self.cluster.validate(lines, "cluster.")
        self.workload.validate(lines, "workload.")
        self.faults.validate(lines, "faults.")
        n_prefill = self.cluster.n_instances_prefill
        _require(all(0 <= event.n_active <= n_prefill and event.time >= 0 for event in self.topology), "topology",
                 f"entries need time >= 0 and 0 <= n_active <= {n_prefill}", lines, "")
        if self.mode == "decode_only" and self.workload.arrival == "closed":
            output = self.workload.output
            shortest = output.value if output.law == "constant" else output.low
            _require(shortest >= 2, "workload.output", "must produce at least 2 tokens in a closed decode-only run",
                     lines, "")
        self.slo.validate(lines, "slo.")

    def to_dict(self) -> Dict[str, Any]:
        """
        Returns the fully-resolved configuration, defaults materialised.

        :return: Plain dictionary suitable for JSON.
        """
        return dataclasses.asdict(self)


# ------------------------------------- YAML LOADING --------------------------------------

def _line_map(node: yaml.Node, prefix: str = "") -> Dict[str, int]:
    """
    Walks a composed YAML tree and records the (1-based) line of every mapping key.

    :return: Dictionary dotted key path → line number.
    """
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}{key_node.value}"
            lines[path] = key_node.start_mark.line + 1
            lines.update(_line_map(value_node, f"{path}."))
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            path = f"{prefix.rstrip('.')}[{index}]"
            lines[path] = item.start_mark.line + 1
            lines.update(_line_map(item, f"{path}."))
    return lines


def _coerce(value: Any, hint: Any, path: str, lines: Mapping[str, int]) -> Any:
    """
    Converts a loaded YAML value to the annotated field type, recursing into nested dataclasses.

    :raises ConfigurationError: if the value does not match the annotation.

    :return: The converted value.
    """
    line = lines.get(path)
    origin = get_origin(hint)
    if origin is Union:
        members = [member for member in get_args(hint) if member is not type(None)]
        if value is None:
            return None
        return _coerce(value, members[0], path, lines)
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, f"{path}.", lines)
    if origin in (list, List, tuple, Tuple):
        if not isinstance(value, list):
            raise ConfigurationError(f"{path} must be a list", line=line)
        item_hint = get_args(hint)[0]
        return [_coerce(item, item_hint, f"{path}[{index}]", lines) for index, item in enumerate(value)]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path} must be true or false", line=line)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path} must be an integer", line=line)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path} must be a number", line=line)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path} must be a string", line=line)
        return value
    raise ConfigurationError(f"{path} has an unsupported type", line=line)


def _build(cls: type, data: Any, prefix: str, lines: Mapping[str, int]) -> Any:
    """
    Instantiates the dataclass ``cls`` from a mapping, rejecting unknown keys.

    :return: The dataclass instance.
    """
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{prefix.rstrip('.') or 'config'} must be a mapping",
                                 line=lines.get(prefix.rstrip(".")))
    hints = get_type_hints(cls)
    known = {item.name for item in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in known:
            raise ConfigurationError(f"unknown key '{path}'", line=lines.get(path))
        kwargs[key] = _coerce(value, hints[key], path, lines)
    return cls(**kwargs)


def config_from_dict(data: Mapping[str, Any], lines: Mapping[str, int] = None) -> ExperimentConfig:
    """
    Builds and validates an :class:`ExperimentConfig` from plain data.

    :param Mapping[str, Any] data: nested configuration values.
    :param Mapping[str, int] lines: optional dotted key path → line number map.

    :raises ConfigurationError: if the data is malformed or violates an invariant.

    :return: The validated configuration.
    """
    lines = lines or {}
    config = _build(ExperimentConfig, data, "", lines)
    config.validate(lines)
    return config


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Loads an experiment configuration from a YAML file.

    :param path: location of the YAML file.

    :raises ConfigurationError: if the file is missing, is not valid YAML or is not a valid configuration.

    :return: The validated configuration.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise ConfigurationError(f"cannot read config file '{path}': {error.strerror}") from None
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as error:
        line = error.problem_mark.line + 1 if error.problem_mark is not None else None
        raise ConfigurationError(f"invalid YAML: {error.problem}", line=line) from None
    lines = _line_map(root) if root is not None else {}
    logger.debug("Loaded config %s (%d keys)", path, len(lines))
    return config_from_dict(data if data is not None else {}, lines)
