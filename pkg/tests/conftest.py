# -*- coding: utf-8 -*-

"""
Shared fixtures of the test suite: small experiment configurations built in code,
DP-unit factories for the allocator tests and the committed scenario configs.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import copy

from pathlib import Path
from typing import Any, Callable, Dict

import pytest
import yaml

from sbsim.config import ExperimentConfig, config_from_dict
from sbsim.core import DpId, DpUnitState
from sbsim.prefix_cache import PrefixCache

CONFIGS_DIR = Path(__file__).resolve().parents[1] / "configs"

SMALL_EXPERIMENT: Dict[str, Any] = {
    "name": "small",
    "seed": 7,
    "mode": "prefill_only",
    "scheduler": "sbs",
    "warmup_fraction": 0.0,
    "drain_s": 5.0,
    "cluster": {
        "n_instances_prefill": 2,
        "n_instances_decode": 1,
        "dp_degree": 2,
        "c_chunk": 3000,
        "t_default": 0.1,
    },
    "workload": {
        "arrival": "uniform",
        "rate": 20.0,
        "duration_s": 5.0,
        "prompt": {"law": "constant", "value": 500},
        "output": {"law": "constant", "value": 1},
    },
}


# ---------------------------------------- METHODS ----------------------------------------

def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


# --------------------------------------- FIXTURES ----------------------------------------

@pytest.fixture
def make_config() -> Callable[..., ExperimentConfig]:
    """
    Returns a factory building a validated experiment from the small two-instance setup,
    nested overrides being merged key by key.
    """
    def factory(**overrides: Any) -> ExperimentConfig:
        return config_from_dict(_merge(SMALL_EXPERIMENT, overrides))

    return factory


@pytest.fixture
def make_unit() -> Callable[..., DpUnitState]:
    """
    Returns a factory building a standalone DP unit with the requested headroom or decode state.
    """
    def factory(index: int = 0, c_avail: int = 3000, c_chunk: int = 3000, batch_size: int = 0, kv_load: int = 0,
                cache: PrefixCache = None) -> DpUnitState:
        return DpUnitState(dp_id=DpId(0, index), c_chunk=c_chunk, cache=cache or PrefixCache((64,), 0),
                           u_flight=c_chunk - c_avail, batch_size=batch_size, kv_load=kv_load)

    return factory


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS_DIR


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """
    Returns a factory writing the small two-instance setup, with overrides, to a YAML file.
    """
    def factory(name: str = "small.yaml", **overrides: Any) -> Path:
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(_merge(SMALL_EXPERIMENT, overrides), f, sort_keys=False)
        return path

    return factory
