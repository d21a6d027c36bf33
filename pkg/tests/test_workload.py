# -*- coding: utf-8 -*-

"""
Tests of the seeded workload generators.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import numpy as np
import pytest

from sbsim.config import LengthSpec, WorkloadSpec
from sbsim.exceptions import ConfigurationError
from sbsim.workload import (GROUP_TOKEN_STRIDE, WorkloadGenerator, arrival_times, clamped_lognormal_mean,
                            fit_lognormal_mu, generate, sample_lengths)


# ----------------------------------------- TESTS -----------------------------------------

@pytest.mark.parametrize("low, high, mean", [(1, 3000, 1000.0), (3000, 64000, 6700.0)])
def test_clamped_lognormal_hits_its_mean(low, high, mean):
    spec = LengthSpec(law="lognormal", low=low, high=high, mean=mean, sigma=1.0)
    assert clamped_lognormal_mean(fit_lognormal_mu(mean, 1.0, low, high), 1.0, low, high) == pytest.approx(mean)
    draws = sample_lengths(spec, np.random.default_rng(0), 100_000)
    assert draws.min() >= low
    assert draws.max() <= high
    assert draws.mean() == pytest.approx(mean, rel=0.05)


def test_fit_rejects_a_mean_outside_the_bounds():
    with pytest.raises(ConfigurationError):
        fit_lognormal_mu(5000.0, 1.0, 1, 3000)


def test_constant_and_uniform_lengths():
    rng = np.random.default_rng(1)
    assert list(sample_lengths(LengthSpec(law="constant", value=42), rng, 3)) == [42, 42, 42]
    draws = sample_lengths(LengthSpec(law="uniform", low=250, high=750), rng, 10_000)
    assert draws.min() >= 250
    assert draws.max() <= 750
    assert set(np.unique(draws)) >= {250, 750}


def test_uniform_arrivals_are_evenly_spaced():
    generator = WorkloadGenerator(WorkloadSpec(arrival="uniform", rate=8.0, duration_s=1.0), seed=0)
    assert [request.arrival_time for request in generator.requests()] == [k * 125_000_000 for k in range(8)]


def test_poisson_arrivals():
    times = arrival_times(WorkloadSpec(arrival="poisson", rate=100.0, duration_s=100.0), np.random.default_rng(2))
    assert np.all(np.diff(times) >= 0)
    assert times[-1] < 100.0
    assert abs(len(times) - 10_000) < 400


def test_same_seed_same_workload():
    spec = WorkloadSpec(arrival="poisson", rate=50.0, duration_s=10.0,
                        prompt=LengthSpec(law="lognormal", low=1, high=3000, mean=1000.0))
    first, digest = generate(spec, seed=5)
    second, same_digest = generate(spec, seed=5)
    assert digest == same_digest
    assert ([(r.arrival_time, r.prompt_len, r.output_len) for r in first]
            == [(r.arrival_time, r.prompt_len, r.output_len) for r in second])
    assert [r.id for r in first] == list(range(len(first)))
    _, other_digest = generate(spec, seed=6)
    assert other_digest != digest


def test_closed_workload_population_and_replacements():
    spec = WorkloadSpec(arrival="closed", concurrency=5, duration_s=10.0)
    generator = WorkloadGenerator(spec, seed=0)
    assert generator.closed
    population = generator.requests()
    assert [request.arrival_time for request in population] == [0] * 5
    replacement = generator.replacement(3_000_000_000)
    assert replacement.id == 5
    assert replacement.arrival_time == 3_000_000_000
    assert generator.replacement(10_000_000_000) is None


def test_open_workload_has_no_replacement():
    generator = WorkloadGenerator(WorkloadSpec(arrival="uniform", rate=1.0, duration_s=5.0), seed=0)
    assert not generator.closed
    assert generator.replacement(0) is None


def test_trace_replay_is_rejected():
    with pytest.raises(ConfigurationError):
        WorkloadGenerator(WorkloadSpec(arrival="trace"), seed=0)


def test_shared_prefix_tokens():
    spec = WorkloadSpec(arrival="uniform", rate=10.0, duration_s=2.0, prompt=LengthSpec(value=100),
                        shared_prefix_fraction=1.0, prefix_groups=2, prefix_len=4)
    for request in WorkloadGenerator(spec, seed=3, materialize=8).requests():
        head, tail = request.prefix_tokens[:4], request.prefix_tokens[4:]
        assert head[0] % GROUP_TOKEN_STRIDE == 0
        assert head[0] // GROUP_TOKEN_STRIDE in (0, 1)
        assert list(head) == list(range(head[0], head[0] + 4))
        assert tail == (-(request.id + 1),) * 4


def test_unshared_and_short_prompts():
    spec = WorkloadSpec(arrival="uniform", rate=10.0, duration_s=1.0, prompt=LengthSpec(value=3))
    requests = WorkloadGenerator(spec, seed=3, materialize=8).requests()
    assert all(request.prefix_tokens == (-(request.id + 1),) * 3 for request in requests)
    assert all(request.prefix_tokens == () for request in WorkloadGenerator(spec, seed=3).requests())
