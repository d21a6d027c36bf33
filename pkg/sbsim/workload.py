# -*- coding: utf-8 -*-

"""
Workload
********

This module contains the seeded request generators.

Open workloads (``poisson``, ``uniform``) are materialised up front. Closed workloads keep ``concurrency``
requests in the system: the initial population arrives at time zero and every completion spawns a replacement
until the configured duration ends.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import dataclasses
import hashlib
import json
import logging
import math

from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from sbsim.config import LengthSpec, WorkloadSpec
from sbsim.core import Request, to_ns
from sbsim.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# Token-id offset separating the synthetic system prompts of two prefix groups.
GROUP_TOKEN_STRIDE = 1_000_000


# ---------------------------------------- METHODS ----------------------------------------

def _normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def clamped_lognormal_mean(mu: float, sigma: float, low: float, high: float) -> float:
    """
    Mean of ``clip(X, low, high)`` for ``X ~ LogNormal(mu, sigma)``.

    :return: The clamped mean.
    """
    log_low, log_high = math.log(low), math.log(high)
    below = _normal_cdf((log_low - mu) / sigma)
    above = 1.0 - _normal_cdf((log_high - mu) / sigma)
    inside = math.exp(mu + sigma ** 2 / 2) * (_normal_cdf((log_high - mu - sigma ** 2) / sigma)
                                               - _normal_cdf((log_low - mu - sigma ** 2) / sigma))
    return low * below + high * above + inside


@lru_cache(maxsize=None)
def fit_lognormal_mu(mean: float, sigma: float, low: float, high: float, iterations: int = 200) -> float:
    """
    Finds by bisection the location ``mu`` whose clamped lognormal has the requested mean.

    :raises ConfigurationError: if ``mean`` does not lie strictly between ``low`` and ``high``.

    :return: The fitted ``mu``.
    """
    if not low < mean < high:
        raise ConfigurationError(f"clamped lognormal mean {mean} outside ({low}, {high})")
    lo, hi = math.log(low) - 20 * sigma, math.log(high) + 20 * sigma
    for _ in range(iterations):
        mid = (lo + hi) / 2
        if clamped_lognormal_mean(mid, sigma, low, high) < mean:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def sample_lengths(spec: LengthSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    """
    Draws token lengths following a :class:`LengthSpec`.

    :param LengthSpec spec: length law.
    :param np.random.Generator rng: seeded generator.
    :param int size: number of draws.

    :return: Integer array of lengths, within the law's bounds.
    """
    if spec.law == "constant":
        return np.full(size, spec.value, dtype=np.int64)
    if spec.law == "uniform":
        return rng.integers(spec.low, spec.high + 1, size=size, dtype=np.int64)
    mu = fit_lognormal_mu(spec.mean, spec.sigma, spec.low, spec.high)
    draws = rng.lognormal(mu, spec.sigma, size=size)
    return np.clip(np.rint(draws), spec.low, spec.high).astype(np.int64)


def arrival_times(spec: WorkloadSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Draws the arrival instants of an open workload within ``[0, duration_s)``.

    :return: Sorted array of arrival times in seconds.
    """
    if spec.arrival == "uniform":
        count = int(math.ceil(spec.duration_s * spec.rate - 1e-9))
        return np.arange(count, dtype=float) / spec.rate
    expected = int(spec.duration_s * spec.rate * 1.2) + 16
    times = np.cumsum(rng.exponential(1.0 / spec.rate, size=expected))
    while times[-1] < spec.duration_s:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / spec.rate, size=expected))
        times = np.concatenate([times, more])
    return times[times < spec.duration_s]


# ----------------------------------------- CLASS -----------------------------------------

class WorkloadGenerator:
    """
    The :class:`WorkloadGenerator` produces the requests of an experiment, identically for identical
    ``(spec, seed)``.

    :param WorkloadSpec spec: workload description.
    :param int seed: random seed.
    :param int materialize: number of leading token ids materialised per request (0 disables tokens).
    """

    def __init__(self, spec: WorkloadSpec, seed: int, materialize: int = 0) -> None:
        if spec.arrival == "trace":
            raise ConfigurationError("'trace' replay is not implemented")
        self.spec = spec
        self.seed = seed
        self.materialize = materialize
        self.__rng = np.random.default_rng(seed)
        self.__next_id = 0
        self.__digest = hashlib.blake2b(digest_size=16)
        self.__digest.update(json.dumps(dataclasses.asdict(spec), sort_keys=True).encode())
        self.__digest.update(str(seed).encode())

    @property
    def closed(self) -> bool:
        """
        Indicates whether completions spawn replacement requests.

        :return: ``True`` for a closed workload.
        """
        return self.spec.arrival == "closed"

    @property
    def digest(self) -> str:
        """
        Returns the BLAKE2b digest of the generator parameters and every request materialised so far
        by :meth:`requests`.

        :return: Hexadecimal digest.
        """
        return self.__digest.hexdigest()

    def requests(self) -> List[Request]:
        """
        Materialises the requests known before the run starts: the full arrival stream of an open workload,
        or the initial population of a closed one.

        :return: Requests in arrival order, ids ``0, 1, ...``.
        """
        if self.closed:
            times = np.zeros(self.spec.concurrency)
        else:
            times = arrival_times(self.spec, self.__rng)
        requests = self.__build(times)
        self.__digest.update(np.asarray([to_ns(t) for t in times], dtype=np.int64).tobytes())
        self.__digest.update(np.asarray([(r.prompt_len, r.output_len) for r in requests], dtype=np.int64).tobytes())
        logger.debug("Generated %d requests (%s arrivals)", len(requests), self.spec.arrival)
        return requests

    def replacement(self, now: int) -> Optional[Request]:
        """
        Spawns the request replacing a completed one in a closed workload.

        :param int now: completion time in nanoseconds.

        :return: A request arriving at ``now``, or ``None`` for open workloads and past the duration.
        """
        if not self.closed or now >= to_ns(self.spec.duration_s):
            return None
        return self.__build(np.asarray([now / 1e9]), arrival_ns=[now])[0]

    def __build(self, times: np.ndarray, arrival_ns: List[int] = None) -> List[Request]:
        size = len(times)
        prompts = sample_lengths(self.spec.prompt, self.__rng, size)
        outputs = sample_lengths(self.spec.output, self.__rng, size)
        shared = self.__rng.random(size) < self.spec.shared_prefix_fraction
        groups = self.__rng.integers(0, self.spec.prefix_groups, size=size)
        arrival_ns = arrival_ns or [to_ns(t) for t in times]
        requests = []
        for index in range(size):
            request_id = self.__next_id
            self.__next_id += 1
            prompt_len = int(prompts[index])
            tokens = self.__tokens(request_id, prompt_len, bool(shared[index]), int(groups[index]))
            requests.append(Request(id=request_id, arrival_time=arrival_ns[index], prompt_len=prompt_len,
                                    output_len=int(outputs[index]), prefix_tokens=tokens))
        return requests

    def __tokens(self, request_id: int, prompt_len: int, shared: bool, group: int) -> Tuple[int, ...]:
        length = min(self.materialize, prompt_len)
        if length == 0:
            return ()
        common = min(self.spec.prefix_len, length) if shared else 0
        head = tuple(range(group * GROUP_TOKEN_STRIDE, group * GROUP_TOKEN_STRIDE + common))
        return head + (-(request_id + 1),) * (length - common)


def generate(spec: WorkloadSpec, seed: int, materialize: int = 0) -> Tuple[List[Request], str]:
    """
    Generates the requests of a workload.

    :param WorkloadSpec spec: workload description.
    :param int seed: random seed.
    :param int materialize: number of leading token ids materialised per request.

    :raises ConfigurationError: for the unimplemented ``trace`` arrival process.

    :return: The requests known before the run starts and the workload digest.
    """
    generator = WorkloadGenerator(spec, seed, materialize)
    requests = generator.requests()
    return requests, generator.digest
