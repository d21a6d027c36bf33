# -*- coding: utf-8 -*-

"""
Parameters
**********

This module contains the default parameters that control how the simulated cluster
and its schedulers behave. Every value can be overridden from the experiment config file.
"""

# Tokens a single DP unit can process in one prefill forward pass.
# Defaults to 3000 tokens
C_CHUNK = 3000

# Data-parallel units per instance.
# Defaults to 8
DP_DEGREE = 8

# Forward time (in seconds) assumed before any EndForward has been measured.
# Defaults to 0.4 seconds
T_DEFAULT = 0.4

# Length of the sliding window of measured forward times.
# Defaults to 64 samples
W_SIZE = 64

# Network latency (in seconds) added to the forward time when computing the interval.
# Defaults to 0 seconds
L_NET = 0.0

# Consecutive failed allocation cycles tolerated before a request is throttled.
# Defaults to 8 cycles
N_LIMIT = 8

# IQR multiplier of the decode outlier mask.
# Defaults to 1.5
IQR_K = 1.5

# Watchdog timeout, as a multiple of the smoothed forward time.
# Defaults to 5
WATCHDOG_MULTIPLIER = 5.0

# Batching window (in seconds) of the decode dispatcher.
# Defaults to 10 milliseconds
DECODE_INTERVAL = 0.01

# Output tokens produced per resident request in one decode step.
# Defaults to 1 token
TOKENS_PER_STEP = 1

# Fixed prefill pass overhead (in seconds).
# Defaults to 40 milliseconds
PREFILL_BASE = 0.04

# Prefill cost (in seconds) per token of the most loaded DP unit.
# Defaults to 120 microseconds
PREFILL_PER_TOKEN = 1.2e-4

# Fixed decode step overhead (in seconds).
# Defaults to 2 milliseconds
DECODE_BASE = 0.002

# Decode cost (in seconds) per resident request on the slowest DP unit.
# Defaults to 400 microseconds
DECODE_PER_REQUEST = 4e-4

# Decode cost (in seconds) per cached KV token on the slowest DP unit.
# Defaults to 0.1 microseconds
DECODE_PER_KV_TOKEN = 1e-7

# Prefix lengths (in tokens) probed in the per-DP prefix cache.
PROBE_LENGTHS = (64, 256, 1024)

# Token budget of each DP unit's prefix cache.
# Defaults to 200000 tokens
CACHE_BUDGET_TOKENS = 200_000

# Fraction of the simulated duration excluded from steady-state metrics.
# Defaults to 10%
WARMUP_FRACTION = 0.1

# Extra simulated time (in seconds) granted after the last arrival so in-flight requests complete.
# Defaults to 30 seconds
DRAIN_S = 30.0
