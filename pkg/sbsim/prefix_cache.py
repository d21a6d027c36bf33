# -*- coding: utf-8 -*-

"""
Prefix Cache
************

This module contains the per-DP prefix-cache stub: a map from the hash of the first ``k``
prompt tokens (for ``k`` in the configured probe lengths) to the cached token count,
evicted in LRU order once the DP's token budget is exceeded.
"""

# ---------------------------------------- IMPORTS ----------------------------------------

import hashlib

from collections import OrderedDict
from typing import Sequence, Tuple

import numpy as np


# ---------------------------------------- METHODS ----------------------------------------

def prefix_key(tokens: Sequence[int], length: int) -> str:
    """
    Hashes the first ``length`` token ids of a prompt.

    :param Sequence[int] tokens: token ids of the prompt prefix.
    :param int length: number of leading tokens to hash.

    :return: Hexadecimal BLAKE2b digest identifying the prefix.
    """
    data = np.asarray(tokens[:length], dtype=np.int64).tobytes()
    return hashlib.blake2b(data, digest_size=16).hexdigest()


# ----------------------------------------- CLASS -----------------------------------------

class PrefixCache:
    """
    The :class:`PrefixCache` approximates the KV prefix cache held by one DP unit.

    :param Tuple[int, ...] probe_lengths: prefix lengths looked up and inserted.
    :param int budget_tokens: maximum number of cached tokens before LRU eviction.
    """

    def __init__(self, probe_lengths: Tuple[int, ...], budget_tokens: int) -> None:
        self.probe_lengths = tuple(sorted(set(probe_lengths)))
        self.budget_tokens = budget_tokens
        self.__entries: "OrderedDict[str, int]" = OrderedDict()
        self.__used_tokens = 0

    def __len__(self) -> int:
        return len(self.__entries)

    def __str__(self) -> str:
        return f"<PrefixCache - {len(self.__entries)} prefixes, {self.__used_tokens} tokens>"

    @property
    def used_tokens(self) -> int:
        """
        Returns the number of tokens currently accounted to the cache.

        :return: Cached token count.
        """
        return self.__used_tokens

    def longest_match(self, tokens: Sequence[int], prompt_len: int, touch: bool = False) -> int:
        """
        Looks up the longest probe-length prefix of ``tokens`` present in the cache.

        :param Sequence[int] tokens: materialised leading token ids of the prompt.
        :param int prompt_len: full prompt length; probes longer than the prompt are skipped.
        :param bool touch: refresh the LRU position of the matched entry.

        :return: Matched prefix length in tokens (0 when nothing matches).
        """
        for length in reversed(self.probe_lengths):
            if length > len(tokens) or length > prompt_len:
                continue
            key = prefix_key(tokens, length)
            if key in self.__entries:
                if touch:
                    self.__entries.move_to_end(key)
                return self.__entries[key]
        return 0

    def insert(self, tokens: Sequence[int], prompt_len: int) -> None:
        """
        Records every probe-length prefix of a prompt whose prefill just completed.

        :param Sequence[int] tokens: materialised leading token ids of the prompt.
        :param int prompt_len: full prompt length.

        :return: None
        """
        for length in self.probe_lengths:
            if length > len(tokens) or length > prompt_len:
                break
            key = prefix_key(tokens, length)
            if key in self.__entries:
                self.__entries.move_to_end(key)
                continue
            self.__entries[key] = length
            self.__used_tokens += length
        while self.__used_tokens > self.budget_tokens and self.__entries:
            _, evicted = self.__entries.popitem(last=False)
            self.__used_tokens -= evicted
