# -*- coding: utf-8 -*-

"""
Exceptions
**********

This module includes a set of classes to handle exceptions specific to the ``sbsim`` package.
"""


# ---------------------------------------- CLASSES ----------------------------------------

class SBSimException(Exception):
    """
    The :class:`SBSimException` is the base class for handling exceptions
    specific to the ``sbsim`` package.
    """

    def __init__(self, error_msg: str = "SBSim Exception") -> None:
        self.error_msg = error_msg

    def __str__(self) -> str:
        return self.error_msg


class ConfigurationError(SBSimException):
    """
    The :class:`ConfigurationError` is raised when an experiment or cluster configuration
    cannot be parsed or violates one of its invariants.

    :param str error_msg: description of the problem.
    :param int line: line of the offending key in the config file, if known.
    """

    def __init__(self, error_msg: str, line: int = None) -> None:
        self.line = line
        self.error_msg = f"line {line}: {error_msg}" if line is not None else error_msg


class InvalidRequestError(SBSimException):
    """
    The :class:`InvalidRequestError` is raised when a request is built with
    out-of-range lengths or counters.
    """

    error_types = {
        "prompt_len": "A request needs a prompt of at least one token",
        "output_len": "The output length of a request cannot be negative",
        "wait_cycles": "The wait-cycle counter of a request cannot be negative"
    }

    def __init__(self, error_type: str) -> None:
        self.error_msg = self.error_types.get(error_type)


class SimulationError(SBSimException):
    """
    The :class:`SimulationError` is raised when the simulation reaches a state that
    can only result from a bug (event scheduled in the past, broken invariant, ...).
    """

    def __init__(self, error_msg: str) -> None:
        self.error_msg = error_msg


class SloViolationError(SBSimException):
    """
    The :class:`SloViolationError` is raised when a run misses its latency objective
    or an acceptance check, or when the objective cannot be met at any probed rate.
    """

    def __init__(self, error_msg: str) -> None:
        self.error_msg = error_msg
