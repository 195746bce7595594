"""Exception hierarchy shared by the harness."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for every error raised by govharness."""


class ConfigError(HarnessError):
    """Invalid configuration or parameters out of their calibration range."""


class EmptyCaseSetError(ConfigError):
    pass


class StressError(HarnessError):
    """A stress transform was applied to an already stressed case set."""


class ContractError(HarnessError):
    """A function was called with inputs violating its precondition."""


class IntegrityError(HarnessError):
    """Commit-reveal or candidate-set integrity was violated."""


class PhaseOrderError(IntegrityError):
    """A pipeline phase ran out of order (e.g. reveal before scores were final)."""


class TransportError(HarnessError):
    """The model adapter could not be reached. Retriable."""


class ModelOutputError(HarnessError):
    """The model answered, but the answer could not be parsed."""
