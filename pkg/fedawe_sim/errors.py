"""Exceptions raised by the simulator"""
from typing import Optional


class SimulationError(Exception):
    """Base error; optionally tagged with the round it happened in"""

    def __init__(self, message: str, round_index: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.round_index = round_index

    def with_round(self, round_index: int) -> "SimulationError":
        if self.round_index is None:
            self.round_index = round_index
        return self

    def __str__(self):
        if self.round_index is None:
            return self.message
        return f"round {self.round_index}: {self.message}"


class InvalidInputError(SimulationError, ValueError):
    pass


class NumericalDivergenceError(SimulationError, ArithmeticError):
    pass


class UnsupportedDynamicsError(SimulationError):
    pass


class ConfigError(SimulationError):
    """Bad experiment configuration, pointing at the dotted field name"""

    def __init__(self, field: str, reason: str):
        super().__init__(f"config field '{field}': {reason}")
        self.field = field
        self.reason = reason


class UsageError(InvalidInputError):
    """Malformed command line"""
