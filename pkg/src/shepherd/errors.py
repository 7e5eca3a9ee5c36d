"""Exception hierarchy.

Validation problems derive from ``ShepherdError`` and map to CLI exit code 1;
``TransportError`` subclasses (remote services, workspaces) map to exit code 2.
"""

from __future__ import annotations


class ShepherdError(Exception):
    """Base class for all package errors."""


class TransportError(ShepherdError):
    """Failure talking to something outside the process."""


class MalformedRecord(ShepherdError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class TaskMismatch(ShepherdError, ValueError):
    pass


class EmptyTrajectory(ShepherdError, ValueError):
    pass


class InvalidTrajectory(ShepherdError, ValueError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class InvalidTask(ShepherdError, ValueError):
    pass


class EmptyInput(ShepherdError, ValueError):
    pass


class IndexOutOfRange(ShepherdError, IndexError):
    pass


class UnknownTask(ShepherdError, KeyError):
    pass


class UnlabeledTrajectory(ShepherdError, ValueError):
    pass


class EmptyDataset(ShepherdError, ValueError):
    pass


class DivergenceDetected(ShepherdError, ArithmeticError):
    pass


class InsufficientSamples(ShepherdError, ValueError):
    pass


class ScorerUnavailable(TransportError):
    pass


class ProtocolError(TransportError):
    pass


class EnvironmentTerminated(ShepherdError, RuntimeError):
    pass


class WorkspaceSetupFailed(TransportError):
    pass


class PolicyUnavailable(TransportError):
    pass


class EmptyCompletion(ShepherdError, ValueError):
    pass


class ScriptExhausted(ShepherdError, LookupError):
    pass


class LengthMismatch(ShepherdError, ValueError):
    pass


class EmptyCandidates(ShepherdError, ValueError):
    pass


class EmptyResults(ShepherdError, ValueError):
    pass


class MissingLabels(ShepherdError, ValueError):
    pass


class ConfigError(ShepherdError, ValueError):
    def __init__(self, key_path: str, reason: str):
        super().__init__(f"{key_path}: {reason}")
        self.key_path = key_path
