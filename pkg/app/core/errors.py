"""
Error Hierarchy
Exceptions raised by the toolkit, each carrying the CLI exit code it maps to
and a machine-readable record for the error.json artifact
"""

from typing import Any, Dict


def _jsonable(value: Any) -> Any:
    """Coerce numpy scalars and tuples into plain JSON types"""
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if hasattr(value, "item"):
        return value.item()
    return value


class FunnelKitError(Exception):
    """Base class for every failure the toolkit reports to the user"""

    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": _jsonable(self.details),
        }


class InputValidationError(FunnelKitError):
    """Bad configuration, bad parameters or mismatched dimensions"""

    exit_code = 1


class ExpressionSyntaxError(InputValidationError):
    """Dynamics DSL could not be parsed; `position` is the character offset"""

    def __init__(self, message: str, position: int, **details: Any):
        super().__init__(f"{message} at position {position}", position=position, **details)
        self.position = position


class EvaluationError(FunnelKitError):
    """Right-hand side produced a non-finite value"""

    exit_code = 1


class CapacityError(FunnelKitError):
    """A configured cap (words, steps, levels, net points) would be exceeded"""

    exit_code = 2


class DivergenceError(FunnelKitError):
    """A trajectory left the a-priori bound or became non-finite"""

    exit_code = 3
