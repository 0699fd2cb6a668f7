"""
Error Schemas
Error codes, exit-status mapping and the exception hierarchy.
"""
from typing import Optional, Tuple

from pydantic import BaseModel, Field


class ErrorDetail(BaseModel):
    """Error detail rendered by the CLI."""
    code: str = Field(description="Machine-readable error code")
    message: str = Field(description="Human-readable error message")
    exit_code: int = Field(description="Process exit status")
    context: Optional[dict] = Field(
        default=None,
        description="Where the error happened (line, step, policy, field path)"
    )

    model_config = {
        "json_schema_extra": {
            "example": {
                "code": "TRACE_FORMAT",
                "message": "line 2: future token access",
                "exit_code": 2,
                "context": {"line": 2},
            }
        }
    }


# ============================================================================
# Error Codes
# ============================================================================

class ErrorCodes:
    """Standard error codes."""

    # Input errors
    CONFIG_INVALID = "CONFIG_INVALID"
    SPEC_INVALID = "SPEC_INVALID"
    TRACE_NOT_FOUND = "TRACE_NOT_FOUND"
    TRACE_FORMAT = "TRACE_FORMAT"
    SCORE_FORMAT = "SCORE_FORMAT"

    # Simulation errors
    CAPACITY_EXCEEDED = "CAPACITY_EXCEEDED"
    INFEASIBLE_DECISION = "INFEASIBLE_DECISION"
    PLACEMENT_LOGIC = "PLACEMENT_LOGIC"
    COMPARISON_MISMATCH = "COMPARISON_MISMATCH"

    # Everything else
    INTERNAL_ERROR = "INTERNAL_ERROR"


# Error code to process exit status mapping
EXIT_CODES = {
    ErrorCodes.CONFIG_INVALID: 2,
    ErrorCodes.SPEC_INVALID: 2,
    ErrorCodes.TRACE_NOT_FOUND: 2,
    ErrorCodes.TRACE_FORMAT: 2,
    ErrorCodes.SCORE_FORMAT: 2,
    ErrorCodes.CAPACITY_EXCEEDED: 3,
    ErrorCodes.INFEASIBLE_DECISION: 3,
    ErrorCodes.PLACEMENT_LOGIC: 3,
    ErrorCodes.COMPARISON_MISMATCH: 3,
    ErrorCodes.INTERNAL_ERROR: 1,
}


# ============================================================================
# Exceptions
# ============================================================================

class KVTierError(Exception):
    """Base error carrying a machine-readable code."""

    code = ErrorCodes.INTERNAL_ERROR

    def __init__(self, message: str, context: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.context = context or {}

    @property
    def exit_code(self) -> int:
        return EXIT_CODES.get(self.code, 1)

    def detail(self) -> ErrorDetail:
        return ErrorDetail(
            code=self.code,
            message=self.message,
            exit_code=self.exit_code,
            context=self.context or None,
        )

    def __reduce__(self):
        # Subclass constructors differ; rebuild from state so errors cross process pools.
        return _restore_error, (type(self), self.message, self.__dict__)


def _restore_error(cls, message: str, state: dict) -> KVTierError:
    exc = cls.__new__(cls)
    Exception.__init__(exc, message)
    exc.__dict__.update(state)
    return exc


class ConfigError(KVTierError):
    """Invalid experiment configuration or memory configuration."""
    code = ErrorCodes.CONFIG_INVALID


class SpecError(KVTierError):
    """Invalid synthetic trace parameters."""
    code = ErrorCodes.SPEC_INVALID


class TraceNotFoundError(KVTierError):
    code = ErrorCodes.TRACE_NOT_FOUND

    def __init__(self, path: str):
        super().__init__(f"trace file not found: {path}", {"path": path})


class TraceFormatError(KVTierError):
    """Trace file parse failure at a specific line."""
    code = ErrorCodes.TRACE_FORMAT

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}", {"line": line_no, "reason": reason})
        self.line_no = line_no
        self.reason = reason


class ScoreFormatError(KVTierError):
    """Attention-score stream failure at a specific (n, l)."""
    code = ErrorCodes.SCORE_FORMAT

    def __init__(self, step: Tuple[int, int], reason: str):
        n, l = step
        super().__init__(f"step (n={n}, l={l}): {reason}", {"n": n, "l": l, "reason": reason})
        self.step = step
        self.reason = reason


class CapacityError(KVTierError):
    """Model weights alone do not fit in HBM, or DRAM cannot hold the KV footprint."""
    code = ErrorCodes.CAPACITY_EXCEEDED


class InfeasibleDecisionError(KVTierError):
    """A decision would push HBM occupancy past capacity."""
    code = ErrorCodes.INFEASIBLE_DECISION


class PlacementLogicError(KVTierError):
    """A decision references entries that are not where it claims."""
    code = ErrorCodes.PLACEMENT_LOGIC


class ComparisonError(KVTierError):
    """Two reports from different traces or memory systems were compared."""
    code = ErrorCodes.COMPARISON_MISMATCH


def format_validation_error(exc) -> str:
    """Flatten a pydantic ValidationError into `field.path: message` lines."""
    lines = []
    for err in exc.errors():
        loc = ".".join(str(part) for part in err.get("loc", ())) or "<root>"
        lines.append(f"{loc}: {err.get('msg', 'invalid value')}")
    return "; ".join(lines)
