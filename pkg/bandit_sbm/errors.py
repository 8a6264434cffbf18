"""
Exception hierarchy and status codes shared across the simulation package
"""
from enum import Enum, IntEnum
from typing import Optional


class DetectionStatus(str, Enum):
    """Outcome of an iterative cluster-detection run"""
    CONVERGED = "converged"             # Assignment reached a fixed point
    MAX_ITERATIONS = "max_iterations"   # Iteration budget exhausted
    ABORTED = "aborted"                 # Estimation failed, last valid Z kept


class ExitCode(IntEnum):
    """Process exit codes of the command-line interface"""
    OK = 0
    ASSUMPTION_FAILED = 1
    INPUT_ERROR = 2
    IO_ERROR = 3


class BanditSbmError(Exception):
    """Base class for all package errors"""


class ConfigurationError(BanditSbmError):
    """Invalid model parameters or experiment configuration"""


class EdgeListParseError(BanditSbmError):
    """Malformed edge-list input"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"{message} at line {line_number}")
        self.line_number = line_number


class DegenerateAssignmentError(BanditSbmError):
    """Cluster assignment with at least one empty cluster"""


class InestimableSigmaError(BanditSbmError):
    """Graph-term covariance cannot be estimated (needs 0 < q < p < 1)

    The partially computed estimates travel with the exception so callers
    can fall back to a covariate-only refinement.
    """

    def __init__(self, message: str, estimates: Optional[object] = None):
        super().__init__(message)
        self.estimates = estimates


class TheoryParameterError(BanditSbmError):
    """Parameters outside the range a theorem is stated for"""


class DetectionError(BanditSbmError):
    """Cluster detection could not be started"""
