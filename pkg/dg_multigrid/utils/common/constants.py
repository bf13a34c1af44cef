"""
Constants used throughout the dg-multigrid codebase.

Centralizing constants helps reduce code duplication and makes
maintenance easier.
"""

# Solver settings
DEFAULT_RTOL = 1e-8
DEFAULT_MAX_ITERATIONS = 100
DEFAULT_REORTHOGONALIZATION_THRESHOLD = 1e-8
DEFAULT_SMOOTHING_STEPS = 1

# Resource limits
DEFAULT_MEMORY_CAP = 8 * 1024**3  # 8 GiB
DENSE_ASSEMBLY_LIMIT = 400_000_000  # matrix entries

# Shared memory model
BYTES_PER_BANK_CYCLE = 128
WARP_SIZE = 32
MIN_BANK_DEGREE = 3
MAX_BANK_DEGREE = 7


class ErrorCode:
    """Error codes for dg-multigrid errors."""

    INVALID_INPUT = "invalid_input"
    NOT_CONVERGED = "not_converged"
    NUMERICAL_ERROR = "numerical_error"
    MEMORY_LIMIT = "memory_limit"
    FILE_ERROR = "file_error"
    PERMISSION_ERROR = "permission_error"
    UNKNOWN_ERROR = "unknown_error"
