"""
Shared constants, error helpers and validation for dg-multigrid.
"""

from dg_multigrid.utils.common.constants import ErrorCode
from dg_multigrid.utils.common.error_handling import (error_handler,
                                                      format_error,
                                                      handle_solver_error)
from dg_multigrid.utils.common.validation import (estimate_memory_bytes,
                                                  validate_dim,
                                                  validate_level)

__all__ = [
    "ErrorCode",
    "error_handler",
    "estimate_memory_bytes",
    "format_error",
    "handle_solver_error",
    "validate_dim",
    "validate_level",
]
