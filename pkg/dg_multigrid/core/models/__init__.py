"""
Type definitions and configuration for dg-multigrid.
"""

import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, TypedDict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from dg_multigrid.utils.common.constants import (
    DEFAULT_MAX_ITERATIONS, DEFAULT_MEMORY_CAP,
    DEFAULT_REORTHOGONALIZATION_THRESHOLD, DEFAULT_RTOL,
    DEFAULT_SMOOTHING_STEPS)
from dg_multigrid.utils.common.validation import estimate_memory_bytes


class BasisKind(str, Enum):
    """One-dimensional shape function families."""

    LAGRANGE = "lagrange"
    HERMITE = "hermite"


class KernelKind(str, Enum):
    """Local solver kernels of the vertex-patch smoother."""

    FULL = "full"
    DIRICHLET = "dirichlet"
    CLAMPED = "clamped"

    def local_size(self, degree: int) -> int:
        """Size of the 1D local space of an interior two-cell patch."""
        if self is KernelKind.FULL:
            return 2 * (degree + 1)
        if self is KernelKind.DIRICHLET:
            return 2 * degree
        return 2 * degree - 2

    @property
    def basis_kind(self) -> BasisKind:
        """Shape functions the kernel is defined for."""
        return BasisKind.HERMITE if self is KernelKind.CLAMPED else BasisKind.LAGRANGE


class Precision(str, Enum):
    """Floating point format of a vector or operator copy."""

    DOUBLE = "double"
    SINGLE = "single"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64 if self is Precision.DOUBLE else np.float32)

    @classmethod
    def from_dtype(cls, dtype: np.dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype == np.float64:
            return cls.DOUBLE
        if dtype == np.float32:
            return cls.SINGLE
        raise ValueError(f"Unsupported dtype {dtype}; expected float64 or float32")


class PrecisionMode(str, Enum):
    """Precision of the multigrid preconditioner inside GMRES."""

    DOUBLE = "double"
    MIXED = "mixed"


class BoundaryCondition(str, Enum):
    """Treatment of faces on the domain boundary."""

    WEAK_DIRICHLET = "weak-dirichlet"
    NONE = "none"


class LayoutKind(str, Enum):
    """Shared-memory layouts of a patch slice."""

    BASIC = "basic"
    CONFLICT_FREE = "conflict-free"


class OwnershipPolicy(str, Enum):
    """Rules deciding which rank smooths a patch that spans ranks."""

    FEWEST_GHOSTS = "fewest-ghosts"
    SMALLEST_CELL_INDEX = "smallest-cell-index"


class PatchPosition(int, Enum):
    """Where a two-cell patch sits along one direction of the mesh."""

    INTERIOR = 0
    LEFT = 1
    RIGHT = 2
    BOTH = 3


def _env_bool(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


# Configuration dataclass
@dataclass
class SolverConfig:
    """Configuration for GMRES and the multigrid preconditioner."""

    rtol: float = field(
        default_factory=lambda: float(os.environ.get("DGMG_RTOL", DEFAULT_RTOL))
    )
    max_iterations: int = field(
        default_factory=lambda: int(
            os.environ.get("DGMG_MAX_ITERATIONS", DEFAULT_MAX_ITERATIONS)
        )
    )
    precision: PrecisionMode = field(
        default_factory=lambda: PrecisionMode(
            os.environ.get("DGMG_PRECISION", PrecisionMode.DOUBLE.value)
        )
    )
    pre_smoothing: int = field(
        default_factory=lambda: int(
            os.environ.get("DGMG_PRE_SMOOTHING", DEFAULT_SMOOTHING_STEPS)
        )
    )
    post_smoothing: int = field(
        default_factory=lambda: int(
            os.environ.get("DGMG_POST_SMOOTHING", DEFAULT_SMOOTHING_STEPS)
        )
    )
    reorthogonalization_threshold: float = field(
        default_factory=lambda: float(
            os.environ.get(
                "DGMG_REORTHOGONALIZATION_THRESHOLD",
                DEFAULT_REORTHOGONALIZATION_THRESHOLD,
            )
        )
    )
    memory_cap_bytes: int = field(
        default_factory=lambda: int(os.environ.get("DGMG_MEMORY_CAP", DEFAULT_MEMORY_CAP))
    )
    debug: bool = field(default_factory=lambda: _env_bool("DGMG_DEBUG"))

    def __post_init__(self) -> None:
        self.precision = PrecisionMode(self.precision)
        if not 0.0 < self.rtol < 1.0:
            raise ValueError(f"rtol must lie in (0, 1), got {self.rtol}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.pre_smoothing < 0 or self.post_smoothing < 0:
            raise ValueError("Smoothing step counts must be >= 0")
        if self.reorthogonalization_threshold <= 0.0:
            raise ValueError("reorthogonalization_threshold must be positive")
        if self.memory_cap_bytes <= 0:
            raise ValueError("memory_cap_bytes must be positive")


class ExperimentSpec(BaseModel):
    """One solve experiment, validated before anything is allocated."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(3, ge=2, le=3)
    degree: int = Field(3, ge=1, le=7)
    levels: int = Field(2, ge=0, description="Index of the finest level L")
    kernel: KernelKind = KernelKind.FULL
    precision: PrecisionMode = PrecisionMode.DOUBLE
    ranks: int = Field(1, ge=1)
    rtol: float = Field(DEFAULT_RTOL, gt=0.0, lt=1.0)
    max_iterations: int = Field(DEFAULT_MAX_ITERATIONS, ge=1)
    memory_cap_bytes: int = Field(DEFAULT_MEMORY_CAP, gt=0)
    output: Optional[Path] = None

    @model_validator(mode="after")
    def check_consistency(self) -> "ExperimentSpec":
        problems: List[str] = []
        if self.kernel is KernelKind.CLAMPED and self.degree < 3:
            problems.append(
                f"clamped kernel needs a Hermite basis with degree >= 3, got {self.degree}"
            )
        slabs = 2 ** (self.levels + 1)
        if self.ranks > slabs:
            problems.append(
                f"ranks={self.ranks} exceeds the {slabs} cells along the slowest axis"
            )
        estimate = self.memory_estimate()
        if estimate > self.memory_cap_bytes:
            problems.append(
                f"estimated memory {estimate / 1024**3:.2f} GiB exceeds the cap of "
                f"{self.memory_cap_bytes / 1024**3:.2f} GiB"
            )
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @property
    def basis_kind(self) -> BasisKind:
        return self.kernel.basis_kind

    def memory_estimate(self) -> int:
        return estimate_memory_bytes(
            self.dim, self.degree, self.levels, self.max_iterations
        )

    def solver_config(self, debug: Optional[bool] = None) -> SolverConfig:
        """Solver settings of this experiment; debug falls back to DGMG_DEBUG."""
        config = SolverConfig(
            rtol=self.rtol,
            max_iterations=self.max_iterations,
            precision=self.precision,
            memory_cap_bytes=self.memory_cap_bytes,
        )
        if debug is not None:
            config.debug = debug
        return config


class SolveRow(TypedDict):
    """One row of the convergence CSV."""

    dim: int
    k: int
    L: int
    kernel: str
    precision: str
    ranks: int
    n: int
    nu: float
    final_relres: float
    status: str


class BankRow(TypedDict):
    """One row of the bank-conflict CSV."""

    k: int
    layout: str
    excess: int


class PhaseRow(TypedDict):
    """Per-phase bank statistics of one trace."""

    phase: str
    wavefronts: int
    excess: int


SOLVE_COLUMNS = (
    "dim",
    "k",
    "L",
    "kernel",
    "precision",
    "ranks",
    "n",
    "nu",
    "final_relres",
    "status",
)
BANK_COLUMNS = ("k", "layout", "excess")
PHASE_COLUMNS = ("phase", "wavefronts", "excess")
