"""
Validation utilities for dg-multigrid.

This module contains the shared precondition checks and the
memory estimate used to refuse oversized experiments.
"""

from typing import Collection


def validate_dim(dim: int, allowed: Collection[int] = (2, 3)) -> int:
    """
    Check a spatial dimension.

    Raises:
        ValueError: If the dimension is not supported
    """
    if dim not in allowed:
        supported = ", ".join(str(d) for d in sorted(allowed))
        raise ValueError(f"Invalid dimension {dim}; supported: {supported}")
    return dim


def validate_level(level: int, finest: int) -> int:
    """
    Check that a level index lies in 0..finest.

    Raises:
        ValueError: If the level is out of range
    """
    if not 0 <= level <= finest:
        raise ValueError(f"Level {level} out of range 0..{finest}")
    return level


def count_dofs(dim: int, degree: int, level: int) -> int:
    """Number of DG unknowns on a level of the unit-cube hierarchy."""
    return 2 ** ((level + 1) * dim) * (degree + 1) ** dim


def estimate_memory_bytes(
    dim: int, degree: int, finest_level: int, max_iterations: int
) -> int:
    """
    Estimate the peak memory of a preconditioned GMRES solve.

    Counts the two Krylov bases, a handful of work vectors on every level,
    the batched patch data of the finest smoother and the dense coarse
    factorization, all in double precision.

    Args:
        dim: Spatial dimension
        degree: Polynomial degree
        finest_level: Index of the finest level
        max_iterations: GMRES iteration limit

    Returns:
        Estimated number of bytes
    """
    word = 8
    finest = count_dofs(dim, degree, finest_level)
    all_levels = sum(count_dofs(dim, degree, lvl) for lvl in range(finest_level + 1))
    krylov = 2 * (max_iterations + 1) * finest
    work = 8 * all_levels
    # patches carry 2^dim cells each and roughly one patch per cell
    patches = 3 * (2**dim) * finest
    coarse = count_dofs(dim, degree, 0) ** 2
    return word * (krylov + work + patches + coarse)
