"""
Geometric multigrid V-cycle for the SIPG operator.

Prolongation is the canonical embedding of the coarse DG space into the
fine one, applied direction by direction; restriction is its transpose.
Level 0 is solved exactly with a Cholesky factorization.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from dg_multigrid.core.basis import Basis1D
from dg_multigrid.core.models import KernelKind, Precision, SolverConfig
from dg_multigrid.core.operator import (DoFVector, GlobalOperator,
                                        OperationCounter)
from dg_multigrid.core.smoother import VertexPatchSmoother
from dg_multigrid.utils.common.validation import validate_level

logger = logging.getLogger("dg-multigrid.multigrid")


def embedding_matrices(basis: Basis1D) -> np.ndarray:
    """
    1D coarse-to-fine embedding, shape (2, k+1, k+1).

    E[c, i, j] applies fine functional i to phi_j((xi + c) / 2), the coarse
    function j seen from child c. Derivative functionals pick up 1/2.
    """
    matrices = []
    for child in (0, 1):
        points = 0.5 * (basis.functional_points + child)
        matrices.append(
            basis.functional_matrix(basis.values(points), 0.5 * basis.derivatives(points))
        )
    return np.stack(matrices)


class TransferOperator:
    """Tensor-product prolongation and restriction between levels."""

    def __init__(self, operator: GlobalOperator, counter: Optional[OperationCounter] = None) -> None:
        self.operator = operator
        self.counter = counter if counter is not None else operator.counter
        self.embedding = embedding_matrices(operator.basis)
        self._cast: Dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        return self.operator.dim

    def _matrices(self, dtype: np.dtype) -> np.ndarray:
        key = np.dtype(dtype).str
        if key not in self._cast:
            self._cast[key] = self.embedding.astype(dtype)
        return self._cast[key]

    def _count(self, count: int) -> None:
        if self.counter is not None:
            self.counter.record(count)

    def _check(self, level: int) -> None:
        finest = self.operator.hierarchy.finest_level
        if not 0 <= level < finest:
            raise ValueError(f"No transfer between level {level} and {level + 1}")

    def prolongate_array(self, level: int, coarse: np.ndarray) -> np.ndarray:
        """Embed a level-l array into level l+1."""
        self._check(level)
        embedding = self._matrices(coarse.dtype)
        dim, p = self.dim, self.operator.basis.size
        tensor = coarse.reshape(self.operator.tensor_shape(level))
        for direction in range(dim):
            cell_axis, local_axis = dim - 1 - direction, 2 * dim - 1 - direction
            work = np.moveaxis(tensor, (cell_axis, local_axis), (-2, -1))
            fine = np.einsum("aij,...nj->...nai", embedding, work)
            self._count(fine.size * p)
            fine = fine.reshape(work.shape[:-2] + (2 * work.shape[-2], p))
            tensor = np.moveaxis(fine, (-2, -1), (cell_axis, local_axis))
        return np.ascontiguousarray(tensor).reshape(-1)

    def restrict_array(self, level: int, fine: np.ndarray) -> np.ndarray:
        """Transpose of prolongate_array: level l+1 array to level l."""
        self._check(level)
        embedding = self._matrices(fine.dtype)
        dim, p = self.dim, self.operator.basis.size
        tensor = fine.reshape(self.operator.tensor_shape(level + 1))
        for direction in range(dim):
            cell_axis, local_axis = dim - 1 - direction, 2 * dim - 1 - direction
            work = np.moveaxis(tensor, (cell_axis, local_axis), (-2, -1))
            pairs = work.reshape(work.shape[:-2] + (work.shape[-2] // 2, 2, p))
            coarse = np.einsum("aij,...nai->...nj", embedding, pairs)
            self._count(pairs.size * p)
            tensor = np.moveaxis(coarse, (-2, -1), (cell_axis, local_axis))
        return np.ascontiguousarray(tensor).reshape(-1)

    def prolongate(self, level: int, coarse: DoFVector) -> DoFVector:
        """
        Embed a level-l vector into level l+1.

        Raises:
            ValueError: If the vector is not on level l or l is the finest
        """
        if coarse.level != level:
            raise ValueError(f"Vector on level {coarse.level} passed as level {level}")
        return DoFVector(level + 1, self.prolongate_array(level, coarse.values))

    def restrict(self, level: int, fine: DoFVector) -> DoFVector:
        """
        Restrict a level-(l+1) vector to level l.

        Raises:
            ValueError: If the vector is not on level l+1
        """
        if fine.level != level + 1:
            raise ValueError(f"Vector on level {fine.level} passed as level {level + 1}")
        return DoFVector(level, self.restrict_array(level, fine.values))


class MultigridPreconditioner:
    """
    V-cycle with vertex-patch smoothing and an exact coarse solve.

    Pre- and post-smoothing sweep the colors in the same forward order.
    Subclasses can replace _apply and _smooth to run levels elsewhere.
    """

    def __init__(
        self,
        operator: GlobalOperator,
        kernel: KernelKind,
        config: Optional[SolverConfig] = None,
        counter: Optional[OperationCounter] = None,
    ) -> None:
        self.operator = operator
        self.kernel = KernelKind(kernel)
        self.config = config or SolverConfig()
        self.counter = counter if counter is not None else operator.counter
        self.finest_level = operator.hierarchy.finest_level
        self.transfer = TransferOperator(operator, self.counter)
        self.smoothers: Dict[int, VertexPatchSmoother] = {
            level: VertexPatchSmoother(operator, level, self.kernel, counter=self.counter)
            for level in range(1, self.finest_level + 1)
        }
        self._coarse: Dict[str, Tuple[np.ndarray, bool]] = {}
        logger.info(
            f"Multigrid with {self.finest_level + 1} levels, "
            f"{operator.n_dofs(self.finest_level)} DoFs, kernel {self.kernel.value}"
        )

    def _coarse_factor(self, dtype: np.dtype) -> Tuple[np.ndarray, bool]:
        key = np.dtype(dtype).str
        if key not in self._coarse:
            matrix = np.asarray(self.operator.assemble(0)).astype(dtype)
            try:
                self._coarse[key] = cho_factor(matrix)
            except LinAlgError as e:
                raise LinAlgError(f"Coarse matrix factorization failed: {e}") from e
            logger.debug(f"Factorized coarse matrix of size {matrix.shape[0]} ({np.dtype(dtype)})")
        return self._coarse[key]

    def prepare(self, precision: Precision) -> None:
        """Build all level data for a floating point format eagerly."""
        dtype = Precision(precision).dtype
        for level in range(self.finest_level + 1):
            self.operator.level_matrices(level, dtype)
        for smoother in self.smoothers.values():
            smoother.prepare(dtype)
        self._coarse_factor(dtype)

    def coarse_solve(self, b: np.ndarray) -> np.ndarray:
        factor = self._coarse_factor(b.dtype)
        if self.counter is not None:
            self.counter.record(2 * factor[0].size)
        return cho_solve(factor, b).astype(b.dtype, copy=False)

    def _apply(self, level: int, x: np.ndarray) -> np.ndarray:
        return self.operator.matvec(level, x)

    def _smooth(self, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.smoothers[level].sweep(x, b)

    def _cycle(self, level: int, b: np.ndarray) -> np.ndarray:
        if level == 0:
            return self.coarse_solve(b)
        x = np.zeros_like(b)
        for _ in range(self.config.pre_smoothing):
            x = self._smooth(level, x, b)
        residual = b - self._apply(level, x)
        correction = self._cycle(level - 1, self.transfer.restrict_array(level - 1, residual))
        x = x + self.transfer.prolongate_array(level - 1, correction)
        for _ in range(self.config.post_smoothing):
            x = self._smooth(level, x, b)
        return x

    def v_cycle(self, b: DoFVector) -> DoFVector:
        """
        One V-cycle with zero initial guess on the finest level.

        Raises:
            ValueError: If b is not on the finest level
        """
        validate_level(b.level, self.finest_level)
        if b.level != self.finest_level:
            raise ValueError(f"V-cycle expects the finest level {self.finest_level}, got {b.level}")
        if len(b) != self.operator.n_dofs(b.level):
            raise ValueError("Right-hand side length does not match the finest level")
        return DoFVector(b.level, self._cycle(b.level, b.values))

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self._cycle(self.finest_level, np.asarray(v))


def level_work(operator: GlobalOperator) -> List[int]:
    """DoF counts per level, coarsest first."""
    return [operator.n_dofs(level) for level in range(operator.hierarchy.num_levels)]
