"""
Matrix-free SIPG operator on a mesh hierarchy.

The global operator on a Cartesian level is a sum over directions of a
block-tridiagonal 1D SIPG matrix in that direction times cell mass
matrices in the others. Vectors are stored cell-wise lexicographically:
global index = cell * (k+1)^dim + local index, x fastest in both. Viewed
as a tensor of shape (n,)*dim + (k+1,)*dim, direction i lives on cell
axis dim-1-i and local axis 2*dim-1-i.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import scipy.sparse

from dg_multigrid.core.basis import (Basis1D, SIPGTerms, assemble_mass_1d,
                                     assemble_stiffness_1d, diagonal_blocks,
                                     gauss_quadrature, make_basis,
                                     penalty_parameter, sipg_terms)
from dg_multigrid.core.mesh import MeshHierarchy
from dg_multigrid.core.models import (BasisKind, BoundaryCondition,
                                      Precision)
from dg_multigrid.utils.common.constants import DENSE_ASSEMBLY_LIMIT
from dg_multigrid.utils.common.validation import validate_level

logger = logging.getLogger("dg-multigrid.operator")

Matrix = Union[np.ndarray, scipy.sparse.csr_matrix]


@dataclass(frozen=True)
class DoFVector:
    """Coefficient vector on one level in cell-wise lexicographic order."""

    level: int
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.ndim != 1:
            raise ValueError("DoFVector values must be one-dimensional")
        Precision.from_dtype(self.values.dtype)

    @property
    def precision(self) -> Precision:
        return Precision.from_dtype(self.values.dtype)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def zeros(
        cls, level: int, size: int, precision: Precision = Precision.DOUBLE
    ) -> "DoFVector":
        return cls(level, np.zeros(size, dtype=Precision(precision).dtype))

    def astype(self, precision: Precision) -> "DoFVector":
        return DoFVector(self.level, self.values.astype(Precision(precision).dtype))


@dataclass
class OperationCounter:
    """Tally of multiply-adds issued by tensor contractions; safe across threads."""

    multiply_adds: int = 0
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False, compare=False
    )

    def record(self, count: int) -> None:
        with self._lock:
            self.multiply_adds += int(count)

    def reset(self) -> None:
        with self._lock:
            self.multiply_adds = 0


def apply_operation_model(dim: int, degree: int) -> int:
    """Multiply-adds per cell of one sum-factorized operator application."""
    return dim * (dim + 2) * (degree + 1) ** (dim + 1)


def contract_axis(
    tensor: np.ndarray,
    matrix: np.ndarray,
    axis: int,
    counter: Optional[OperationCounter] = None,
) -> np.ndarray:
    """out[..., i, ...] = sum_j matrix[i, j] tensor[..., j, ...] along axis."""
    result = np.moveaxis(np.tensordot(tensor, matrix, axes=([axis], [1])), -1, axis)
    if counter is not None:
        counter.record(result.size * matrix.shape[1])
    return result


@dataclass(frozen=True)
class KroneckerCellOperator:
    """Cell volume operator sum_i L_i (x) M_others for identical 1D factors."""

    mass: np.ndarray
    stiffness: np.ndarray
    dim: int

    @property
    def size(self) -> int:
        return self.mass.shape[0] ** self.dim

    def apply(self, v: np.ndarray) -> np.ndarray:
        p = self.mass.shape[0]
        if v.size != self.size:
            raise ValueError(f"Expected a cell vector of length {self.size}, got {v.size}")
        tensor = v.reshape((p,) * self.dim)
        result = np.zeros_like(tensor, dtype=np.result_type(tensor, self.mass))
        for direction in range(self.dim):
            term = tensor
            for other in range(self.dim):
                factor = self.stiffness if other == direction else self.mass
                term = contract_axis(term, factor, self.dim - 1 - other)
            result = result + term
        return result.reshape(-1)

    def matrix(self) -> np.ndarray:
        total = np.zeros((self.size, self.size))
        for direction in range(self.dim):
            term = np.ones((1, 1))
            for other in reversed(range(self.dim)):
                term = np.kron(term, self.stiffness if other == direction else self.mass)
            total += term
        return total


def cell_operator(
    k: int, dim: int, h: float, basis_kind: BasisKind = BasisKind.LAGRANGE
) -> KroneckerCellOperator:
    """Kronecker form of the cell volume matrix of the Laplacian."""
    if k < 1:
        raise ValueError(f"Degree must be >= 1, got {k}")
    basis = make_basis(basis_kind, k)
    return KroneckerCellOperator(
        mass=assemble_mass_1d(basis, h).values,
        stiffness=assemble_stiffness_1d(basis, h).values,
        dim=dim,
    )


@dataclass(frozen=True)
class LevelMatrices:
    """1D data of one level in one floating point format."""

    mass: np.ndarray
    diagonal: np.ndarray
    upper: np.ndarray
    terms: SIPGTerms

    @property
    def lower(self) -> np.ndarray:
        return self.upper.T


class GlobalOperator:
    """
    Matrix-free SIPG Laplacian with weak Dirichlet conditions.

    Cell-wise (apply) and patch-wise (apply_patchwise) loops give the same
    action; assemble() builds an independent quadrature-based matrix.
    """

    def __init__(
        self,
        hierarchy: MeshHierarchy,
        degree: int,
        basis_kind: BasisKind = BasisKind.LAGRANGE,
        *,
        penalty_scale: float = 1.0,
        bc: BoundaryCondition = BoundaryCondition.WEAK_DIRICHLET,
        counter: Optional[OperationCounter] = None,
    ) -> None:
        self.hierarchy = hierarchy
        self.degree = degree
        self.basis_kind = BasisKind(basis_kind)
        self.basis: Basis1D = make_basis(self.basis_kind, degree)
        self.penalty_scale = penalty_scale
        self.bc = BoundaryCondition(bc)
        self.counter = counter
        self._cache: Dict[Tuple[int, str], LevelMatrices] = {}
        self._cache_lock = threading.Lock()

    @property
    def dim(self) -> int:
        return self.hierarchy.dim

    @property
    def dofs_per_cell(self) -> int:
        return self.basis.size**self.dim

    def n_dofs(self, level: int) -> int:
        return self.hierarchy.n_cells(level) * self.dofs_per_cell

    def level_matrices(self, level: int, dtype: np.dtype = np.dtype(np.float64)) -> LevelMatrices:
        """Cached 1D matrices of a level, converted to dtype."""
        dtype = np.dtype(dtype)
        key = (level, dtype.str)
        with self._cache_lock:
            return self._level_matrices(level, dtype, key)

    def _level_matrices(
        self, level: int, dtype: np.dtype, key: Tuple[int, str]
    ) -> LevelMatrices:
        if key not in self._cache:
            if (level, np.dtype(np.float64).str) not in self._cache:
                h = self.hierarchy.h(level)
                terms = sipg_terms(self.basis, h, self.penalty_scale)
                self._cache[(level, np.dtype(np.float64).str)] = LevelMatrices(
                    mass=assemble_mass_1d(self.basis, h).values,
                    diagonal=diagonal_blocks(
                        terms, self.hierarchy.cells_per_dir(level), self.bc
                    ),
                    upper=terms.left_right,
                    terms=terms,
                )
                logger.debug(f"Built 1D operator data for level {level}")
            base = self._cache[(level, np.dtype(np.float64).str)]
            self._cache[key] = LevelMatrices(
                mass=base.mass.astype(dtype),
                diagonal=base.diagonal.astype(dtype),
                upper=base.upper.astype(dtype),
                terms=base.terms,
            )
        return self._cache[key]

    def tensor_shape(self, level: int) -> Tuple[int, ...]:
        n = self.hierarchy.cells_per_dir(level)
        return (n,) * self.dim + (self.basis.size,) * self.dim

    def _check(self, x: DoFVector, level: Optional[int] = None) -> int:
        level = x.level if level is None else level
        validate_level(level, self.hierarchy.finest_level)
        if x.level != level:
            raise ValueError(f"Vector on level {x.level} used on level {level}")
        if len(x) != self.n_dofs(level):
            raise ValueError(
                f"Vector of length {len(x)} does not match {self.n_dofs(level)} DoFs"
            )
        if not np.all(np.isfinite(x.values)):
            raise ValueError("Vector contains non-finite entries")
        return level

    def _mass_except(self, tensor: np.ndarray, mass: np.ndarray, direction: int) -> np.ndarray:
        for other in range(self.dim):
            if other != direction:
                tensor = contract_axis(tensor, mass, 2 * self.dim - 1 - other, self.counter)
        return tensor

    def _count(self, count: int) -> None:
        if self.counter is not None:
            self.counter.record(count)

    def _tridiagonal(
        self,
        tensor: np.ndarray,
        data: LevelMatrices,
        direction: int,
        slabs: Optional[Tuple[int, int]] = None,
    ) -> np.ndarray:
        cell_axis = self.dim - 1 - direction
        local_axis = 2 * self.dim - 1 - direction
        work = np.moveaxis(tensor, (cell_axis, local_axis), (-2, -1))
        p = work.shape[-1]
        diagonal = data.diagonal
        if slabs is not None and cell_axis == 0:
            diagonal = diagonal[slabs[0] : slabs[1]]
        out = np.einsum("cij,...cj->...ci", diagonal, work)
        out[..., :-1, :] += work[..., 1:, :] @ data.upper.T
        out[..., 1:, :] += work[..., :-1, :] @ data.upper
        self._count(out.size * p + 2 * work[..., 1:, :].size * p)
        return np.moveaxis(out, (-2, -1), (cell_axis, local_axis))

    def matvec(
        self, level: int, values: np.ndarray, slabs: Optional[Tuple[int, int]] = None
    ) -> np.ndarray:
        """
        Cell-wise sum-factorized product on a raw array.

        With slabs=(start, stop), values hold only the cells of those slabs
        along the slowest axis. Rows of the first and last slab miss the
        coupling to slabs outside the range, unless it is the domain boundary.
        """
        data = self.level_matrices(level, values.dtype)
        shape = self.tensor_shape(level)
        if slabs is not None:
            shape = (slabs[1] - slabs[0],) + shape[1:]
        tensor = values.reshape(shape)
        result = np.zeros_like(tensor)
        for direction in range(self.dim):
            partial = self._mass_except(tensor, data.mass, direction)
            result += self._tridiagonal(partial, data, direction, slabs)
        return result.reshape(-1)

    def apply(self, x: DoFVector) -> DoFVector:
        """
        Return A_l x using the cell-wise loop.

        Raises:
            ValueError: If x has the wrong level or length or is not finite
        """
        level = self._check(x)
        return DoFVector(level, self.matvec(level, x.values))

    def _tile_matrices(self, data: LevelMatrices) -> Tuple[np.ndarray, np.ndarray]:
        t = data.terms
        p = self.basis.size
        dtype = data.mass.dtype
        inner_first = t.volume + t.left_left
        if self.bc is BoundaryCondition.WEAK_DIRICHLET:
            inner_first = inner_first + t.boundary_left
        first = np.block(
            [[inner_first, t.left_right], [t.left_right.T, t.volume + t.right_right]]
        )
        zero = np.zeros((p, p))
        interior = np.block(
            [
                [t.left_left, t.left_right, zero],
                [t.left_right.T, t.right_right + t.volume + t.left_left, t.left_right],
                [zero, t.left_right.T, t.volume + t.right_right],
            ]
        )
        return first.astype(dtype), interior.astype(dtype)

    def _tiles(self, tensor: np.ndarray, data: LevelMatrices, direction: int) -> np.ndarray:
        """
        Patch-wise loop along one direction.

        Tiles are the non-overlapping patches whose lowest cell is even.
        Tile t integrates its two cells, the face between them and the
        face below it (the domain boundary for t = 0). The boundary strip
        integrates the faces at x_direction = 1.
        """
        cell_axis = self.dim - 1 - direction
        local_axis = 2 * self.dim - 1 - direction
        work = np.moveaxis(tensor, (cell_axis, local_axis), (-2, -1))
        n, p = work.shape[-2], work.shape[-1]
        first, interior = self._tile_matrices(data)
        out = np.zeros_like(work)

        pair = work[..., 0:2, :].reshape(work.shape[:-2] + (2 * p,))
        local = pair @ first.T
        out[..., 0, :] += local[..., :p]
        out[..., 1, :] += local[..., p:]
        self._count(local.size * 2 * p)

        if n > 2:
            gathered = np.concatenate(
                [work[..., 1 : n - 2 : 2, :], work[..., 2 : n - 1 : 2, :], work[..., 3:n:2, :]],
                axis=-1,
            )
            local = gathered @ interior.T
            out[..., 1 : n - 2 : 2, :] += local[..., :p]
            out[..., 2 : n - 1 : 2, :] += local[..., p : 2 * p]
            out[..., 3:n:2, :] += local[..., 2 * p :]
            self._count(local.size * 3 * p)

        if self.bc is BoundaryCondition.WEAK_DIRICHLET:
            strip = data.terms.boundary_right.astype(work.dtype)
            out[..., n - 1, :] += work[..., n - 1, :] @ strip.T
            self._count(work[..., n - 1, :].size * p)

        return np.moveaxis(out, (-2, -1), (cell_axis, local_axis))

    def apply_patchwise(self, x: DoFVector) -> DoFVector:
        """
        Return A_l x using the patch-wise integration loop.

        Raises:
            ValueError: If x has the wrong level or length or is not finite
        """
        level = self._check(x)
        data = self.level_matrices(level, x.values.dtype)
        tensor = x.values.reshape(self.tensor_shape(level))
        result = np.zeros_like(tensor)
        for direction in range(self.dim):
            partial = self._mass_except(tensor, data.mass, direction)
            result += self._tiles(partial, data, direction)
        return DoFVector(level, result.reshape(-1))

    def assemble(self, level: int, sparse: bool = False) -> Matrix:
        """Quadrature-assembled matrix of level, dense unless sparse=True."""
        validate_level(level, self.hierarchy.finest_level)
        return assemble_sipg_matrix(
            self.basis,
            self.dim,
            self.hierarchy.cells_per_dir(level),
            self.hierarchy.h(level),
            self.bc,
            self.penalty_scale,
            sparse=sparse,
        )

    def assemble_rhs(
        self, level: int, func: Optional[Callable[..., np.ndarray]] = None
    ) -> DoFVector:
        """
        Load vector b_i = int f phi_i with k+1 Gauss points per direction.

        Args:
            level: Level of the vector
            func: f(x, y[, z]) evaluated on arrays; defaults to f = 1
        """
        validate_level(level, self.hierarchy.finest_level)
        n = self.hierarchy.cells_per_dir(level)
        h = self.hierarchy.h(level)
        rule = gauss_quadrature(self.basis.size)
        # weighted[i, q] = h w_q phi_i(x_q)
        weighted = h * (self.basis.values(rule.points) * rule.weights[:, None]).T

        if func is None:
            cell = np.ones(1)
            ones = weighted.sum(axis=1)
            for _ in range(self.dim):
                cell = np.kron(cell, ones)
            return DoFVector(level, np.tile(cell, self.hierarchy.n_cells(level)))

        q = rule.points.size
        points = ((np.arange(n)[:, None] + rule.points[None, :]) * h).reshape(-1)
        grids = np.meshgrid(*([points] * self.dim), indexing="ij")
        values = np.asarray(func(*reversed(grids)), dtype=float)
        values = np.broadcast_to(values, grids[0].shape)
        values = values.reshape(sum(((n, q) for _ in range(self.dim)), ()))
        order = list(range(0, 2 * self.dim, 2)) + list(range(1, 2 * self.dim, 2))
        tensor = values.transpose(order)
        for direction in range(self.dim):
            tensor = contract_axis(tensor, weighted, 2 * self.dim - 1 - direction)
        return DoFVector(level, np.ascontiguousarray(tensor).reshape(-1))

    def evaluate(self, level: int, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the DG function with coefficients values at points (N, dim)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.hierarchy.cells_per_dir(level)
        scaled = points * n
        coords = np.clip(np.floor(scaled).astype(np.int64), 0, n - 1)
        local = scaled - coords
        cells = coords @ (n ** np.arange(self.dim))
        p = self.basis.size
        coeffs = np.asarray(values).reshape(-1, self.dofs_per_cell)[cells]
        coeffs = coeffs.reshape((len(points),) + (p,) * self.dim)
        for direction in reversed(range(self.dim)):
            table = self.basis.values(local[:, direction])
            coeffs = np.einsum("na...,na->n...", coeffs, table)
        return coeffs


def _tensor_table(factors: list) -> np.ndarray:
    """Kronecker product of per-direction tables, listed x first."""
    table = np.ones((1, 1))
    for factor in reversed(factors):
        table = np.kron(table, factor)
    return table


def assemble_cell_volume(basis: Basis1D, dim: int, h: float) -> np.ndarray:
    """Cell volume matrix int grad phi_i . grad phi_j by tensor quadrature."""
    rule = gauss_quadrature(basis.size)
    values = basis.values(rule.points)
    derivs = basis.derivatives(rule.points) / h
    weights = _tensor_table([rule.weights[:, None]] * dim)[:, 0] * h**dim
    volume = np.zeros((basis.size**dim, basis.size**dim))
    for direction in range(dim):
        grad = _tensor_table([derivs if i == direction else values for i in range(dim)])
        volume += grad.T @ (weights[:, None] * grad)
    return volume


def assemble_sipg_matrix(
    basis: Basis1D,
    dim: int,
    ncells: int,
    h: float,
    bc: BoundaryCondition = BoundaryCondition.WEAK_DIRICHLET,
    penalty_scale: float = 1.0,
    *,
    sparse: bool = False,
) -> Matrix:
    """
    Assemble the SIPG matrix cell by cell and face by face.

    Uses Gauss quadrature on cells and faces, independently of the
    Kronecker structure the matrix-free operator relies on.

    Raises:
        MemoryError: If a dense matrix would exceed the size guard
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"Invalid dimension {dim}; supported: 1, 2, 3")
    p = basis.size
    cell_size = p**dim
    total = ncells**dim * cell_size
    if not sparse and total * total > DENSE_ASSEMBLY_LIMIT:
        raise MemoryError(
            f"Dense assembly of {total} DoFs exceeds {DENSE_ASSEMBLY_LIMIT} entries"
        )

    rule = gauss_quadrature(p)
    values = basis.values(rule.points)
    gamma = penalty_parameter(basis.degree, h, penalty_scale)
    volume = assemble_cell_volume(basis, dim, h)
    a0, a1 = basis.values(0.0), basis.values(1.0)
    d0, d1 = basis.derivatives(0.0) / h, basis.derivatives(1.0) / h

    blocks: Dict[Tuple[int, int], np.ndarray] = {}

    def add(i: int, j: int, block: np.ndarray) -> None:
        if (i, j) in blocks:
            blocks[(i, j)] = blocks[(i, j)] + block
        else:
            blocks[(i, j)] = block.copy()

    strides = ncells ** np.arange(dim)
    face_data = {}
    for direction in range(dim):
        weights = _tensor_table(
            [rule.weights[:, None] if i != direction else np.ones((1, 1)) for i in range(dim)]
        )[:, 0] * h ** (dim - 1)

        def trace(row: np.ndarray) -> np.ndarray:
            return _tensor_table([row if i == direction else values for i in range(dim)])

        t_minus, t_plus = trace(a1), trace(a0)
        g_minus, g_plus = trace(d1), trace(d0)
        jump = np.hstack([t_minus, -t_plus])
        average = 0.5 * np.hstack([g_minus, g_plus])
        wj = weights[:, None] * jump
        interior = gamma * jump.T @ wj - jump.T @ (weights[:, None] * average) - average.T @ wj
        left = gamma * t_plus.T @ (weights[:, None] * t_plus)
        left += t_plus.T @ (weights[:, None] * g_plus) + g_plus.T @ (weights[:, None] * t_plus)
        right = gamma * t_minus.T @ (weights[:, None] * t_minus)
        right -= t_minus.T @ (weights[:, None] * g_minus) + g_minus.T @ (weights[:, None] * t_minus)
        face_data[direction] = (interior, left, right)

    for coords in np.ndindex(*(ncells,) * dim):
        coords = coords[::-1]  # x first
        cell = int(np.dot(coords, strides))
        add(cell, cell, volume)
        for direction in range(dim):
            interior, left, right = face_data[direction]
            if coords[direction] + 1 < ncells:
                neighbor = cell + int(strides[direction])
                add(cell, cell, interior[:cell_size, :cell_size])
                add(cell, neighbor, interior[:cell_size, cell_size:])
                add(neighbor, cell, interior[cell_size:, :cell_size])
                add(neighbor, neighbor, interior[cell_size:, cell_size:])
            if BoundaryCondition(bc) is BoundaryCondition.WEAK_DIRICHLET:
                if coords[direction] == 0:
                    add(cell, cell, left)
                if coords[direction] == ncells - 1:
                    add(cell, cell, right)

    if sparse:
        rows, cols, data = [], [], []
        local = np.arange(cell_size)
        for (i, j), block in blocks.items():
            rows.append(np.repeat(i * cell_size + local, cell_size))
            cols.append(np.tile(j * cell_size + local, cell_size))
            data.append(block.reshape(-1))
        return scipy.sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(total, total),
        ).tocsr()

    matrix = np.zeros((total, total))
    for (i, j), block in blocks.items():
        matrix[i * cell_size : (i + 1) * cell_size, j * cell_size : (j + 1) * cell_size] = block
    return matrix
