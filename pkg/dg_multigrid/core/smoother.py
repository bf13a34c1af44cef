"""
Colored multiplicative vertex-patch smoother.

Each patch of 2^dim cells is solved with a separable local operator
sum_i L_i (x) M_others restricted to a kernel-specific local space, and
inverted by fast diagonalization. Patches of one color share no cell,
so their corrections are computed together from the pre-color state.

Patch data is addressed in patch-lexicographic order: along each
direction index = offset * (k+1) + node with offset in {0, 1}.

Local spaces of patches touching the domain boundary also hold the
functions on that boundary, so every DoF belongs to some patch. The
local solver always uses the interior-patch 1D matrices, restricted to
the patch's local space; residuals use the exact patch operator.
"""

import logging
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular

from dg_multigrid.core.basis import (Basis1D, assemble_mass_1d, assemble_sipg_1d,
                                     make_basis)
from dg_multigrid.core.mesh import (MeshHierarchy, patch_cell_table,
                                    patch_colors, patch_lowest_coords)
from dg_multigrid.core.models import (BasisKind, BoundaryCondition,
                                      KernelKind, PatchPosition)
from dg_multigrid.core.operator import (DoFVector, GlobalOperator,
                                        OperationCounter, contract_axis)

logger = logging.getLogger("dg-multigrid.smoother")

# number of cells of the 1D mesh realizing each position, and the first patch cell
_POSITION_LAYOUT = {
    PatchPosition.INTERIOR: (4, 1),
    PatchPosition.LEFT: (3, 0),
    PatchPosition.RIGHT: (3, 1),
    PatchPosition.BOTH: (2, 0),
}


def kernel_slice(
    kernel: KernelKind, degree: int, position: PatchPosition = PatchPosition.INTERIOR
) -> slice:
    """
    Patch-lexicographic 1D indices of the kernel's local space.

    Dirichlet drops one function at each patch end and clamped drops two,
    except at an end lying on the domain boundary.
    """
    m = 2 * (degree + 1)
    kernel = KernelKind(kernel)
    position = PatchPosition(position)
    if kernel is KernelKind.FULL:
        return slice(0, m)
    width = 1 if kernel is KernelKind.DIRICHLET else 2
    start = 0 if position in (PatchPosition.LEFT, PatchPosition.BOTH) else width
    stop = m if position in (PatchPosition.RIGHT, PatchPosition.BOTH) else m - width
    return slice(start, stop)


def kernel_mask_table(kernel: KernelKind, degree: int) -> np.ndarray:
    """Boolean (positions, 2(k+1)) table of the 1D local spaces."""
    m = 2 * (degree + 1)
    table = np.zeros((len(PatchPosition), m), dtype=bool)
    for position in PatchPosition:
        table[position.value, kernel_slice(kernel, degree, position)] = True
    return table


def check_kernel_basis(kernel: KernelKind, degree: int, basis_kind: BasisKind) -> None:
    """
    Raises:
        ValueError: If the kernel cannot be used with the basis
    """
    kernel, basis_kind = KernelKind(kernel), BasisKind(basis_kind)
    if kernel is KernelKind.CLAMPED:
        if basis_kind is not BasisKind.HERMITE:
            raise ValueError("Clamped kernel requires the Hermite basis")
        if degree < 3:
            raise ValueError(f"Clamped kernel requires degree >= 3, got {degree}")
    elif basis_kind is not BasisKind.LAGRANGE:
        raise ValueError(f"{kernel.value.capitalize()} kernel requires the Lagrange basis")
    if degree < 1:
        raise ValueError(f"Degree must be >= 1, got {degree}")


@dataclass(frozen=True)
class PatchMatrices1D:
    """Mass and stiffness of one direction of a patch, restricted to a kernel."""

    kernel: KernelKind
    mass: np.ndarray
    stiffness: np.ndarray

    @property
    def size(self) -> int:
        return self.mass.shape[0]


def full_patch_matrices(
    basis: Basis1D,
    h: float,
    position: PatchPosition = PatchPosition.INTERIOR,
    bc: BoundaryCondition = BoundaryCondition.WEAK_DIRICHLET,
    penalty_scale: float = 1.0,
) -> PatchMatrices1D:
    """
    Unrestricted 1D patch matrices of size 2(k+1).

    The stiffness is the principal submatrix of the global 1D SIPG
    matrix on the patch's two cells, so it depends on whether the patch
    touches the domain boundary on either side.
    """
    p = basis.size
    ncells, first = _POSITION_LAYOUT[PatchPosition(position)]
    line = assemble_sipg_1d(basis, ncells, h, bc, penalty_scale=penalty_scale).values
    window = slice(first * p, (first + 2) * p)
    mass_cell = assemble_mass_1d(basis, h).values
    mass = np.zeros((2 * p, 2 * p))
    mass[:p, :p] = mass_cell
    mass[p:, p:] = mass_cell
    return PatchMatrices1D(
        kernel=KernelKind.FULL, mass=mass, stiffness=line[window, window].copy()
    )


def build_patch_matrices(
    kernel: KernelKind,
    k: int,
    h: float,
    basis_kind: BasisKind = BasisKind.LAGRANGE,
    position: PatchPosition = PatchPosition.INTERIOR,
    *,
    bc: BoundaryCondition = BoundaryCondition.WEAK_DIRICHLET,
    penalty_scale: float = 1.0,
) -> PatchMatrices1D:
    """
    1D local solver matrices of one direction of a patch.

    The interior-patch matrices restricted to the kernel's local space at
    the given position. On interior patches this is the exact restriction
    of the global operator.

    Raises:
        ValueError: If the kernel and basis are incompatible
    """
    kernel = KernelKind(kernel)
    check_kernel_basis(kernel, k, basis_kind)
    full = full_patch_matrices(
        make_basis(basis_kind, k), h, PatchPosition.INTERIOR, bc, penalty_scale
    )
    keep = kernel_slice(kernel, k, position)
    return PatchMatrices1D(
        kernel=kernel,
        mass=full.mass[keep, keep].copy(),
        stiffness=full.stiffness[keep, keep].copy(),
    )


@dataclass(frozen=True)
class FastDiag1D:
    """Generalized eigenpairs L S = M S diag(eigenvalues), S^T M S = I."""

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray


def fast_diagonalization(stiffness: np.ndarray, mass: np.ndarray) -> FastDiag1D:
    """
    Solve the generalized symmetric eigenproblem by Cholesky reduction.

    Eigenvalues come out ascending; each eigenvector is M-normalized and
    signed so that its largest-magnitude entry is positive.

    Raises:
        LinAlgError: If the mass matrix is not positive definite
    """
    try:
        factor = cholesky(mass, lower=True)
    except LinAlgError as e:
        raise LinAlgError(f"Patch mass matrix is not positive definite: {e}") from e
    half = solve_triangular(factor, stiffness, lower=True)
    reduced = solve_triangular(factor, half.T, lower=True).T
    eigenvalues, q = eigh(0.5 * (reduced + reduced.T))
    vectors = solve_triangular(factor.T, q, lower=False)
    norms = np.sqrt(np.einsum("ij,ik,kj->j", vectors, mass, vectors))
    vectors = vectors / norms
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return FastDiag1D(eigenvectors=vectors * signs, eigenvalues=eigenvalues)


def apply_patch_inverse(factors: Sequence[FastDiag1D], r: np.ndarray) -> np.ndarray:
    """
    Apply A_j^{-1} = (S (x) ... (x) S)(sum_i Lambda_i)^{-1}(S^T (x) ... (x) S^T).

    Args:
        factors: One FastDiag1D per direction, x first
        r: Local residual, flat or shaped (m_z, m_y, m_x)

    Raises:
        ValueError: If r does not match the factor sizes
    """
    dim = len(factors)
    shape = tuple(factors[d].eigenvalues.size for d in reversed(range(dim)))
    if r.size != int(np.prod(shape)):
        raise ValueError(f"Residual of size {r.size} does not match local space {shape}")
    tensor = r.reshape(shape)
    for d, factor in enumerate(factors):
        tensor = contract_axis(tensor, factor.eigenvectors.T, dim - 1 - d)
    denominator = np.zeros(shape)
    for d, factor in enumerate(factors):
        view = [1] * dim
        view[dim - 1 - d] = -1
        denominator = denominator + factor.eigenvalues.reshape(view)
    tensor = tensor / denominator
    for d, factor in enumerate(factors):
        tensor = contract_axis(tensor, factor.eigenvectors, dim - 1 - d)
    return tensor.reshape(r.shape)


@dataclass(frozen=True)
class LocalOperator:
    """A_j = sum_i L_i (x) M_others on a kernel's local space, x first."""

    kernel: KernelKind
    directions: Tuple[PatchMatrices1D, ...]

    @property
    def dim(self) -> int:
        return len(self.directions)

    def matrix(self) -> np.ndarray:
        size = int(np.prod([d.size for d in self.directions]))
        total = np.zeros((size, size))
        for direction in range(self.dim):
            term = np.ones((1, 1))
            for other in reversed(range(self.dim)):
                data = self.directions[other]
                term = np.kron(term, data.stiffness if other == direction else data.mass)
            total += term
        return total

    def apply(self, v: np.ndarray) -> np.ndarray:
        return (self.matrix() @ v.reshape(-1)).reshape(v.shape)

    def fast_diag(self) -> Tuple[FastDiag1D, ...]:
        return tuple(fast_diagonalization(d.stiffness, d.mass) for d in self.directions)


def patch_renumbering(dim: int, degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Map patch-lexicographic positions to cell-wise storage.

    Returns:
        (slot, local) arrays of shape (2(k+1),)*dim: the patch cell slot
        and the cell-local DoF index of each patch-lexicographic position.
    """
    p = degree + 1
    grids = np.indices((2 * p,) * dim)
    slot = np.zeros((2 * p,) * dim, dtype=np.int64)
    local = np.zeros((2 * p,) * dim, dtype=np.int64)
    for direction in range(dim):
        offset, node = np.divmod(grids[dim - 1 - direction], p)
        slot += offset << direction
        local += node * p**direction
    return slot, local


def patch_dof_indices(first_dofs: np.ndarray, dim: int, degree: int) -> np.ndarray:
    """Expand first-DoF-per-cell rows (P, 2^dim) to patch index tensors."""
    slot, local = patch_renumbering(dim, degree)
    return first_dofs[:, slot] + local


def patch_positions(lowest: np.ndarray, ncells: int) -> np.ndarray:
    """PatchPosition codes per patch and direction from lowest-cell coordinates."""
    left = lowest == 0
    right = lowest + 2 == ncells
    positions = np.full(lowest.shape, PatchPosition.INTERIOR.value, dtype=np.int64)
    positions[left & ~right] = PatchPosition.LEFT.value
    positions[right & ~left] = PatchPosition.RIGHT.value
    positions[left & right] = PatchPosition.BOTH.value
    return positions


class PatchMaps:
    """Gather and scatter indices of all patches of one level."""

    def __init__(self, hierarchy: MeshHierarchy, level: int, degree: int) -> None:
        self.dim = hierarchy.dim
        self.degree = degree
        self.cells = patch_cell_table(hierarchy, level)
        self.first_dofs = self.cells * (degree + 1) ** self.dim
        self.indices = patch_dof_indices(self.first_dofs, self.dim, degree)
        self.positions = patch_positions(
            patch_lowest_coords(hierarchy, level), hierarchy.cells_per_dir(level)
        )

    @property
    def n_patches(self) -> int:
        return self.cells.shape[0]

    def kernel_masks(self, kernel: KernelKind) -> np.ndarray:
        """Boolean (P,) + (2(k+1),)*dim marking each patch's local space."""
        table = kernel_mask_table(kernel, self.degree)
        masks = np.ones(self.indices.shape, dtype=bool)
        for direction in range(self.dim):
            shape = [self.n_patches] + [1] * self.dim
            shape[self.dim - direction] = table.shape[1]
            masks &= table[self.positions[:, direction]].reshape(shape)
        return masks

    def gather(self, values: np.ndarray, patch_ids: np.ndarray) -> np.ndarray:
        return values[self.indices[patch_ids]]

    def scatter(self, target: np.ndarray, patch_ids: np.ndarray, data: np.ndarray) -> None:
        """Write patch data back into target."""
        target[self.indices[patch_ids]] = data


ArrayOrVector = Union[np.ndarray, DoFVector]


class VertexPatchSmoother:
    """
    One level of the colored vertex-patch smoother.

    Full kernel: residual computed globally once per color. Dirichlet and
    clamped kernels: residual from patch data only.
    """

    def __init__(
        self,
        operator: GlobalOperator,
        level: int,
        kernel: KernelKind,
        colors: Optional[Sequence[Sequence[int]]] = None,
        counter: Optional[OperationCounter] = None,
    ) -> None:
        self.operator = operator
        self.level = level
        self.kernel = KernelKind(kernel)
        check_kernel_basis(self.kernel, operator.degree, operator.basis_kind)
        self.dim = operator.dim
        self.counter = counter if counter is not None else operator.counter
        self.maps = PatchMaps(operator.hierarchy, level, operator.degree)
        self.masks = self.maps.kernel_masks(self.kernel)
        if colors is None:
            self.colors = patch_colors(operator.hierarchy, level)
        else:
            self.colors = [np.asarray(ids, dtype=np.int64) for ids in colors]
        self._data: Dict[str, Tuple[np.ndarray, ...]] = {}
        self._lock = threading.Lock()
        logger.debug(
            f"Smoother on level {level}: {self.maps.n_patches} patches, "
            f"kernel {self.kernel.value}"
        )

    def _position_data(self, dtype: np.dtype) -> Tuple[np.ndarray, ...]:
        """
        Per-position exact stiffness, patch mass, and the local solver's
        eigenvectors and eigenvalues.

        Eigenpairs are zero-padded to 2(k+1) with infinite eigenvalues, so
        that functions outside the local space receive no correction.
        """
        dtype = np.dtype(dtype)
        with self._lock:
            if dtype.str not in self._data:
                self._data[dtype.str] = self._build_position_data(dtype)
                logger.debug(
                    f"Built fast diagonalization factors ({dtype}) on level {self.level}"
                )
            return self._data[dtype.str]

    def _build_position_data(self, dtype: np.dtype) -> Tuple[np.ndarray, ...]:
        op = self.operator
        h = op.hierarchy.h(self.level)
        m = 2 * (op.degree + 1)
        solver = full_patch_matrices(
            op.basis, h, PatchPosition.INTERIOR, op.bc, op.penalty_scale
        )
        stiffness = np.empty((len(PatchPosition), m, m))
        vectors = np.zeros((len(PatchPosition), m, m))
        values = np.full((len(PatchPosition), m), np.inf)
        for position in PatchPosition:
            exact = full_patch_matrices(op.basis, h, position, op.bc, op.penalty_scale)
            stiffness[position.value] = exact.stiffness
            keep = kernel_slice(self.kernel, op.degree, position)
            factor = fast_diagonalization(
                solver.stiffness[keep, keep], solver.mass[keep, keep]
            )
            size = factor.eigenvalues.size
            vectors[position.value, keep, :size] = factor.eigenvectors
            values[position.value, :size] = factor.eigenvalues
        return (
            stiffness.astype(dtype),
            solver.mass.astype(dtype),
            vectors.astype(dtype),
            values.astype(dtype),
        )

    def prepare(self, dtype: np.dtype) -> None:
        """Build the patch factors for a floating point format ahead of use."""
        self._position_data(dtype)

    def local_dofs(self, patch_id: int) -> np.ndarray:
        """Global indices of V_j, ordered like the local operator (x fastest)."""
        return self.maps.indices[patch_id][self.masks[patch_id]]

    def local_operator(self, patch_id: int) -> LocalOperator:
        """Explicit local solver matrix A_j of one patch."""
        op = self.operator
        h = op.hierarchy.h(self.level)
        directions = tuple(
            build_patch_matrices(
                self.kernel,
                op.degree,
                h,
                op.basis_kind,
                PatchPosition(int(self.maps.positions[patch_id, direction])),
                bc=op.bc,
                penalty_scale=op.penalty_scale,
            )
            for direction in range(self.dim)
        )
        return LocalOperator(kernel=self.kernel, directions=directions)

    def _count(self, count: int) -> None:
        if self.counter is not None:
            self.counter.record(count)

    def _batched(self, matrices: np.ndarray, tensor: np.ndarray, axis: int, transpose: bool) -> np.ndarray:
        work = np.moveaxis(tensor, axis, -1)
        pattern = "jba,j...b->j...a" if transpose else "jab,j...b->j...a"
        out = np.einsum(pattern, matrices, work)
        self._count(out.size * matrices.shape[-1])
        return np.moveaxis(out, -1, axis)

    def _patch_apply(self, patches: np.ndarray, positions: np.ndarray, data: Tuple[np.ndarray, ...]) -> np.ndarray:
        """Exact patch operator applied to gathered patch data (J, (2p,)*dim)."""
        stiffness, mass = data[0], data[1]
        result = np.zeros_like(patches)
        for direction in range(self.dim):
            term = patches
            for other in range(self.dim):
                if other != direction:
                    term = contract_axis(term, mass, self.dim - other, self.counter)
            result += self._batched(
                stiffness[positions[:, direction]], term, self.dim - direction, False
            )
        return result

    def _inverse(self, residual: np.ndarray, positions: np.ndarray, data: Tuple[np.ndarray, ...]) -> np.ndarray:
        vectors, values = data[2], data[3]
        tensor = residual
        for direction in range(self.dim):
            tensor = self._batched(
                vectors[positions[:, direction]], tensor, self.dim - direction, True
            )
        denominator = np.zeros_like(tensor)
        for direction in range(self.dim):
            shape = [tensor.shape[0]] + [1] * self.dim
            shape[self.dim - direction] = tensor.shape[self.dim - direction]
            denominator = denominator + values[positions[:, direction]].reshape(shape)
        tensor = tensor / denominator
        for direction in range(self.dim):
            tensor = self._batched(
                vectors[positions[:, direction]], tensor, self.dim - direction, False
            )
        return tensor

    def local_residual(
        self,
        patch_ids: Union[int, Sequence[int], np.ndarray],
        x: ArrayOrVector,
        b: ArrayOrVector,
        residual: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        Residuals r_j on the local spaces of the given patches.

        Full kernel reads the global residual b - A x; Dirichlet and
        clamped kernels only read x and b on the patch cells.

        Returns:
            Array of shape (J,) + (2(k+1),)*dim, zero outside each V_j
        """
        x_values = x.values if isinstance(x, DoFVector) else np.asarray(x)
        b_values = b.values if isinstance(b, DoFVector) else np.asarray(b)
        ids = np.atleast_1d(np.asarray(patch_ids, dtype=np.int64))
        indices = self.maps.indices[ids]
        if self.kernel is KernelKind.FULL:
            if residual is None:
                residual = b_values - self.operator.matvec(self.level, x_values)
            return np.where(self.masks[ids], residual[indices], 0)
        data = self._position_data(x_values.dtype)
        product = self._patch_apply(x_values[indices], self.maps.positions[ids], data)
        return np.where(self.masks[ids], b_values[indices] - product, 0)

    def color_corrections(
        self,
        patch_ids: np.ndarray,
        x: np.ndarray,
        b: np.ndarray,
        residual: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """
        A_j^{-1} r_j for every listed patch, all from the same state x.

        Returns:
            Corrections on the patch index tensors, zero outside each V_j
        """
        ids = np.asarray(patch_ids, dtype=np.int64)
        data = self._position_data(x.dtype)
        r = self.local_residual(ids, x, b, residual)
        return self._inverse(r, self.maps.positions[ids], data)

    def smooth(self, x: ArrayOrVector, b: ArrayOrVector) -> ArrayOrVector:
        """
        One multiplicative sweep over the colors in order.

        Returns:
            The updated iterate, of the same type as x
        """
        if isinstance(x, DoFVector):
            rhs = b.values if isinstance(b, DoFVector) else b
            return DoFVector(x.level, self.sweep(x.values, rhs))
        return self.sweep(np.asarray(x), b.values if isinstance(b, DoFVector) else b)

    def sweep(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        x = np.array(x, copy=True)
        for color, ids in enumerate(self.colors):
            if ids.size == 0:
                continue
            residual = None
            if self.kernel is KernelKind.FULL:
                residual = b - self.operator.matvec(self.level, x)
            corrections = self.color_corrections(ids, x, b, residual)
            x[self.maps.indices[ids]] += corrections
            logger.debug(f"Level {self.level}: smoothed color {color} ({ids.size} patches)")
        return x
