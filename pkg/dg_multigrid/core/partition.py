"""
In-process simulation of a distributed-memory run.

Cells are split into slabs along the slowest axis. Every simulated rank
keeps a full-length buffer that holds its owned DoFs and a one-cell ghost
layer; all other entries are NaN so that a missing ghost shows up in the
result. Ghost exchange copies owned values into the neighbours' ghost
slots between phases. Operator products on a rank only touch its owned
slabs and one neighbour slab on each side.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import (Callable, Dict, List, Optional, Sequence, Tuple, TypeVar,
                    Union)

import numpy as np

from dg_multigrid.core.mesh import MeshHierarchy, VertexPatch
from dg_multigrid.core.models import (KernelKind, OwnershipPolicy,
                                      SolverConfig)
from dg_multigrid.core.multigrid import MultigridPreconditioner
from dg_multigrid.core.operator import (DoFVector, GlobalOperator,
                                        OperationCounter)
from dg_multigrid.core.smoother import VertexPatchSmoother, patch_dof_indices

logger = logging.getLogger("dg-multigrid.partition")

T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class RankPartition:
    """Owner rank of every cell of one level."""

    hierarchy: MeshHierarchy
    level: int
    nranks: int
    owner: np.ndarray

    def __post_init__(self) -> None:
        if self.owner.shape != (self.hierarchy.n_cells(self.level),):
            raise ValueError("Owner map must list one rank per cell")
        if self.owner.min(initial=0) < 0 or self.owner.max(initial=0) >= self.nranks:
            raise ValueError(f"Owner ranks must lie in 0..{self.nranks - 1}")

    @classmethod
    def from_owner(
        cls, hierarchy: MeshHierarchy, level: int, owner: Sequence[int]
    ) -> "RankPartition":
        owner = np.asarray(owner, dtype=np.int64)
        return cls(hierarchy, level, int(owner.max()) + 1, owner)

    def owned_cells(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.owner == rank)

    def ghost_cells(self, rank: int) -> np.ndarray:
        """Face neighbours of owned cells that another rank owns."""
        neighbors = self.hierarchy.face_neighbors(self.level, self.owned_cells(rank))
        return neighbors[self.owner[neighbors] != rank]


def partition_cells(hier: MeshHierarchy, level: int, nranks: int) -> RankPartition:
    """
    Contiguous slabs along the slowest axis, sizes differing by at most one.

    Raises:
        ValueError: If nranks is not in 1..cells along the slowest axis
    """
    n = hier.cells_per_dir(level)
    if not 1 <= nranks <= n:
        raise ValueError(
            f"Cannot split {n} slabs on level {level} among {nranks} ranks"
        )
    slab_owner = np.empty(n, dtype=np.int64)
    for rank, slabs in enumerate(np.array_split(np.arange(n), nranks)):
        slab_owner[slabs] = rank
    slabs = np.arange(hier.n_cells(level)) // n ** (hier.dim - 1)
    partition = RankPartition(hier, level, nranks, slab_owner[slabs])
    logger.debug(
        f"Level {level}: {nranks} ranks own "
        f"{np.bincount(partition.owner, minlength=nranks).tolist()} cells"
    )
    return partition


def _owners_of(
    cells: np.ndarray, partition: RankPartition, policy: OwnershipPolicy
) -> np.ndarray:
    cell_owner = partition.owner[cells]
    if OwnershipPolicy(policy) is OwnershipPolicy.SMALLEST_CELL_INDEX:
        return partition.owner[cells.min(axis=1)]
    counts = (cell_owner[:, :, None] == np.arange(partition.nranks)).sum(axis=1)
    # argmax keeps the first maximum, i.e. the smaller rank on ties
    return counts.argmax(axis=1)


def assign_patch_owner(
    patch: Union[VertexPatch, Sequence[int], np.ndarray],
    partition: RankPartition,
    policy: OwnershipPolicy,
) -> int:
    """
    Rank that smooths a patch.

    FEWEST_GHOSTS picks the rank owning most patch cells (smaller rank on
    ties); SMALLEST_CELL_INDEX picks the owner of the lowest-numbered cell.
    """
    if isinstance(patch, VertexPatch):
        cells = np.array([partition.hierarchy.linear_index(c) for c in patch.cells])
    else:
        cells = np.asarray(patch, dtype=np.int64)
    return int(_owners_of(cells[None, :], partition, policy)[0])


def patch_owners(
    partition: RankPartition, patch_cells: np.ndarray, policy: OwnershipPolicy
) -> np.ndarray:
    """Owner rank of every row of a (P, 2^dim) patch cell table."""
    return _owners_of(np.asarray(patch_cells, dtype=np.int64), partition, policy)


@dataclass(frozen=True, eq=False)
class GhostPatchStorage:
    """
    Gather indices of the patches owned by one rank.

    Patches made of owned cells keep one first DoF per cell; patches that
    touch ghost cells store their full DoF list explicitly.
    """

    rank: int
    dim: int
    degree: int
    patch_ids: np.ndarray
    compressed_ids: np.ndarray
    first_dofs: np.ndarray
    explicit_ids: np.ndarray
    explicit_indices: np.ndarray

    @property
    def stored_integers(self) -> int:
        return self.first_dofs.size + self.explicit_indices.size

    def decode(self, patch_id: Optional[int] = None) -> np.ndarray:
        """
        Gather index tensor of one owned patch, or of all in patch_ids order.

        Raises:
            KeyError: If the patch is not owned by this rank
        """
        if patch_id is not None:
            matches = np.flatnonzero(self.compressed_ids == patch_id)
            if matches.size:
                return patch_dof_indices(
                    self.first_dofs[matches], self.dim, self.degree
                )[0]
            matches = np.flatnonzero(self.explicit_ids == patch_id)
            if matches.size:
                return self.explicit_indices[matches[0]]
            raise KeyError(f"Patch {patch_id} is not owned by rank {self.rank}")
        shape = (self.patch_ids.size,) + (2 * (self.degree + 1),) * self.dim
        indices = np.empty(shape, dtype=np.int64)
        position = {int(pid): i for i, pid in enumerate(self.patch_ids)}
        compressed = patch_dof_indices(self.first_dofs, self.dim, self.degree)
        for pid, data in zip(self.compressed_ids, compressed):
            indices[position[int(pid)]] = data
        for pid, data in zip(self.explicit_ids, self.explicit_indices):
            indices[position[int(pid)]] = data
        return indices


def build_patch_storage(
    partition: RankPartition,
    patch_cells: np.ndarray,
    policy: OwnershipPolicy,
    degree: int,
) -> List[GhostPatchStorage]:
    """One GhostPatchStorage per rank."""
    dim = partition.hierarchy.dim
    owners = patch_owners(partition, patch_cells, policy)
    first_dofs = patch_cells * (degree + 1) ** dim
    storages = []
    for rank in range(partition.nranks):
        ids = np.flatnonzero(owners == rank)
        local = np.all(partition.owner[patch_cells[ids]] == rank, axis=1)
        explicit = ids[~local]
        storages.append(
            GhostPatchStorage(
                rank=rank,
                dim=dim,
                degree=degree,
                patch_ids=ids,
                compressed_ids=ids[local],
                first_dofs=first_dofs[ids[local]],
                explicit_ids=explicit,
                explicit_indices=patch_dof_indices(first_dofs[explicit], dim, degree),
            )
        )
    return storages


class SimulatedRanks:
    """
    Ranks of one level, with ghost exchange and owner-computes kernels.

    The ghost layer of a rank holds the face neighbours of its owned cells
    and the cells of the patches it owns.
    """

    def __init__(
        self,
        partition: RankPartition,
        operator: GlobalOperator,
        smoother: Optional[VertexPatchSmoother] = None,
        policy: OwnershipPolicy = OwnershipPolicy.FEWEST_GHOSTS,
        debug: bool = False,
        serial: bool = False,
    ) -> None:
        self.partition = partition
        self.operator = operator
        self.smoother = smoother
        self.policy = OwnershipPolicy(policy)
        self.debug = debug
        self.serial = serial
        self.level = partition.level
        self.nranks = partition.nranks
        self.size = operator.n_dofs(self.level)
        q = operator.dofs_per_cell

        def dofs(cells: np.ndarray) -> np.ndarray:
            return (cells[:, None] * q + np.arange(q)).reshape(-1)

        self.dof_owner = np.repeat(partition.owner, q)
        self.owned: List[np.ndarray] = []
        self.ghosts: List[np.ndarray] = []
        self.storage: List[GhostPatchStorage] = []
        if smoother is not None:
            self.storage = build_patch_storage(
                partition, smoother.maps.cells, self.policy, operator.degree
            )
        for rank in range(self.nranks):
            ghost_cells = partition.ghost_cells(rank)
            if self.storage:
                patch_cells = smoother.maps.cells[self.storage[rank].patch_ids].reshape(-1)
                ghost_cells = np.union1d(ghost_cells, patch_cells)
                ghost_cells = ghost_cells[partition.owner[ghost_cells] != rank]
            self.owned.append(dofs(partition.owned_cells(rank)))
            self.ghosts.append(dofs(ghost_cells))
        hier = operator.hierarchy
        n = hier.cells_per_dir(self.level)
        self.slab_size = n ** (hier.dim - 1) * q
        # owned slabs plus one neighbour slab per side
        self.windows: List[Tuple[int, int]] = []
        for rank in range(self.nranks):
            slabs = partition.owned_cells(rank) // n ** (hier.dim - 1)
            if slabs.size == 0:
                self.windows.append((0, 0))
            else:
                self.windows.append((max(0, int(slabs.min()) - 1), min(n, int(slabs.max()) + 2)))
        logger.debug(
            f"Level {self.level}: ghost DoFs per rank "
            f"{[g.size for g in self.ghosts]}"
        )
        if debug and self.storage:
            self._check_storage()

    def _check_storage(self) -> None:
        for storage in self.storage:
            expected = self.smoother.maps.indices[storage.patch_ids]
            if not np.array_equal(storage.decode(), expected):
                raise RuntimeError(f"Patch storage of rank {storage.rank} decodes incorrectly")

    def _map(self, func: Callable[[int], T]) -> List[T]:
        if self.serial or self.nranks == 1:
            return [func(rank) for rank in range(self.nranks)]
        with ThreadPoolExecutor(max_workers=self.nranks) as pool:
            return list(pool.map(func, range(self.nranks)))

    def scatter(self, values: np.ndarray) -> List[np.ndarray]:
        """Owned parts of a global vector; ghosts stay NaN until exchange."""
        buffers = []
        for rank in range(self.nranks):
            buffer = np.full(self.size, np.nan, dtype=values.dtype)
            buffer[self.owned[rank]] = values[self.owned[rank]]
            buffers.append(buffer)
        return buffers

    def gather(self, buffers: Sequence[np.ndarray]) -> np.ndarray:
        result = np.empty(self.size, dtype=buffers[0].dtype)
        for rank, buffer in enumerate(buffers):
            result[self.owned[rank]] = buffer[self.owned[rank]]
        return result

    def exchange(self, buffers: List[np.ndarray]) -> List[np.ndarray]:
        """Copy owned values into every ghost slot that refers to them."""
        for rank in range(self.nranks):
            ghosts = self.ghosts[rank]
            sources = self.dof_owner[ghosts]
            for source in np.unique(sources):
                slots = ghosts[sources == source]
                buffers[rank][slots] = buffers[source][slots]
        if self.debug:
            self.verify(buffers)
        return buffers

    def verify(self, buffers: Sequence[np.ndarray]) -> None:
        """
        Compare ghost checksums against the owners' values.

        Raises:
            RuntimeError: If a rank holds stale or missing ghost values
        """
        reference = self.gather(buffers)
        for rank in range(self.nranks):
            ghosts = self.ghosts[rank]
            held = float(np.sum(buffers[rank][ghosts], dtype=np.float64))
            expected = float(np.sum(reference[ghosts], dtype=np.float64))
            if not held == expected:
                raise RuntimeError(
                    f"Inconsistent ghost state on rank {rank} at level {self.level}: "
                    f"checksum {held!r} != {expected!r}"
                )

    def _owned_result(self, buffers: Sequence[np.ndarray]) -> np.ndarray:
        result = self.gather(buffers)
        if not np.all(np.isfinite(result)):
            raise RuntimeError(f"Ghost layer on level {self.level} is incomplete")
        return result

    def owner_product(self, rank: int, buffer: np.ndarray) -> np.ndarray:
        """
        Rows of A x for the cells a rank owns, from its own buffer only.

        The product runs over the owned slabs plus one ghost slab on each
        side; every other entry of the result is NaN.
        """
        result = np.full(self.size, np.nan, dtype=buffer.dtype)
        start, stop = self.windows[rank]
        if start == stop:
            return result
        span = slice(start * self.slab_size, stop * self.slab_size)
        rows = self.operator.matvec(self.level, buffer[span], slabs=(start, stop))
        owned = self.owned[rank]
        result[owned] = rows[owned - span.start]
        return result

    def apply_array(self, values: np.ndarray) -> np.ndarray:
        """A x with every rank computing its owned rows."""
        buffers = self.exchange(self.scatter(values))
        results = self._map(lambda rank: self.owner_product(rank, buffers[rank]))
        return self._owned_result(results)

    def distributed_apply(self, x: DoFVector) -> DoFVector:
        """
        Distributed A x, equal to the serial product.

        Raises:
            ValueError: If x does not belong to this level
        """
        if x.level != self.level or len(x) != self.size:
            raise ValueError(f"Vector does not match level {self.level}")
        return DoFVector(self.level, self.apply_array(x.values))

    def _residuals(self, x_buffers: List[np.ndarray], b: np.ndarray) -> List[np.ndarray]:
        def owner_residual(rank: int) -> np.ndarray:
            residual = np.full(self.size, np.nan, dtype=b.dtype)
            owned = self.owned[rank]
            residual[owned] = b[owned] - self.owner_product(rank, x_buffers[rank])[owned]
            return residual

        return self.exchange(self._map(owner_residual))

    def sweep_array(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        """One colored sweep with patch-owner computes and ghost accumulation."""
        if self.smoother is None:
            raise ValueError("Distributed smoothing needs a smoother")
        smoother = self.smoother
        b_buffers = self.exchange(self.scatter(b))
        x_buffers = self.exchange(self.scatter(x))
        for ids in smoother.colors:
            if ids.size == 0:
                continue
            residuals: Optional[List[np.ndarray]] = None
            if smoother.kernel is KernelKind.FULL:
                residuals = self._residuals(x_buffers, b)

            def owned_corrections(rank: int) -> np.ndarray:
                mine = ids[np.isin(ids, self.storage[rank].patch_ids)]
                temporary = np.zeros(self.size, dtype=x.dtype)
                if mine.size:
                    residual = residuals[rank] if residuals is not None else None
                    corrections = smoother.color_corrections(
                        mine, x_buffers[rank], b_buffers[rank], residual
                    )
                    temporary[smoother.maps.indices[mine]] = corrections
                return temporary

            temporaries = self._map(owned_corrections)
            for temporary in temporaries:
                for rank in range(self.nranks):
                    owned = self.owned[rank]
                    x_buffers[rank][owned] += temporary[owned]
            x_buffers = self.exchange(x_buffers)
        return self._owned_result(x_buffers)

    def distributed_smooth(self, x: DoFVector, b: DoFVector) -> DoFVector:
        """One smoothing sweep, equal to the serial sweep up to rounding."""
        if x.level != self.level or b.level != self.level:
            raise ValueError(f"Vectors do not match level {self.level}")
        return DoFVector(self.level, self.sweep_array(x.values, b.values))


class DistributedMultigrid(MultigridPreconditioner):
    """
    V-cycle whose operator applications and smoothing run on simulated ranks.

    Level l uses min(nranks, cells along the slowest axis) ranks. Grid
    transfers and the coarse solve are done on the global vector.
    """

    def __init__(
        self,
        operator: GlobalOperator,
        kernel: KernelKind,
        nranks: int,
        config: Optional[SolverConfig] = None,
        counter: Optional[OperationCounter] = None,
        policy: OwnershipPolicy = OwnershipPolicy.FEWEST_GHOSTS,
        serial: bool = False,
    ) -> None:
        super().__init__(operator, kernel, config, counter)
        self.nranks = nranks
        self.policy = OwnershipPolicy(policy)
        hierarchy = operator.hierarchy
        self.ranks: Dict[int, SimulatedRanks] = {}
        for level in range(1, self.finest_level + 1):
            active = min(nranks, hierarchy.cells_per_dir(level))
            self.ranks[level] = SimulatedRanks(
                partition_cells(hierarchy, level, active),
                operator,
                self.smoothers[level],
                policy=self.policy,
                debug=self.config.debug,
                serial=serial,
            )
        logger.info(f"Distributed multigrid on {nranks} simulated ranks")

    def _apply(self, level: int, x: np.ndarray) -> np.ndarray:
        return self.ranks[level].apply_array(x)

    def _smooth(self, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.ranks[level].sweep_array(x, b)

    def apply_finest(self, v: np.ndarray) -> np.ndarray:
        """Distributed operator on the finest level, for the outer solver."""
        if self.finest_level == 0:
            return self.operator.matvec(0, np.asarray(v))
        return self.ranks[self.finest_level].apply_array(np.asarray(v))
