"""
Nested Cartesian mesh hierarchy on the unit cube.

Level l has 2^(l+1) cells per direction. Cells are numbered
lexicographically with x fastest; vertex patches are the 2^dim cells
around an interior vertex.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from dg_multigrid.utils.common.validation import validate_dim, validate_level

logger = logging.getLogger("dg-multigrid.mesh")


class CellIndex(NamedTuple):
    """A cell given by its level and integer coordinates (x first)."""

    level: int
    coords: Tuple[int, ...]


@dataclass(frozen=True)
class VertexPatch:
    """
    The 2^dim cells sharing one interior vertex.

    cells[0] is the cell whose most-positive corner is the vertex; slot j
    adds bit i of j to coordinate i.
    """

    level: int
    vertex: Tuple[int, ...]
    cells: Tuple[CellIndex, ...]
    index: int

    @property
    def lowest(self) -> Tuple[int, ...]:
        return self.cells[0].coords

    @property
    def color(self) -> int:
        return sum((c % 2) << i for i, c in enumerate(self.lowest))


@dataclass(frozen=True)
class ColorClass:
    """Patches that pairwise share no cell."""

    color: int
    patches: Tuple[VertexPatch, ...]

    @property
    def indices(self) -> np.ndarray:
        return np.array([patch.index for patch in self.patches], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.patches)


@dataclass(frozen=True)
class MeshHierarchy:
    """Unit-cube hierarchy with levels 0..finest_level."""

    dim: int
    finest_level: int

    def __post_init__(self) -> None:
        validate_dim(self.dim, (1, 2, 3))
        if self.finest_level < 0:
            raise ValueError(f"Finest level must be >= 0, got {self.finest_level}")

    @property
    def num_levels(self) -> int:
        return self.finest_level + 1

    def cells_per_dir(self, level: int) -> int:
        validate_level(level, self.finest_level)
        return 2 ** (level + 1)

    def h(self, level: int) -> float:
        return 1.0 / self.cells_per_dir(level)

    def n_cells(self, level: int) -> int:
        return self.cells_per_dir(level) ** self.dim

    def linear_index(self, cell: CellIndex) -> int:
        n = self.cells_per_dir(cell.level)
        return sum(c * n**i for i, c in enumerate(cell.coords))

    def cell(self, level: int, index: int) -> CellIndex:
        n = self.cells_per_dir(level)
        return CellIndex(level, tuple((index // n**i) % n for i in range(self.dim)))

    def cell_coords(self, level: int) -> np.ndarray:
        """Coordinates of all cells in linear order, shape (n_cells, dim)."""
        n = self.cells_per_dir(level)
        index = np.arange(self.n_cells(level))
        return np.stack([(index // n**i) % n for i in range(self.dim)], axis=1)

    def children(self, cell: CellIndex) -> List[CellIndex]:
        if cell.level >= self.finest_level:
            raise ValueError(f"Cell on level {cell.level} has no children")
        return [
            CellIndex(
                cell.level + 1,
                tuple(2 * c + ((j >> i) & 1) for i, c in enumerate(cell.coords)),
            )
            for j in range(2**self.dim)
        ]

    def face_neighbors(self, level: int, cells: np.ndarray) -> np.ndarray:
        """Sorted linear indices of all face neighbours of the given cells."""
        n = self.cells_per_dir(level)
        coords = self.cell_coords(level)[np.asarray(cells, dtype=np.int64)]
        found = []
        for i in range(self.dim):
            for step in (-1, 1):
                moved = coords.copy()
                moved[:, i] += step
                inside = (moved[:, i] >= 0) & (moved[:, i] < n)
                found.append(moved[inside] @ (n ** np.arange(self.dim)))
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))


def build_hierarchy(dim: int, L: int) -> MeshHierarchy:
    """
    Build the hierarchy with levels 0..L on the unit cube.

    Raises:
        ValueError: If dim is not 2 or 3, or L < 0
    """
    validate_dim(dim)
    hierarchy = MeshHierarchy(dim=dim, finest_level=L)
    logger.debug(
        f"Built {dim}D hierarchy with {L + 1} levels, "
        f"{hierarchy.n_cells(L)} cells on the finest"
    )
    return hierarchy


def patch_lowest_coords(hier: MeshHierarchy, level: int) -> np.ndarray:
    """Lowest-cell coordinates of every patch in patch order, shape (P, dim)."""
    m = hier.cells_per_dir(level) - 1
    index = np.arange(m**hier.dim)
    return np.stack([(index // m**i) % m for i in range(hier.dim)], axis=1)


def patch_cell_table(hier: MeshHierarchy, level: int) -> np.ndarray:
    """Linear cell indices of every patch, shape (P, 2^dim), in patch cell order."""
    n = hier.cells_per_dir(level)
    lowest = patch_lowest_coords(hier, level)
    strides = n ** np.arange(hier.dim)
    offsets = np.array(
        [[(j >> i) & 1 for i in range(hier.dim)] for j in range(2**hier.dim)]
    )
    return (lowest[:, None, :] + offsets[None, :, :]) @ strides


def enumerate_patches(hier: MeshHierarchy, level: int) -> List[VertexPatch]:
    """One patch per interior vertex, vertices ordered with x fastest."""
    lowest = patch_lowest_coords(hier, level)
    patches = []
    for index, low in enumerate(lowest):
        low = tuple(int(c) for c in low)
        cells = tuple(
            CellIndex(level, tuple(c + ((j >> i) & 1) for i, c in enumerate(low)))
            for j in range(2**hier.dim)
        )
        patches.append(
            VertexPatch(
                level=level,
                vertex=tuple(c + 1 for c in low),
                cells=cells,
                index=index,
            )
        )
    return patches


def color_patches(patches: Sequence[VertexPatch]) -> List[ColorClass]:
    """
    Split patches into 2^dim cell-disjoint classes.

    The color of a patch is sum_i (c_i mod 2) 2^i for its lowest cell c.
    """
    if not patches:
        return []
    dim = len(patches[0].vertex)
    buckets: Dict[int, List[VertexPatch]] = {color: [] for color in range(2**dim)}
    for patch in patches:
        buckets[patch.color].append(patch)
    return [ColorClass(color, tuple(buckets[color])) for color in range(2**dim)]


def patch_colors(hier: MeshHierarchy, level: int) -> List[np.ndarray]:
    """Patch indices per color class without building VertexPatch objects."""
    lowest = patch_lowest_coords(hier, level)
    colors = ((lowest % 2) << np.arange(hier.dim)).sum(axis=1)
    return [np.flatnonzero(colors == color) for color in range(2**hier.dim)]
