"""Tests for the mesh hierarchy and vertex patches."""

import itertools

import numpy as np
import pytest

from dg_multigrid.core.mesh import (CellIndex, MeshHierarchy, build_hierarchy,
                                    color_patches, enumerate_patches,
                                    patch_cell_table, patch_colors)


@pytest.mark.parametrize(
    "dim,L,level,expected",
    [(2, 0, 0, 4), (3, 2, 2, 512), (3, 3, 3, 4096), (2, 3, 1, 16)],
)
def test_cell_counts(dim, L, level, expected):
    """Level l has 2^((l+1) dim) cells."""
    hier = build_hierarchy(dim, L)
    assert hier.n_cells(level) == expected
    assert hier.num_levels == L + 1
    assert hier.h(level) == pytest.approx(1.0 / 2 ** (level + 1))


@pytest.mark.parametrize("dim,L", [(1, 2), (4, 1), (3, -1)])
def test_invalid_hierarchy(dim, L):
    """Unsupported dimension or negative level is rejected."""
    with pytest.raises(ValueError):
        build_hierarchy(dim, L)


def test_level_out_of_range():
    """Levels beyond the finest are rejected."""
    hier = build_hierarchy(2, 1)
    with pytest.raises(ValueError):
        hier.cells_per_dir(2)


def test_linear_index_round_trip():
    """Linear numbering is lexicographic with x fastest."""
    hier = build_hierarchy(3, 1)
    assert hier.linear_index(CellIndex(1, (1, 0, 0))) == 1
    assert hier.linear_index(CellIndex(1, (0, 1, 0))) == 4
    assert hier.linear_index(CellIndex(1, (0, 0, 1))) == 16
    for index in range(hier.n_cells(1)):
        assert hier.linear_index(hier.cell(1, index)) == index
    coords = hier.cell_coords(1)
    assert tuple(coords[21]) == hier.cell(1, 21).coords


def test_children_cover_parent():
    """Every cell has 2^dim children inside it."""
    hier = build_hierarchy(2, 2)
    parent = CellIndex(1, (2, 3))
    children = hier.children(parent)
    assert len(children) == 4
    assert {c.coords for c in children} == {(4, 6), (5, 6), (4, 7), (5, 7)}
    with pytest.raises(ValueError):
        hier.children(CellIndex(2, (0, 0)))


@pytest.mark.parametrize("dim,level,expected", [(2, 0, 1), (2, 1, 9), (3, 2, 343)])
def test_patch_counts(dim, level, expected):
    """One patch per interior vertex."""
    hier = build_hierarchy(dim, max(level, 1))
    assert len(enumerate_patches(hier, level)) == expected


def test_patch_cell_ordering():
    """The first cell has the vertex as its most positive corner."""
    hier = build_hierarchy(2, 1)
    patch = enumerate_patches(hier, 1)[4]
    assert patch.vertex == (2, 2)
    assert [c.coords for c in patch.cells] == [(1, 1), (2, 1), (1, 2), (2, 2)]
    table = patch_cell_table(hier, 1)
    assert table[4].tolist() == [hier.linear_index(c) for c in patch.cells]


def test_patch_ordering_is_bijective():
    """Patch slots map onto distinct cells around the vertex."""
    hier = build_hierarchy(3, 1)
    for patch in enumerate_patches(hier, 1):
        offsets = {
            tuple(c - v + 1 for c, v in zip(cell.coords, patch.vertex))
            for cell in patch.cells
        }
        assert offsets == set(itertools.product((0, 1), repeat=3))


def test_color_sizes_2d():
    """The 3x3 interior vertices split into classes of 4, 2, 2, 1."""
    hier = build_hierarchy(2, 1)
    classes = color_patches(enumerate_patches(hier, 1))
    assert [len(c) for c in classes] == [4, 2, 2, 1]
    assert [ids.size for ids in patch_colors(hier, 1)] == [4, 2, 2, 1]


@pytest.mark.parametrize("dim,level", [(2, 2), (3, 1)])
def test_colors_are_cell_disjoint(dim, level):
    """Classes partition the patches and share no cells internally."""
    hier = build_hierarchy(dim, level)
    patches = enumerate_patches(hier, level)
    classes = color_patches(patches)
    assert len(classes) == 2**dim
    seen = np.concatenate([c.indices for c in classes])
    assert sorted(seen.tolist()) == list(range(len(patches)))
    table = patch_cell_table(hier, level)
    for color_class in classes:
        cells = table[color_class.indices].reshape(-1)
        assert np.unique(cells).size == cells.size


def test_cell_in_at_most_one_patch_per_color():
    """Every cell is covered by at most 2^dim patches."""
    hier = build_hierarchy(2, 2)
    table = patch_cell_table(hier, 2)
    counts = np.bincount(table.reshape(-1), minlength=hier.n_cells(2))
    assert counts.max() == 4


def test_color_patches_empty():
    """No patches give no classes."""
    assert color_patches([]) == []


def test_face_neighbors():
    """Face neighbours in 2D exclude diagonal cells."""
    hier = MeshHierarchy(dim=2, finest_level=1)
    assert hier.face_neighbors(1, np.array([0])).tolist() == [1, 4]
    assert hier.face_neighbors(1, np.array([5])).tolist() == [1, 4, 6, 9]
