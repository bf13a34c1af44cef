"""Tests for the matrix-free SIPG operator and its assembly oracle."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import scipy.sparse

from dg_multigrid.core.basis import make_basis
from dg_multigrid.core.mesh import build_hierarchy
from dg_multigrid.core.models import BasisKind, Precision
from dg_multigrid.core.operator import (DoFVector, GlobalOperator,
                                        OperationCounter,
                                        apply_operation_model,
                                        assemble_cell_volume,
                                        assemble_sipg_matrix, cell_operator)


def make_operator(dim, k, L, kind=BasisKind.LAGRANGE, counter=None):
    return GlobalOperator(build_hierarchy(dim, L), k, kind, counter=counter)


def random_vector(op, level, rng):
    return DoFVector(level, rng.standard_normal(op.n_dofs(level)))


def test_dof_vector_validation():
    """DoFVector checks shape and dtype and reports its precision."""
    v = DoFVector.zeros(1, 8, Precision.SINGLE)
    assert v.precision is Precision.SINGLE
    assert len(v) == 8
    assert v.astype(Precision.DOUBLE).values.dtype == np.float64
    with pytest.raises(ValueError):
        DoFVector(0, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        DoFVector(0, np.zeros(3, dtype=np.int64))


def test_apply_zero():
    """A 0 = 0."""
    op = make_operator(2, 2, 1)
    x = DoFVector.zeros(1, op.n_dofs(1))
    assert np.all(op.apply(x).values == 0.0)
    assert np.all(op.apply_patchwise(x).values == 0.0)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("k", [1, 2, 3])
@pytest.mark.parametrize("level", [0, 1])
def test_apply_matches_assembled_matrix(dim, k, level, rng):
    """Matrix-free apply equals the quadrature-assembled matrix."""
    op = make_operator(dim, k, 1)
    matrix = op.assemble(level)
    for _ in range(20):
        x = random_vector(op, level, rng)
        expected = matrix @ x.values
        result = op.apply(x).values
        assert np.linalg.norm(result - expected) <= 1e-12 * np.linalg.norm(expected)


@pytest.mark.parametrize("dim,k,L", [(2, 3, 2), (2, 1, 1), (3, 2, 1), (3, 3, 1)])
def test_patchwise_matches_cellwise(dim, k, L, rng):
    """Both integration loops give the same action."""
    op = make_operator(dim, k, L)
    for _ in range(5):
        x = random_vector(op, L, rng)
        cell = op.apply(x).values
        patch = op.apply_patchwise(x).values
        assert np.linalg.norm(cell - patch) <= 1e-13 * np.linalg.norm(cell)


def test_patchwise_on_constant_interpolant():
    """The interpolant of 1 gives the same vector from both loops."""
    op = make_operator(2, 3, 2)
    x = DoFVector(2, np.ones(op.n_dofs(2)))
    cell = op.apply(x).values
    assert np.allclose(op.apply_patchwise(x).values, cell, rtol=0, atol=1e-12 * np.abs(cell).max())


@pytest.mark.parametrize("dim", [2, 3])
def test_apply_symmetric_and_positive(dim, rng):
    """<Ax, y> = <x, Ay> and <Ax, x> > 0."""
    op = make_operator(dim, 2, 1)
    x, y = random_vector(op, 1, rng), random_vector(op, 1, rng)
    axy = op.apply(x).values @ y.values
    xay = x.values @ op.apply(y).values
    assert abs(axy - xay) <= 1e-12 * abs(axy)
    for _ in range(5):
        z = random_vector(op, 1, rng)
        assert op.apply(z).values @ z.values > 0


def test_apply_rejects_bad_vectors():
    """Wrong length, level or non-finite input is rejected."""
    op = make_operator(2, 1, 1)
    with pytest.raises(ValueError):
        op.apply(DoFVector(1, np.zeros(5)))
    with pytest.raises(ValueError):
        op.apply(DoFVector(2, np.zeros(op.n_dofs(1))))
    bad = np.zeros(op.n_dofs(1))
    bad[3] = np.nan
    with pytest.raises(ValueError):
        op.apply(DoFVector(1, bad))


def test_assembled_matrix_properties():
    """The assembled matrix is symmetric positive definite; sparse agrees."""
    op = make_operator(2, 2, 1)
    dense = op.assemble(1)
    assert np.allclose(dense, dense.T, atol=1e-12)
    assert np.linalg.eigvalsh(dense).min() > 0
    sparse = op.assemble(1, sparse=True)
    assert scipy.sparse.issparse(sparse)
    assert np.allclose(sparse.toarray(), dense)


def test_oracle_one_dimensional_hand_case():
    """Two linear cells in 1D give the hand-derived 4x4 matrix."""
    basis = make_basis(BasisKind.LAGRANGE, 1)
    matrix = assemble_sipg_matrix(basis, 1, 2, 0.5)
    expected = np.array(
        [[6, 1, -1, 0], [1, 8, -6, -1], [-1, -6, 8, 1], [0, -1, 1, 6]], dtype=float
    )
    assert np.allclose(matrix, expected)


def test_dense_assembly_guard():
    """Oversized dense assemblies raise MemoryError."""
    basis = make_basis(BasisKind.LAGRANGE, 7)
    with pytest.raises(MemoryError):
        assemble_sipg_matrix(basis, 3, 8, 0.125)


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 3), (3, 2)])
def test_cell_operator_matches_quadrature(dim, k, rng):
    """Kronecker cell operator equals the quadrature cell matrix."""
    h = 0.25
    cell = cell_operator(k, dim, h)
    oracle = assemble_cell_volume(make_basis(BasisKind.LAGRANGE, k), dim, h)
    assert cell.size == (k + 1) ** dim
    assert np.allclose(cell.matrix(), oracle, atol=1e-13 * np.abs(oracle).max())
    v = rng.standard_normal(cell.size)
    assert np.allclose(cell.apply(v), oracle @ v)
    assert np.allclose(cell.apply(np.ones(cell.size)), 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        cell.apply(np.ones(cell.size + 1))


def test_assemble_rhs_constant():
    """The load of f = 1 sums to the domain volume."""
    op = make_operator(3, 2, 1)
    b = op.assemble_rhs(1)
    assert b.values.sum() == pytest.approx(1.0)
    explicit = op.assemble_rhs(1, lambda x, y, z: np.ones_like(x))
    assert np.allclose(explicit.values, b.values)


def test_assemble_rhs_and_evaluate(rng):
    """Load of f = xy sums to its integral; a nodal interpolant evaluates exactly."""
    op = make_operator(2, 2, 1)
    b = op.assemble_rhs(1, lambda x, y: x * y)
    assert b.values.sum() == pytest.approx(0.25)

    n, h = op.hierarchy.cells_per_dir(1), op.hierarchy.h(1)
    nodes = op.basis.functional_points
    cy, cx, j, i = np.meshgrid(np.arange(n), np.arange(n), nodes, nodes, indexing="ij")
    values = (cx + i) * h + 2.0 * (cy + j) * h
    points = rng.random((10, 2))
    result = op.evaluate(1, values.reshape(-1), points)
    assert np.allclose(result, points[:, 0] + 2.0 * points[:, 1], atol=1e-12)


def test_operation_count_matches_model():
    """Counted multiply-adds per cell agree with the sum-factorization model."""
    for dim, k, L in [(2, 3, 2), (3, 2, 2)]:
        counter = OperationCounter()
        op = make_operator(dim, k, L, counter=counter)
        op.apply(DoFVector(L, np.ones(op.n_dofs(L))))
        per_cell = counter.multiply_adds / op.hierarchy.n_cells(L)
        model = apply_operation_model(dim, k)
        assert 0.8 * model <= per_cell <= 1.2 * model
    counter.reset()
    assert counter.multiply_adds == 0


def test_operation_counter_is_thread_safe():
    """Records from concurrent threads all reach the total."""
    counter = OperationCounter()

    def record(_):
        for _ in range(1000):
            counter.record(3)

    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(record, range(8)))
    assert counter.multiply_adds == 8 * 1000 * 3


def test_concurrent_level_matrices_are_shared():
    """Threads asking for the same level data get one cached object."""
    op = make_operator(2, 3, 2)
    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(lambda _: op.level_matrices(2, np.float32), range(8)))
    assert all(result is results[0] for result in results)
    assert results[0].mass.dtype == np.float32


@pytest.mark.parametrize("dim,L", [(2, 2), (3, 1)])
@pytest.mark.parametrize("start,stop", [(0, 2), (1, 4), (2, 5)])
def test_slab_matvec_matches_full_rows(dim, L, start, stop, rng):
    """A product over a slab range is exact on slabs whose neighbours are inside."""
    op = make_operator(dim, 2, L)
    n = op.hierarchy.cells_per_dir(L)
    stop = min(stop, n)
    slab = n ** (dim - 1) * op.dofs_per_cell
    x = rng.standard_normal(op.n_dofs(L))
    full = op.matvec(L, x)
    rows = op.matvec(L, x[start * slab : stop * slab], slabs=(start, stop))
    first = start if start == 0 else start + 1
    last = stop if stop == n else stop - 1
    assert last > first
    expected = full[first * slab : last * slab]
    assert np.allclose(rows[(first - start) * slab : (last - start) * slab], expected, atol=1e-12 * np.abs(full).max())
