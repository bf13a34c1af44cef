"""Tests for 1D bases, quadrature and SIPG matrices."""

import numpy as np
import pytest

from dg_multigrid.core.basis import (assemble_mass_1d, assemble_sipg_1d,
                                     assemble_stiffness_1d, gauss_lobatto_nodes,
                                     gauss_quadrature, make_basis,
                                     penalty_parameter, sipg_terms)
from dg_multigrid.core.models import BasisKind, BoundaryCondition
from dg_multigrid.core.operator import assemble_sipg_matrix


def test_gauss_lobatto_nodes():
    """Known small rules and symmetry."""
    assert np.allclose(gauss_lobatto_nodes(2), [0.0, 1.0])
    assert np.allclose(gauss_lobatto_nodes(3), [0.0, 0.5, 1.0])
    s = 1.0 / np.sqrt(5.0)
    assert np.allclose(gauss_lobatto_nodes(4), [0.0, (1 - s) / 2, (1 + s) / 2, 1.0], atol=1e-14)
    for n in range(2, 9):
        x = gauss_lobatto_nodes(n)
        assert np.all(np.diff(x) > 0)
        assert np.allclose(x + x[::-1], 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        gauss_lobatto_nodes(1)


def test_gauss_quadrature():
    """Gauss rules integrate degree 2n-1 exactly."""
    rule = gauss_quadrature(1)
    assert np.allclose(rule.points, [0.5]) and np.allclose(rule.weights, [1.0])
    rule = gauss_quadrature(2)
    s = 1.0 / np.sqrt(3.0)
    assert np.allclose(rule.points, [(1 - s) / 2, (1 + s) / 2])
    assert np.allclose(rule.weights, [0.5, 0.5])
    assert rule.integrate(lambda x: x**2) == pytest.approx(1.0 / 3.0, abs=1e-15)
    for n in range(1, 8):
        rule = gauss_quadrature(n)
        assert rule.weights.sum() == pytest.approx(1.0)
        for p in range(2 * n):
            assert rule.integrate(lambda x: x**p) == pytest.approx(1.0 / (p + 1), rel=1e-13)
    with pytest.raises(ValueError):
        gauss_quadrature(0)


def test_lagrange_linear():
    """Degree one Lagrange functions are 1-x and x."""
    basis = make_basis(BasisKind.LAGRANGE, 1)
    x = np.linspace(0, 1, 7)
    assert np.allclose(basis.values(x), np.stack([1 - x, x], axis=1))
    assert np.allclose(basis.derivatives(x), np.tile([-1.0, 1.0], (7, 1)))


@pytest.mark.parametrize("k", range(1, 8))
def test_lagrange_delta_and_partition_of_unity(k, rng):
    """Nodal delta property and partition of unity."""
    basis = make_basis(BasisKind.LAGRANGE, k)
    nodes = gauss_lobatto_nodes(k + 1)
    assert np.allclose(basis.values(nodes), np.eye(k + 1), atol=1e-12)
    x = rng.random(100)
    assert np.allclose(basis.values(x).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(basis.derivatives(x).sum(axis=1), 0.0, atol=1e-10)


def test_hermite_cubic():
    """The first cubic Hermite function is 1 - 3x^2 + 2x^3."""
    basis = make_basis(BasisKind.HERMITE, 3)
    x = np.linspace(0, 1, 11)
    assert np.allclose(basis.values(x)[:, 0], 1 - 3 * x**2 + 2 * x**3, atol=1e-13)


@pytest.mark.parametrize("k", range(3, 8))
def test_hermite_endpoint_functionals(k):
    """Only the four endpoint functions see the endpoint functionals."""
    basis = make_basis(BasisKind.HERMITE, k)
    ends = np.array([0.0, 1.0])
    table = np.stack(
        [
            basis.values(ends)[0],
            basis.derivatives(ends)[0],
            basis.derivatives(ends)[1],
            basis.values(ends)[1],
        ]
    )
    expected = np.zeros((4, k + 1))
    expected[0, 0] = expected[1, 1] = expected[2, k - 1] = expected[3, k] = 1.0
    assert np.allclose(table, expected, atol=1e-12)


def test_hermite_needs_cubic():
    """Hermite bases below degree three are rejected."""
    with pytest.raises(ValueError):
        make_basis(BasisKind.HERMITE, 2)
    with pytest.raises(ValueError):
        make_basis(BasisKind.LAGRANGE, 0)


@pytest.mark.parametrize("kind,k", [(BasisKind.LAGRANGE, 4), (BasisKind.HERMITE, 5)])
def test_interpolate_reproduces_polynomials(kind, k):
    """Interpolating a degree-k polynomial is exact."""
    basis = make_basis(kind, k)
    coeffs = basis.interpolate(lambda x: x**k - 2 * x, lambda x: k * x ** (k - 1) - 2)
    x = np.linspace(0, 1, 9)
    assert np.allclose(basis.values(x) @ coeffs, x**k - 2 * x, atol=1e-12)
    ones = basis.interpolate(np.ones_like, np.zeros_like)
    assert np.allclose(basis.values(x) @ ones, 1.0)


def test_mass_matrix():
    """Linear mass matrix and its scaling."""
    basis = make_basis(BasisKind.LAGRANGE, 1)
    mass = assemble_mass_1d(basis, 1.0)
    assert np.allclose(mass.values, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
    assert mass.role == "mass"
    basis = make_basis(BasisKind.LAGRANGE, 5)
    assert assemble_mass_1d(basis, 0.25).values.sum() == pytest.approx(0.25)
    assert np.allclose(
        assemble_mass_1d(basis, 0.25).values, 0.25 * assemble_mass_1d(basis, 1.0).values
    )
    with pytest.raises(ValueError):
        assemble_mass_1d(basis, 0.0)


def test_stiffness_matrix():
    """Linear stiffness matrix and constants in its kernel."""
    basis = make_basis(BasisKind.LAGRANGE, 1)
    assert np.allclose(assemble_stiffness_1d(basis, 0.5).values, [[2, -2], [-2, 2]])
    basis = make_basis(BasisKind.LAGRANGE, 4)
    assert np.allclose(assemble_stiffness_1d(basis, 1.0).values @ np.ones(5), 0.0, atol=1e-12)


def test_penalty_parameter():
    """gamma = k(k+1)(1/h + 1/h)."""
    assert penalty_parameter(2, 0.25) == pytest.approx(48.0)
    assert penalty_parameter(3, 0.5, penalty_scale=2.0) == pytest.approx(96.0)


def test_sipg_two_cells_linear():
    """Hand-computed SIPG matrix for k=1 on two cells."""
    basis = make_basis(BasisKind.LAGRANGE, 1)
    matrix = assemble_sipg_1d(basis, 2, 0.5).values
    expected = np.array(
        [[6, 1, -1, 0], [1, 8, -6, -1], [-1, -6, 8, 1], [0, -1, 1, 6]], dtype=float
    )
    assert np.allclose(matrix, expected)


@pytest.mark.parametrize("kind,k", [(BasisKind.LAGRANGE, 1), (BasisKind.LAGRANGE, 3), (BasisKind.HERMITE, 4)])
@pytest.mark.parametrize("ncells", [1, 2, 3])
def test_sipg_matches_quadrature_oracle(kind, k, ncells):
    """The 1D blocks agree with the quadrature assembly."""
    basis = make_basis(kind, k)
    h = 1.0 / ncells
    fast = assemble_sipg_1d(basis, ncells, h).values
    oracle = assemble_sipg_matrix(basis, 1, ncells, h)
    assert np.allclose(fast, oracle, atol=1e-13 * np.abs(oracle).max())


@pytest.mark.parametrize("k", range(1, 8))
def test_sipg_symmetric_positive_definite(k):
    """Weak Dirichlet SIPG matrices are SPD; the pure Neumann one is singular."""
    basis = make_basis(BasisKind.LAGRANGE, k)
    matrix = assemble_sipg_1d(basis, 2, 0.5).values
    assert np.allclose(matrix, matrix.T, atol=1e-12)
    assert np.linalg.eigvalsh(matrix).min() > 0
    free = assemble_sipg_1d(basis, 2, 0.5, BoundaryCondition.NONE).values
    assert np.allclose(free @ np.ones(2 * (k + 1)), 0.0, atol=1e-9)


def test_sipg_rejects_bad_input():
    """Zero cells or non-positive h are rejected."""
    basis = make_basis(BasisKind.LAGRANGE, 2)
    with pytest.raises(ValueError):
        assemble_sipg_1d(basis, 0, 0.5)
    with pytest.raises(ValueError):
        assemble_sipg_1d(basis, 2, -1.0)


def test_sipg_terms_symmetry():
    """Self blocks are symmetric; coupling block links both sides."""
    terms = sipg_terms(make_basis(BasisKind.LAGRANGE, 3), 0.25)
    for block in (terms.left_left, terms.right_right, terms.boundary_left, terms.boundary_right):
        assert np.allclose(block, block.T)
    assert np.abs(terms.left_right).max() > 0
