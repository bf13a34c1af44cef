"""
One-dimensional shape functions, quadrature and SIPG matrices.

Every tensor-product operator in the package is built from the 1D
matrices assembled here. Shape functions live on the reference
interval [0, 1]; physical cells of width h are handled by scaling.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import solve

from dg_multigrid.core.models import BasisKind, BoundaryCondition

logger = logging.getLogger("dg-multigrid.basis")

ScalarFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Quadrature1D:
    """Quadrature rule on [0, 1]."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, func: ScalarFunction) -> float:
        return float(np.dot(self.weights, func(self.points)))


def gauss_lobatto_nodes(n: int) -> np.ndarray:
    """
    Return the n Gauss-Lobatto points mapped to [0, 1].

    The interior points are the roots of P'_{n-1}. The result is
    symmetrized so that x_i + x_{n-1-i} = 1 holds to rounding.

    Raises:
        ValueError: If n < 2
    """
    if n < 2:
        raise ValueError(f"Gauss-Lobatto rules need at least 2 points, got {n}")
    coefficients = np.zeros(n)
    coefficients[-1] = 1.0
    interior = np.sort(legendre.legroots(legendre.legder(coefficients))) if n > 2 else []
    t = np.concatenate(([-1.0], interior, [1.0]))
    x = 0.5 * (t + 1.0)
    return 0.5 * (x + 1.0 - x[::-1])


def gauss_quadrature(n: int) -> Quadrature1D:
    """
    Return the n-point Gauss-Legendre rule on [0, 1].

    Raises:
        ValueError: If n < 1
    """
    if n < 1:
        raise ValueError(f"Gauss rules need at least 1 point, got {n}")
    t, w = legendre.leggauss(n)
    return Quadrature1D(points=0.5 * (t + 1.0), weights=0.5 * w)


@dataclass(frozen=True, eq=False)
class Basis1D:
    """
    Polynomial basis of degree k on [0, 1].

    Each basis function is dual to one functional: a point evaluation
    (order 0) or a point derivative (order 1). The functions are stored
    as coefficient columns in the shifted Legendre basis P_m(2x - 1).
    """

    kind: BasisKind
    degree: int
    functional_points: np.ndarray
    functional_orders: np.ndarray
    coefficients: np.ndarray

    @property
    def size(self) -> int:
        return self.degree + 1

    def values(self, x: np.ndarray) -> np.ndarray:
        """Table phi_j(x_i) with shape (len(x), k+1)."""
        t = 2.0 * np.atleast_1d(np.asarray(x, dtype=float)) - 1.0
        return legendre.legvander(t, self.degree) @ self.coefficients

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        """Table phi_j'(x_i) with shape (len(x), k+1)."""
        t = 2.0 * np.atleast_1d(np.asarray(x, dtype=float)) - 1.0
        table = np.empty((t.size, self.size))
        for m, unit in enumerate(np.eye(self.size)):
            table[:, m] = 2.0 * legendre.legval(t, legendre.legder(unit))
        return table @ self.coefficients

    def interpolate(
        self, func: ScalarFunction, dfunc: Optional[ScalarFunction] = None
    ) -> np.ndarray:
        """
        Apply the defining functionals to a function.

        Args:
            func: Function of x on [0, 1]
            dfunc: Its derivative, needed by Hermite functionals

        Returns:
            Coefficient vector of length k+1
        """
        coeffs = np.empty(self.size)
        point_mask = self.functional_orders == 0
        coeffs[point_mask] = func(self.functional_points[point_mask])
        if np.any(~point_mask):
            if dfunc is None:
                raise ValueError("Derivative functionals need dfunc")
            coeffs[~point_mask] = dfunc(self.functional_points[~point_mask])
        return coeffs

    def functional_matrix(self, func_values: np.ndarray, func_derivs: np.ndarray) -> np.ndarray:
        """Select value or derivative rows per functional."""
        return np.where(self.functional_orders[:, None] == 0, func_values, func_derivs)


def _legendre_functionals(points: np.ndarray, orders: np.ndarray, degree: int) -> np.ndarray:
    t = 2.0 * points - 1.0
    values = legendre.legvander(t, degree)
    derivs = np.empty_like(values)
    for m, unit in enumerate(np.eye(degree + 1)):
        derivs[:, m] = 2.0 * legendre.legval(t, legendre.legder(unit))
    return np.where(orders[:, None] == 0, values, derivs)


def make_basis(kind: BasisKind, k: int) -> Basis1D:
    """
    Build a Lagrange or Hermite-type basis of degree k.

    Lagrange functions interpolate at the k+1 Gauss-Lobatto points.
    Hermite-type functions are dual to v(0), v'(0), values at the k-3
    interior Gauss points, v'(1) and v(1), in that order.

    Raises:
        ValueError: If the degree is unsupported for the kind
    """
    kind = BasisKind(kind)
    if kind is BasisKind.LAGRANGE:
        if k < 1:
            raise ValueError(f"Lagrange basis needs degree >= 1, got {k}")
        points = gauss_lobatto_nodes(k + 1)
        orders = np.zeros(k + 1, dtype=int)
    else:
        if k < 3:
            raise ValueError(f"Hermite basis needs degree >= 3, got {k}")
        interior = gauss_quadrature(k - 3).points if k > 3 else np.empty(0)
        points = np.concatenate(([0.0, 0.0], interior, [1.0, 1.0]))
        orders = np.concatenate(([0, 1], np.zeros(k - 3, dtype=int), [1, 0]))

    functionals = _legendre_functionals(points, orders, k)
    coefficients = solve(functionals, np.eye(k + 1))
    return Basis1D(
        kind=kind,
        degree=k,
        functional_points=points,
        functional_orders=orders,
        coefficients=coefficients,
    )


@dataclass(frozen=True)
class Matrix1D:
    """Dense 1D matrix tagged with its role and mesh size."""

    values: np.ndarray
    role: str
    h: float

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


def assemble_mass_1d(basis: Basis1D, h: float) -> Matrix1D:
    """Cell mass matrix h * int_0^1 phi_i phi_j."""
    if h <= 0:
        raise ValueError(f"Mesh size must be positive, got {h}")
    rule = gauss_quadrature(basis.size)
    table = basis.values(rule.points)
    mass = h * table.T @ (rule.weights[:, None] * table)
    return Matrix1D(values=0.5 * (mass + mass.T), role="mass", h=h)


def assemble_stiffness_1d(basis: Basis1D, h: float) -> Matrix1D:
    """Cell stiffness matrix (1/h) * int_0^1 phi_i' phi_j'."""
    if h <= 0:
        raise ValueError(f"Mesh size must be positive, got {h}")
    rule = gauss_quadrature(basis.size)
    table = basis.derivatives(rule.points)
    stiffness = table.T @ (rule.weights[:, None] * table) / h
    return Matrix1D(values=0.5 * (stiffness + stiffness.T), role="stiffness", h=h)


def penalty_parameter(degree: int, h: float, penalty_scale: float = 1.0) -> float:
    """gamma = k(k+1)(1/h+ + 1/h-) for equal neighbours; boundary faces mirror h."""
    return penalty_scale * degree * (degree + 1) * 2.0 / h


@dataclass(frozen=True)
class SIPGTerms:
    """
    1D building blocks of the SIPG form on cells of width h.

    Rows index test functions, columns trial functions. For an interior
    face, "left" is the cell whose right end touches the face.
    """

    volume: np.ndarray
    left_left: np.ndarray
    right_right: np.ndarray
    left_right: np.ndarray
    boundary_left: np.ndarray
    boundary_right: np.ndarray


def sipg_terms(basis: Basis1D, h: float, penalty_scale: float = 1.0) -> SIPGTerms:
    """Face and volume blocks of the 1D interior penalty form."""
    gamma = penalty_parameter(basis.degree, h, penalty_scale)
    a0 = basis.values(0.0)[0]
    a1 = basis.values(1.0)[0]
    d0 = basis.derivatives(0.0)[0] / h
    d1 = basis.derivatives(1.0)[0] / h
    outer = np.outer

    return SIPGTerms(
        volume=assemble_stiffness_1d(basis, h).values,
        left_left=gamma * outer(a1, a1) - 0.5 * (outer(a1, d1) + outer(d1, a1)),
        right_right=gamma * outer(a0, a0) + 0.5 * (outer(a0, d0) + outer(d0, a0)),
        left_right=-gamma * outer(a1, a0) - 0.5 * outer(a1, d0) + 0.5 * outer(d1, a0),
        boundary_left=gamma * outer(a0, a0) + outer(a0, d0) + outer(d0, a0),
        boundary_right=gamma * outer(a1, a1) - outer(a1, d1) - outer(d1, a1),
    )


def diagonal_blocks(
    terms: SIPGTerms, ncells: int, bc: BoundaryCondition
) -> np.ndarray:
    """Diagonal blocks, shape (ncells, k+1, k+1), of the 1D SIPG matrix."""
    blocks = np.repeat(terms.volume[None, :, :], ncells, axis=0)
    blocks[:-1] += terms.left_left
    blocks[1:] += terms.right_right
    if BoundaryCondition(bc) is BoundaryCondition.WEAK_DIRICHLET:
        blocks[0] += terms.boundary_left
        blocks[-1] += terms.boundary_right
    return blocks


def assemble_sipg_1d(
    basis: Basis1D,
    ncells: int,
    h: float,
    bc: BoundaryCondition = BoundaryCondition.WEAK_DIRICHLET,
    *,
    penalty_scale: float = 1.0,
) -> Matrix1D:
    """
    Dense SIPG matrix of -u'' on ncells equal cells of width h.

    Raises:
        ValueError: If ncells < 1 or h <= 0
    """
    if ncells < 1:
        raise ValueError(f"Unsupported number of cells {ncells}")
    if h <= 0:
        raise ValueError(f"Mesh size must be positive, got {h}")
    p = basis.size
    terms = sipg_terms(basis, h, penalty_scale)
    blocks = diagonal_blocks(terms, ncells, bc)
    matrix = np.zeros((ncells * p, ncells * p))
    for c in range(ncells):
        matrix[c * p : (c + 1) * p, c * p : (c + 1) * p] = blocks[c]
        if c + 1 < ncells:
            matrix[c * p : (c + 1) * p, (c + 1) * p : (c + 2) * p] = terms.left_right
            matrix[(c + 1) * p : (c + 2) * p, c * p : (c + 1) * p] = terms.left_right.T
    return Matrix1D(values=matrix, role="stiffness", h=h)
