"""
Right-preconditioned GMRES and the fractional iteration count.

The outer iteration always runs in double precision. The preconditioner
may be a V-cycle in either precision; mixed_precision_vcycle converts at
entry and exit.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from dg_multigrid.core.models import Precision, SolverConfig
from dg_multigrid.core.operator import DoFVector

logger = logging.getLogger("dg-multigrid.krylov")

LinearMap = Callable[[np.ndarray], np.ndarray]
OperatorLike = Union[LinearMap, np.ndarray, scipy.sparse.spmatrix, LinearOperator]


@dataclass
class ConvergenceHistory:
    """Residual norms ||r_0||..||r_n|| of one GMRES run."""

    residual_norms: List[float]
    converged: bool
    rtol: float

    @property
    def iterations(self) -> int:
        return len(self.residual_norms) - 1

    @property
    def relative_residual(self) -> float:
        if not self.residual_norms or self.residual_norms[0] == 0.0:
            return 0.0
        return self.residual_norms[-1] / self.residual_norms[0]

    @property
    def fractional_iterations(self) -> float:
        return fractional_iterations(self, self.rtol)


def fractional_iterations(history: ConvergenceHistory, rtol: Optional[float] = None) -> float:
    """
    Iterations needed to reduce the residual by rtol at the average rate.

    With the mean contraction r = (||r_n|| / ||r_0||)^(1/n) this is
    log(rtol) / log(r), so nu equals n exactly when the final ratio is rtol.
    A zero initial residual or zero iterations count as already converged
    and give 0. A run that never contracts gives infinity, an exact
    solve gives n.
    """
    rtol = history.rtol if rtol is None else rtol
    n = history.iterations
    if n <= 0 or history.residual_norms[0] == 0.0:
        logger.info("Initial residual already converged, nu = 0")
        return 0.0
    ratio = history.relative_residual
    if ratio >= 1.0:
        return math.inf
    if ratio == 0.0:
        # exact solve, reported as the integer count
        return float(n)
    return n * math.log10(rtol) / math.log10(ratio)


def _as_map(op: Optional[OperatorLike]) -> LinearMap:
    if op is None:
        return lambda v: v
    if isinstance(op, (np.ndarray, LinearOperator)) or scipy.sparse.issparse(op):
        linear = aslinearoperator(op)
        return lambda v: np.asarray(linear.matvec(v)).reshape(-1)
    if callable(op):
        return op
    raise TypeError(f"Unsupported operator type {type(op).__name__}")


def _givens(a: float, b: float) -> Tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = math.hypot(a, b)
    return a / r, b / r


def gmres(
    A: OperatorLike,
    b: Union[np.ndarray, DoFVector],
    P: Optional[OperatorLike] = None,
    config: Optional[SolverConfig] = None,
) -> Tuple[Union[np.ndarray, DoFVector], ConvergenceHistory]:
    """
    Solve A x = b with right-preconditioned GMRES, no restart, x0 = 0.

    Args:
        A: Operator as a callable, dense or sparse matrix or LinearOperator
        b: Right-hand side, a plain array or a DoFVector
        P: Preconditioner application, identity when omitted
        config: rtol, iteration limit and re-orthogonalization threshold

    Returns:
        The solution (same container as b) and the convergence history.
        Hitting max_iterations is not an error; history.converged is False.
    """
    config = config or SolverConfig()
    level = b.level if isinstance(b, DoFVector) else None
    rhs = np.asarray(b.values if isinstance(b, DoFVector) else b, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("Right-hand side contains non-finite entries")
    apply_a, apply_p = _as_map(A), _as_map(P)

    def wrap(x: np.ndarray) -> Union[np.ndarray, DoFVector]:
        return DoFVector(level, x) if level is not None else x

    size = rhs.size
    beta = float(np.linalg.norm(rhs))
    norms = [beta]
    if beta == 0.0:
        logger.info("Zero right-hand side, returning x = 0")
        return wrap(np.zeros(size)), ConvergenceHistory(norms, True, config.rtol)

    m = config.max_iterations
    V = np.zeros((m + 1, size))
    Z = np.zeros((m, size))
    H = np.zeros((m + 1, m))
    cs = np.zeros(m)
    sn = np.zeros(m)
    g = np.zeros(m + 1)
    g[0] = beta
    V[0] = rhs / beta
    target = config.rtol * beta
    converged = False
    j = 0

    for j in range(m):
        Z[j] = np.asarray(apply_p(V[j]), dtype=np.float64).reshape(-1)
        w = np.asarray(apply_a(Z[j]), dtype=np.float64).reshape(-1)
        w_norm = float(np.linalg.norm(w))
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        # second Gram-Schmidt pass when orthogonality is lost
        overlap = np.abs(V[: j + 1] @ w)
        if w_norm > 0.0 and overlap.max(initial=0.0) > config.reorthogonalization_threshold * w_norm:
            for i in range(j + 1):
                correction = V[i] @ w
                H[i, j] += correction
                w -= correction * V[i]
        H[j + 1, j] = float(np.linalg.norm(w))
        breakdown = H[j + 1, j] <= np.finfo(float).eps * max(w_norm, 1.0)
        if not breakdown:
            V[j + 1] = w / H[j + 1, j]

        for i in range(j):
            upper = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = upper
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        norms.append(abs(float(g[j + 1])))
        logger.debug(f"GMRES iteration {j + 1}: relative residual {norms[-1] / beta:.3e}")
        if norms[-1] <= target or breakdown:
            converged = norms[-1] <= target
            if breakdown and not converged:
                logger.warning(f"GMRES breakdown at iteration {j + 1}")
            break

    steps = len(norms) - 1
    y = np.linalg.solve(np.triu(H[:steps, :steps]), g[:steps])
    x = y @ Z[:steps]
    history = ConvergenceHistory(norms, converged, config.rtol)
    if converged:
        logger.info(
            f"GMRES converged in {steps} iterations, "
            f"relative residual {history.relative_residual:.3e}"
        )
    else:
        logger.warning(
            f"GMRES did not reach rtol={config.rtol:g} in {steps} iterations "
            f"(relative residual {history.relative_residual:.3e})"
        )
    return wrap(x), history


class MixedPrecisionPreconditioner:
    """Run a V-cycle in single precision behind a double precision interface."""

    def __init__(self, preconditioner: Any) -> None:
        self.preconditioner = preconditioner
        prepare = getattr(preconditioner, "prepare", None)
        if prepare is not None:
            prepare(Precision.SINGLE)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        single = np.asarray(v, dtype=np.float64).astype(np.float32)
        result = self.preconditioner(single)
        return np.asarray(result).astype(np.float64)


def mixed_precision_vcycle(P: Any) -> MixedPrecisionPreconditioner:
    """Wrap a double precision V-cycle so that it runs entirely in single precision."""
    return MixedPrecisionPreconditioner(P)
