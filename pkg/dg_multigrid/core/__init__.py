"""
Core numerics of dg-multigrid: mesh hierarchy, SIPG operator, patch
smoother, multigrid, GMRES, bank-conflict model and rank simulation.
"""

from dg_multigrid.core.krylov import ConvergenceHistory, gmres
from dg_multigrid.core.mesh import MeshHierarchy, build_hierarchy
from dg_multigrid.core.multigrid import MultigridPreconditioner
from dg_multigrid.core.operator import DoFVector, GlobalOperator
from dg_multigrid.core.partition import DistributedMultigrid
from dg_multigrid.core.smoother import VertexPatchSmoother

__all__ = [
    "ConvergenceHistory",
    "DistributedMultigrid",
    "DoFVector",
    "GlobalOperator",
    "MeshHierarchy",
    "MultigridPreconditioner",
    "VertexPatchSmoother",
    "build_hierarchy",
    "gmres",
]
