#!/usr/bin/env python
"""
dg-multigrid: matrix-free geometric multigrid for SIPG discretizations.

This package provides tensor-product DG operators on Cartesian mesh
hierarchies, colored vertex-patch smoothers inverted by fast diagonalization,
a (mixed-precision) V-cycle preconditioned GMRES, a shared-memory bank model
and an in-process rank-partition simulator.
"""

# Try to get version from package metadata (single source of truth)
try:
    from importlib.metadata import version

    __version__ = version("dg-multigrid")
except Exception:
    # Fallback during development or if package is not installed
    __version__ = "dev"
