"""
CLI package for dg-multigrid.
"""

from dg_multigrid.cli.main import app, entry_point

__all__ = ["app", "entry_point"]
