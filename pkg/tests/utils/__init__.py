"""
Utility tests for dg-multigrid.
"""
