"""
Common utility tests for dg-multigrid.
"""
