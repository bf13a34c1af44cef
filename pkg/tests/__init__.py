"""Test package for dg-multigrid."""
