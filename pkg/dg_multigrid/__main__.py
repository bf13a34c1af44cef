#!/usr/bin/env python
"""
Main entry point for the dg-multigrid package when executed as a script.
This simply imports and runs the CLI app.
"""

import sys

from dg_multigrid.cli.main import entry_point

if __name__ == "__main__":
    sys.exit(entry_point())
