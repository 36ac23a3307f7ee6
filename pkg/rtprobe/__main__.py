"""
Entry point for running as a module: python -m rtprobe
"""

import sys

from rtprobe.cli import main

if __name__ == "__main__":
    sys.exit(main())
