#!/usr/bin/env python3
"""
Decoupling Explorer

This script exposes the decoupling toolkit on the command line: classification
of non-linearities, monotone multi-marginal couplings with certificates,
boundary value solves, decoupling potentials, rectangular rearrangement and
the worked examples.

Example:
    python scripts/decoupling_explorer.py analyze --spec ac-quadratic --m 3
    python scripts/decoupling_explorer.py examples --case quadratic-coupling --out results
"""

import sys
import logging
from pathlib import Path

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')

# Add the project root directory to the Python path
project_root = str(Path(__file__).parent.parent)
sys.path.append(project_root)

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
