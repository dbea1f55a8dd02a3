#!/usr/bin/env python3
"""
Tactile Surface Reconstruction - Main Entry Point

Runs the command-line toolkit (generate, probe, reconstruct, evaluate, pipeline, orient).
"""

import sys

from tactile_recon.pipeline import main


if __name__ == "__main__":
    sys.exit(main())
