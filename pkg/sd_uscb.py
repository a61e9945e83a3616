#!/usr/bin/env python3
"""
SD-USCB simulator entry point.

Commands:
  build-ckm        - Build per-BS channel knowledge maps
  simulate         - Run the SD-USCB epoch loop
  verify-theorem1  - Monte Carlo check of the leakage bounds
  bench-bf         - Beamformer update timing vs N_t
  sweep            - simulate over seeds x variants

Usage:
  python sd_uscb.py simulate --config data/desk_scenario.toml --out out/desk
  python sd_uscb.py verify-theorem1 --draws 100000
"""

import sys

from sduscb.cli import main

if __name__ == "__main__":
    sys.exit(main())
