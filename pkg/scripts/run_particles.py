#!/usr/bin/env python3
"""Particle advection through the fm and vectorized-timestep marginal
velocity fields on the documented two-target fixture; writes
artifacts/particles/ (trajectories and the outlier summary)."""

import sys
from pathlib import Path

from combostoc.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["particles",
                   "--config", str(ROOT / "configs" / "particles.json"),
                   "--out", str(ROOT / "artifacts" / "particles"),
                   *sys.argv[1:]]))
