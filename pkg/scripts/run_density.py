#!/usr/bin/env python3
"""Path-space density maps and gradient-identity residuals for the
documented single-target fixture; writes artifacts/density/."""

import sys
from pathlib import Path

from combostoc.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    sys.exit(main(["density",
                   "--config", str(ROOT / "configs" / "density.json"),
                   "--out", str(ROOT / "artifacts" / "density"),
                   *sys.argv[1:]]))
