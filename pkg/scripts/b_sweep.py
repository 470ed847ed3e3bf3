"""Repeat the scenario 3 study for B in 250, 500, 1000, 2000.

    python scripts/b_sweep.py [extra rsfband flags]
"""
import sys
from pathlib import Path

from rsfband.cli import main

HERE = Path(__file__).resolve().parent

if __name__ == "__main__":
    sys.exit(main(["bsweep", "--config", str(HERE / "configs" / "bsweep_scenario3.toml"),
                   "--b-values", "250", "500", "1000", "2000", "--out", "results/bsweep", "-v",
                   *sys.argv[1:]]))
