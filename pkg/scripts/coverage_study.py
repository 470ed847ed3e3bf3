"""Run the desk-scale coverage study.

    python scripts/coverage_study.py [extra rsfband flags]

Writes results/coverage/. Flags given on the command line override the config.
"""
import sys
from pathlib import Path

from rsfband.cli import main

HERE = Path(__file__).resolve().parent

if __name__ == "__main__":
    sys.exit(main(["coverage", "--config", str(HERE / "configs" / "desk_coverage.toml"),
                   "--out", "results/coverage", "-v", *sys.argv[1:]]))
