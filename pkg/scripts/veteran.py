"""Bands for held-out subjects 88 and 97 of the veteran data.

Run from the repository root so the relative CSV path resolves.
"""
import sys
from pathlib import Path

from rsfband.cli import main

HERE = Path(__file__).resolve().parent

if __name__ == "__main__":
    sys.exit(main(["real", "--config", str(HERE / "configs" / "veteran.toml"),
                   "--held-out", "88", "97", "--out", "results/veteran", *sys.argv[1:]]))
