#!/usr/bin/env python3
"""Regenerate the bundled network JSON files from the builders in
branchgrid.samples (run after editing a sample system)."""
import sys
from pathlib import Path

from branchgrid.samples import write_sample_files

if __name__ == "__main__":
    out = Path(__file__).resolve().parent.parent / "src" / "branchgrid" / "data"
    for path in write_sample_files(out):
        print(path)
    sys.exit(0)
