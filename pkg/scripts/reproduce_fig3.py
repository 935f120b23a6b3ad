"""Regenerate the fig3 reproduction at full statistics.

Extra arguments are passed to the CLI (e.g. --fast, --workers 8, --out path).
"""
import sys

from pdcdecoy.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce", "fig3", *sys.argv[1:]]))
