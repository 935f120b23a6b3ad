"""Regenerate the fig4 reproduction at full statistics.

Extra arguments are passed to the CLI (e.g. --fast, --workers 8, --out path).
"""
import sys

from pdcdecoy.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce", "fig4", *sys.argv[1:]]))
