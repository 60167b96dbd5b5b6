"""Render the reference comparison table from the bundled fixture rows."""
import sys
from pathlib import Path

from layerforge import cli

FIXTURE = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "reference_rows"

if __name__ == "__main__":
    files = [FIXTURE / f for f in ("docres.json", "best_l0.json", "best_l1.json")]
    sys.exit(cli.main(["report", "--inputs", *map(str, files)]))
