"""Write a synthetic uplift dataset shaped like the Criteo campaign data.

Twelve skewed features, an 85% treated arm, a binary visit outcome and the
planted per-row effect ``tau`` (kept so that an oracle policy can be scored).

    python demos/make_criteo_like.py data/criteo_like.csv [rows] [seed]
"""

import sys
from pathlib import Path

from stratquery.simulation import write_criteo_like_csv


def main(argv):
    if not argv:
        print(__doc__)
        return 2
    path = Path(argv[0])
    rows = int(argv[1]) if len(argv) > 1 else 200_000
    seed = int(argv[2]) if len(argv) > 2 else 7
    path.parent.mkdir(parents=True, exist_ok=True)
    write_criteo_like_csv(path, rows, seed)
    print(f"wrote {rows} rows to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
