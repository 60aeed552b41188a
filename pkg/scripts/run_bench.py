"""RT-factor table: filler mode x {first pass, replay} and keyword-count scaling.

    python3 scripts/run_bench.py --csv-out bench.csv

Same as ``kwspot bench``; kept as a script so it can be run from a checkout.
"""

import sys

from kwspot.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
