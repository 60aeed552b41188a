"""Write one or more shipped synthetic corpora to disk.

    python3 scripts/make_corpus.py --out data/ dev eval clean

Each corpus gets its own subdirectory holding stream.kwsl, inventory.txt,
keywords.txt and refs.txt, the same layout ``kwspot synth`` produces.
"""

import argparse
import sys
from pathlib import Path

from kwspot import corpora
from kwspot.evaluation import write_references
from kwspot.likelihood import write_matrix
from kwspot.model import write_inventory, write_keyword_list


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=sorted(corpora.RECIPES), help="recipe names (default: all)")
    ap.add_argument("--out", default="corpora")
    ap.add_argument("--minutes", type=float, default=None, help="override the recipe length")
    args = ap.parse_args(argv)
    for name in args.names:
        overrides = {} if args.minutes is None else {"minutes": args.minutes}
        c = corpora.build(name, **overrides)
        d = Path(args.out) / name
        d.mkdir(parents=True, exist_ok=True)
        write_matrix(d / "stream.kwsl", c.matrix)
        write_inventory(c.inventory, d / "inventory.txt")
        write_keyword_list(c.keywords, d / "keywords.txt")
        write_references(c.references, d / "refs.txt")
        print(f"{name}: {c.matrix.num_frames} frames x {c.matrix.num_states} states, "
              f"{len(c.keywords)} keywords, {len(c.truth)} planted -> {d}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
