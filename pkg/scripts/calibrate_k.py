"""Calibrate the confidence constant k on the synthetic dev corpus.

Prints k, then checks it on dev (confidence at EER) and on eval (EER and
counts at threshold 75). The value shipped as ``kwspot.spotter.DEFAULT_K``
came from this script in quasi-monophone mode.
"""

import argparse
import sys

from kwspot import corpora
from kwspot.evaluation import match_spots
from kwspot.pipeline import build_models, calibrate_on, det_for
from kwspot.spotter import DEFAULT_K


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fillers", default="quasi", choices=["triphone", "mono", "quasi"])
    ap.add_argument("--target", type=float, default=75.0)
    ap.add_argument("--buffer-len", type=int, default=15)
    args = ap.parse_args(argv)

    dev = corpora.build("dev")
    models = build_models(dev.inventory, dev.keywords, args.fillers)
    k = calibrate_on(dev.matrix, models, dev.references, target=args.target, buffer_len=args.buffer_len)
    print(f"k = {k:.2f}  (shipped default {DEFAULT_K:g})")
    det, _ = det_for(dev.matrix, models, dev.references, k, buffer_len=args.buffer_len)
    print(f"dev:  EER {det.eer:.3f} at confidence {det.eer_threshold:.2f}")

    ev = corpora.build("eval")
    models = build_models(ev.inventory, ev.keywords, args.fillers)
    det, events = det_for(ev.matrix, models, ev.references, k, buffer_len=args.buffer_len)
    kept = [e for e in events if e.confidence >= args.target]
    mr = match_spots(kept, ev.references, {e.lemma for e in ev.keywords})
    print(f"eval: EER {det.eer:.3f} at confidence {det.eer_threshold:.2f}; at {args.target:g}: "
          f"{len(mr.hits)} hits, {len(mr.misses)} misses, {len(mr.false_alarms)} false alarms")
    return 0


if __name__ == "__main__":
    sys.exit(main())
