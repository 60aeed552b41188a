"""Timing matrix: filler mode x {first pass, replay}, plus keyword-count scaling rows.

Each variant is run ``repeats`` times, interleaved with the others so that
slow phases of a noisy machine hit every variant alike, and the fastest run
is kept. First-pass timing starts from the raw likelihood matrix, so the
quasi-monophone rows include pooling. Graph construction and cache
writing/loading are reported in a separate ``prep_s`` column and are not
part of the RT factor.
"""

from __future__ import annotations

import csv
import tempfile
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import corpora
from .cache import read_cache, replay_decode, write_cache
from .decoder import DecoderConfig
from .pipeline import build_models, decoder_input, first_pass
from .spotter import SpotterConfig, format_event


@dataclass
class BenchRow:
    variant: str
    mode: str
    n_keywords: int
    frames: int
    audio_s: float
    wall_s: float
    rt: float
    frames_per_s: float
    mean_active: float
    events: int
    prep_s: float = 0.0
    note: str = ""


def _row(variant, mode, n_kw, frames, audio_s, wall, active, events, prep, note=""):
    return BenchRow(variant, mode, n_kw, frames, audio_s, wall, wall / audio_s,
                    frames / wall if wall > 0 else float("inf"), float(active), events, prep, note)


def _events_text(events):
    return "\n".join(format_event("s", e) for e in events)


class _Variant:
    """One timed configuration; ``run()`` returns (result, mean active units)."""

    def __init__(self, variant, mode, n_kw, frames, audio_s, prep, run, note=""):
        self.variant, self.mode, self.n_kw = variant, mode, n_kw
        self.frames, self.audio_s, self.prep = frames, audio_s, prep
        self.run = run
        self.note = note
        self.best = np.inf
        self.active = 0.0
        self.events = None

    def time_once(self):
        t0 = time.perf_counter()
        events, active = self.run()
        dt = time.perf_counter() - t0
        if dt < self.best:
            self.best = dt
        self.active, self.events = active, events

    def row(self) -> BenchRow:
        return _row(self.variant, self.mode, self.n_kw, self.frames, self.audio_s, self.best,
                    self.active, len(self.events), self.prep, self.note)


def _mode_variants(corpus, mode, dcfg, scfg, workdir):
    t0 = time.perf_counter()
    models = build_models(corpus.inventory, corpus.keywords, mode)
    graph = models.graph()
    prep = time.perf_counter() - t0
    m = decoder_input(corpus.matrix, models)
    label = "quasi-mono" if models.mode == "quasi_monophone" else models.mode

    def fp():
        r = first_pass(corpus.matrix, models, dcfg, scfg, graph=graph).result
        return r.events, r.summaries.n_active.mean()

    ref = first_pass(corpus.matrix, models, dcfg, scfg, graph=graph).result
    path = Path(workdir) / f"{models.mode}.kwsc"
    t0 = time.perf_counter()
    write_cache(path, m, ref.summaries, corpus.inventory.fingerprint(models.mode))
    cache = read_cache(path)
    kws = models.replay_keywords()
    rprep = time.perf_counter() - t0

    def rp():
        r = replay_decode(cache, kws, dcfg, scfg)
        return r.events, r.n_active.mean()

    first = _Variant(f"{label} first-pass", label, len(kws), m.num_frames, m.duration_seconds, prep, fp)
    replay = _Variant(f"{label} replay", label, len(kws), m.num_frames, m.duration_seconds, rprep, rp)
    return [first, replay], ref.events


def _scaling_variants(corpus, counts, dcfg, scfg, tag=""):
    out = []
    for n in counts:
        t0 = time.perf_counter()
        models = build_models(corpus.inventory, corpus.keywords[:n], "quasi")
        graph = models.graph()
        prep = time.perf_counter() - t0
        m = corpus.matrix

        def fp(models=models, m=m, graph=graph):
            r = first_pass(m, models, dcfg, scfg, graph=graph).result
            return r.events, r.summaries.n_active.mean()

        out.append(_Variant(f"quasi-mono {n} keywords{tag}", "quasi-mono", n, m.num_frames,
                            m.duration_seconds, prep, fp))
    return out


def bench_suite(mode_corpus=None, scaling_corpus=None, modes=("triphone", "quasi"),
                scaling_counts=(555, 10000), extra_scaling=(), dcfg: DecoderConfig = DecoderConfig(),
                scfg: SpotterConfig = SpotterConfig(), repeats: int = 3) -> list:
    """Run the matrix and return BenchRows.

    ``mode_corpus`` defaults to the shipped triphone corpus and
    ``scaling_corpus`` to the shipped scaling corpus; ``extra_scaling`` holds
    further (tag, corpus) pairs timed with the same keyword counts. Replay
    rows carry ``note="identical"`` when their events match the first pass
    byte for byte.
    """
    if mode_corpus is None:
        mode_corpus = corpora.build("triphone")
    if scaling_corpus is None and scaling_counts:
        scaling_corpus = corpora.build("scaling")
    variants = []
    with tempfile.TemporaryDirectory() as tmp:
        refs = {}
        for mode in modes:
            pair, ref_events = _mode_variants(mode_corpus, mode, dcfg, scfg, tmp)
            refs[pair[1].variant] = _events_text(ref_events)
            variants += pair
        if scaling_counts:
            variants += _scaling_variants(scaling_corpus, scaling_counts, dcfg, scfg)
        for tag, c in extra_scaling:
            variants += _scaling_variants(c, scaling_counts, dcfg, scfg, f" ({tag})")
        for v in variants:  # warm-up (JIT, caches)
            v.time_once()
            v.best = np.inf
        for _ in range(max(1, repeats)):
            for v in variants:
                v.time_once()
    rows = []
    for v in variants:
        if v.variant in refs:
            v.note = "identical" if _events_text(v.events) == refs[v.variant] else "DIFFERS"
        rows.append(v.row())
    return rows


def scaling_ratio(rows, lo: int, hi: int, tag: str = "") -> float:
    by = {r.variant: r for r in rows}
    return by[f"quasi-mono {hi} keywords{tag}"].rt / by[f"quasi-mono {lo} keywords{tag}"].rt


_COLUMNS = [f.name for f in fields(BenchRow)]


def write_bench_csv(path, rows, header_lines=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        w = csv.DictWriter(f, fieldnames=_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in asdict(r).items()})


def format_table(rows) -> str:
    cols = ["variant", "n_keywords", "frames", "wall_s", "rt", "frames_per_s", "mean_active",
            "events", "prep_s", "note"]
    fmt = {"wall_s": "{:.4f}", "rt": "{:.6f}", "frames_per_s": "{:.0f}", "mean_active": "{:.1f}",
           "prep_s": "{:.3f}"}
    cells = [[fmt.get(c, "{}").format(getattr(r, c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(cols)]
    out = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    out.append("  ".join("-" * w for w in widths))
    for row in cells:
        out.append("  ".join(v.rjust(w) if i else v.ljust(w) for i, (v, w) in enumerate(zip(row, widths))))
    return "\n".join(out)
