"""Command line: ``kwspot {spot,replay,synth,eval,bench}``.

Settings resolve as command-line flags, then the flat ``key=value`` file
named by ``$KWSPOT_CONFIG`` (keys are flag names, dashes or underscores),
then built-in defaults. Every output is written to a temporary sibling and
renamed into place once complete, so a failed run leaves no partial files;
the exit status is 0 only when all outputs were written.

Event files carry a short header of the settings that determine their
content, which is the same for a first pass and its replay. The full run
manifest and the timing go to the run report (stdout, or ``--report``),
in separate sections.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, corpora
from .cache import CacheError, read_cache, replay_decode, write_cache
from .decoder import DecoderConfig
from .evaluation import det_curve, load_references, match_spots, write_det_csv, write_references
from .likelihood import MatrixFormatError, load_matrix, write_matrix
from .model import (InventoryError, KeywordListError, build_keyword_models, canonical_mode,
                    keyword_context_mode, load_inventory, load_keyword_list, write_inventory,
                    write_keyword_list)
from .pipeline import build_models, first_pass
from .spotter import DEFAULT_K, SpotterConfig, read_events, write_events, write_events_jsonl

log = logging.getLogger("kwspot")

CONFIG_ENV = "KWSPOT_CONFIG"
USAGE_ERROR = 2
RUN_ERROR = 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# manifest and outputs

@dataclass
class RunManifest:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    decoder: DecoderConfig = None
    spotter: SpotterConfig = None
    seed: int = None
    extra: dict = field(default_factory=dict)

    def validate(self):
        """Check inputs exist and output directories are writable, before any work."""
        for name, p in self.inputs.items():
            if p is not None and not Path(p).is_file():
                raise UsageError(f"--{name.replace('_', '-')}: no such file: {p}")
        for name, p in self.outputs.items():
            if p is None:
                continue
            parent = Path(p).resolve().parent
            if not parent.is_dir():
                raise UsageError(f"--{name.replace('_', '-')}: directory does not exist: {parent}")

    def lines(self) -> list:
        out = [f"kwspot {__version__} {self.subcommand}"]
        for k, v in sorted(self.inputs.items()):
            if v is not None:
                out.append(f"input.{k}={v}")
        for k, v in sorted(self.outputs.items()):
            if v is not None:
                out.append(f"output.{k}={v}")
        if self.decoder is not None:
            out.append(f"beam={self.decoder.beam:g}")
        if self.spotter is not None:
            out.append(f"k={self.spotter.k:g} threshold={self.spotter.accept_threshold:g} "
                       f"buffer_len={self.spotter.buffer_len}")
        if self.seed is not None:
            out.append(f"seed={self.seed}")
        for k, v in self.extra.items():
            out.append(f"{k}={v}")
        return out


class Outputs:
    """Collects outputs as temp files; ``commit()`` renames them all into place."""

    def __init__(self):
        self._pending = []

    def path(self, final) -> Path:
        final = Path(final)
        tmp = final.with_name(f".{final.name}.{os.getpid()}.part")
        self._pending.append((tmp, final))
        return tmp

    def commit(self):
        for tmp, final in self._pending:
            os.replace(tmp, final)
        self._pending.clear()

    def discard(self):
        for tmp, _ in self._pending:
            try:
                tmp.unlink()
            except FileNotFoundError:
                pass
        self._pending.clear()


class Report:
    def __init__(self, manifest: RunManifest):
        self.manifest = manifest
        self.results = []
        self.timing = []

    def text(self) -> str:
        parts = ["[manifest]", *self.manifest.lines(), "", "[results]", *self.results]
        if self.timing:
            parts += ["", "[timing]", *self.timing]
        return "\n".join(parts) + "\n"


def _sha(values) -> str:
    return hashlib.blake2b(np.ascontiguousarray(values).tobytes(), digest_size=8).hexdigest()


def _event_header(fingerprint: bytes, matrix, keywords, scfg: SpotterConfig, dcfg: DecoderConfig):
    kw = hashlib.blake2b("\n".join(f"{e.form},{e.lemma},{' '.join(e.phones)}" for e in keywords).encode(),
                         digest_size=8).hexdigest()
    return [f"model={fingerprint.hex()} stream={_sha(matrix.values)} frames={matrix.num_frames}",
            f"keywords={len(keywords)} keyword_list={kw}",
            f"beam={dcfg.beam:g} k={scfg.k:g} threshold={scfg.accept_threshold:g} "
            f"buffer_len={scfg.buffer_len}"]


def _write_event_file(path, events, stream_id, header, fmt):
    if fmt == "jsonl":
        write_events_jsonl(path, events, stream_id)
    else:
        write_events(path, events, stream_id, header)


# ---------------------------------------------------------------------------
# subcommands

def _configs(args):
    dcfg = DecoderConfig(beam=args.beam)
    scfg = SpotterConfig(k=args.k, accept_threshold=args.threshold, buffer_len=args.buffer_len,
                         strict_buffer_bounds=not args.allow_any_buffer)
    return dcfg, scfg


def cmd_spot(args, out: Outputs) -> Report:
    if args.keywords is None:
        raise UsageError("--keywords is required")
    dcfg, scfg = _configs(args)
    man = RunManifest("spot", {"matrix": args.matrix, "inventory": args.inventory, "keywords": args.keywords},
                      {"out": args.out, "cache_out": args.cache_out, "report": args.report}, dcfg, scfg,
                      args.seed, {"fillers": canonical_mode(args.fillers)})
    man.validate()
    inv = load_inventory(args.inventory)
    entries = load_keyword_list(args.keywords, inv, strict=not args.lenient)
    m = load_matrix(args.matrix)
    models = build_models(inv, entries, args.fillers)
    top = max(max(u.state_ids) for u in models.units)
    if models.state_map is None and top >= m.num_states:
        raise UsageError(f"models use state {top} but {args.matrix} has {m.num_states} states")
    run = first_pass(m, models, dcfg, scfg)
    events = run.result.events
    fp = inv.fingerprint(models.mode)
    stream_id = args.stream_id or Path(args.matrix).stem
    _write_event_file(out.path(args.out), events, stream_id,
                      _event_header(fp, run.matrix, entries, scfg, dcfg), args.format)
    if args.cache_out:
        write_cache(out.path(args.cache_out), run.matrix, run.result.summaries, fp, dcfg.initial_score,
                    stream_id)
    rep = Report(man)
    rep.results += [f"events={len(events)}", f"frames={m.num_frames}", f"audio_seconds={m.duration_seconds:.2f}",
                    f"mean_active_units={run.result.summaries.n_active.mean():.1f}"]
    if args.cache_out:
        rep.results.append(f"cache_values_per_frame={run.matrix.num_states + 2}")
    rep.timing += [f"decode_seconds={run.seconds:.4f}", f"rt_factor={run.rt:.6f}"]
    return rep


def cmd_replay(args, out: Outputs) -> Report:
    if args.keywords is None:
        raise UsageError("--keywords is required")
    if args.cache_in is None:
        raise UsageError("--cache-in is required")
    dcfg, scfg = _configs(args)
    mode = canonical_mode(args.fillers)
    man = RunManifest("replay", {"cache_in": args.cache_in, "inventory": args.inventory, "keywords": args.keywords},
                      {"out": args.out, "report": args.report}, dcfg, scfg, args.seed, {"fillers": mode})
    man.validate()
    inv = load_inventory(args.inventory)
    entries = load_keyword_list(args.keywords, inv, strict=not args.lenient)
    fp = inv.fingerprint(mode)
    cache = read_cache(args.cache_in, expect_fingerprint=fp, initial_score=dcfg.initial_score)
    kws = build_keyword_models(entries, inv, keyword_context_mode(mode))
    t0 = time.perf_counter()
    res = replay_decode(cache, kws, dcfg, scfg)
    seconds = time.perf_counter() - t0
    stream_id = args.stream_id or cache.stream_id or Path(args.cache_in).stem
    _write_event_file(out.path(args.out), res.events, stream_id,
                      _event_header(fp, cache.matrix, entries, scfg, dcfg), args.format)
    audio = cache.matrix.duration_seconds
    rep = Report(man)
    rep.results += [f"events={len(res.events)}", f"frames={cache.matrix.num_frames}",
                    f"audio_seconds={audio:.2f}",
                    f"mean_active_units={res.n_active.mean() if res.n_active.size else 0.0:.1f}"]
    rep.timing += [f"decode_seconds={seconds:.4f}",
                   f"rt_factor={seconds / audio if audio > 0 else float('nan'):.6f}"]
    return rep


def cmd_synth(args, out: Outputs) -> Report:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.minutes is not None:
        overrides["minutes"] = args.minutes
    if args.margin is not None:
        overrides["target_margin"] = args.margin
    d = Path(args.out_dir)
    names = {"matrix": "stream.kwsl", "inventory": "inventory.txt", "keywords": "keywords.txt",
             "refs": "refs.txt"}
    man = RunManifest("synth", {}, {k: str(d / v) for k, v in names.items()} | {"report": args.report},
                      seed=args.seed, extra={"recipe": args.recipe, **{k: v for k, v in overrides.items()}})
    if not d.is_dir():
        raise UsageError(f"--out-dir: directory does not exist: {d}")
    man.validate()
    c = corpora.build(args.recipe, **overrides)
    write_matrix(out.path(d / names["matrix"]), c.matrix)
    write_inventory(c.inventory, out.path(d / names["inventory"]))
    write_keyword_list(c.keywords, out.path(d / names["keywords"]))
    write_references(c.references, out.path(d / names["refs"]))
    rep = Report(man)
    rep.results += [f"frames={c.matrix.num_frames}", f"states={c.matrix.num_states}",
                    f"keywords={len(c.keywords)}", f"planted={len(c.truth)}",
                    f"decoys={sum(o.decoy for o in c.occurrences)}"]
    return rep


def cmd_eval(args, out: Outputs) -> Report:
    man = RunManifest("eval", {"events": args.events, "refs": args.refs, "keywords": args.keywords,
                               "inventory": args.inventory},
                      {"csv_out": args.csv_out, "report": args.report},
                      extra={"tolerance": args.tolerance})
    man.validate()
    events = read_events(args.events)
    refs = load_references(args.refs)
    lemmas = None
    if args.keywords:
        if not args.inventory:
            raise UsageError("--keywords needs --inventory")
        lemmas = {e.lemma for e in load_keyword_list(args.keywords, load_inventory(args.inventory), strict=False)}
    audio = args.audio_seconds
    if audio is None:
        audio = max([r.end for r in refs] + [e.end_time for e in events] + [0.0])
    det = det_curve(events, refs, audio / 3600.0, lemmas, tolerance=args.tolerance)
    if args.csv_out:
        write_det_csv(out.path(args.csv_out), det, header_note=" ".join(man.lines()))
    rep = Report(man)
    mr = match_spots(events, refs, lemmas, args.tolerance)
    rep.results += [f"eer={det.eer:.6f}", f"confidence_at_eer={det.eer_threshold:.4f}",
                    f"events={len(events)} targets={det.num_targets}",
                    f"all_accepted: hits={len(mr.hits)} misses={len(mr.misses)} "
                    f"false_alarms={len(mr.false_alarms)}"]
    if args.threshold is not None:
        kept = [e for e in events if e.confidence >= args.threshold]
        mt = match_spots(kept, refs, lemmas, args.tolerance)
        rep.results.append(f"at_threshold_{args.threshold:g}: hits={len(mt.hits)} misses={len(mt.misses)} "
                           f"false_alarms={len(mt.false_alarms)}")
    return rep


def cmd_bench(args, out: Outputs) -> Report:
    from .bench import bench_suite, format_table, scaling_ratio, write_bench_csv

    dcfg, scfg = _configs(args)
    counts = tuple(args.keyword_counts)
    man = RunManifest("bench", {}, {"csv_out": args.csv_out, "report": args.report}, dcfg, scfg, args.seed,
                      {"keyword_counts": ",".join(map(str, counts)), "repeats": args.repeats,
                       "minutes_scale": args.minutes_scale,
                       "extra_margins": ",".join(f"{x:g}" for x in args.extra_margin)})
    man.validate()
    scale = args.minutes_scale

    def corpus(name, **kw):
        r = corpora.RECIPES[name]
        if args.seed is not None:
            kw["seed"] = r.seed + args.seed
        return corpora.build(name, minutes=r.minutes * scale, **kw)

    tri = corpus("triphone")
    sc = corpus("scaling") if counts else None
    extra = [(f"margin {x:g}", corpus("scaling", target_margin=x)) for x in args.extra_margin] if counts else []
    rows = bench_suite(tri, sc, scaling_counts=counts, extra_scaling=extra, dcfg=dcfg, scfg=scfg,
                       repeats=args.repeats)
    if args.csv_out:
        write_bench_csv(out.path(args.csv_out), rows, man.lines())
    rep = Report(man)
    by = {r.variant: r for r in rows}
    rep.results.append(f"replay_identical={all(r.note == 'identical' for r in rows if 'replay' in r.variant)}")
    rep.timing += format_table(rows).splitlines()
    rep.timing.append("")
    tri_fp, q_fp = by.get("triphone first-pass"), by.get("quasi-mono first-pass")
    if tri_fp and q_fp:
        rep.timing.append(f"triphone/quasi first-pass RT ratio={tri_fp.rt / q_fp.rt:.2f}")
    if len(counts) >= 2:
        lo, hi = min(counts), max(counts)
        rep.timing.append(f"keyword scaling {lo}->{hi} RT ratio={scaling_ratio(rows, lo, hi):.2f}")
        for tag, _ in extra:
            rep.timing.append(f"keyword scaling {lo}->{hi} RT ratio ({tag})="
                              f"{scaling_ratio(rows, lo, hi, f' ({tag})'):.2f}")
    return rep


# ---------------------------------------------------------------------------
# argument parsing

def read_config(path) -> dict:
    conf = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        conf[key.replace("-", "_")] = (value, lineno)
    return conf


def _decoding_flags(p, fillers=True):
    if fillers:
        p.add_argument("--fillers", default="quasi", choices=["triphone", "mono", "quasi"],
                       help="filler model set (default: quasi)")
    p.add_argument("--beam", type=float, default=DecoderConfig.beam)
    p.add_argument("--k", type=float, default=DEFAULT_K, help="confidence scaling constant")
    p.add_argument("--threshold", type=float, default=75.0, help="acceptance threshold (default 75)")
    p.add_argument("--buffer-len", type=int, default=15, help="spot buffer length in frames (default 15)")
    p.add_argument("--allow-any-buffer", action="store_true", help="allow buffer lengths outside 10..20")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kwspot", description="Keyword spotting on log-likelihood streams.")
    ap.add_argument("--version", action="version", version=f"kwspot {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--report", default=None, help="also write the run report here")

    p = sub.add_parser("spot", help="first-pass keyword spotting")
    p.add_argument("--matrix", required=True, help="KWSL likelihood file")
    p.add_argument("--inventory", required=True)
    p.add_argument("--keywords", default=None, help="form,lemma,phones list")
    p.add_argument("--out", required=True, help="event file")
    p.add_argument("--cache-out", default=None, help="write a replay cache")
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.add_argument("--stream-id", default=None)
    p.add_argument("--lenient", action="store_true", help="drop too-short keywords instead of failing")
    _decoding_flags(p)
    common(p)
    p.set_defaults(func=cmd_spot)

    p = sub.add_parser("replay", help="keyword-only decoding from a cache")
    p.add_argument("--cache-in", default=None)
    p.add_argument("--inventory", required=True)
    p.add_argument("--keywords", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")
    p.add_argument("--stream-id", default=None)
    p.add_argument("--lenient", action="store_true")
    _decoding_flags(p)
    common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("synth", help="write a shipped synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--recipe", default="dev", choices=sorted(corpora.RECIPES))
    p.add_argument("--minutes", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score events against references, DET and EER")
    p.add_argument("--events", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--keywords", default=None, help="restrict to these lemmas (needs --inventory)")
    p.add_argument("--inventory", default=None)
    p.add_argument("--audio-seconds", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=None, help="also report counts at this threshold")
    p.add_argument("--csv-out", default=None, help="DET curve CSV")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="RT-factor table")
    p.add_argument("--csv-out", default=None)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--minutes-scale", type=float, default=1.0, help="scale the corpus lengths")
    p.add_argument("--keyword-counts", type=int, nargs="*", default=[555, 10000])
    p.add_argument("--extra-margin", type=float, nargs="*", default=[corpora.ACCURACY_MARGIN],
                   help="also time keyword scaling on corpora with these margins")
    _decoding_flags(p, fillers=False)
    common(p)
    p.set_defaults(func=cmd_bench)
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv):
    """Install config-file values as parser defaults (so flags still win)."""
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return
    if not Path(path).is_file():
        raise UsageError(f"${CONFIG_ENV}: no such file: {path}")
    conf = read_config(path)
    subs = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    known = set()
    for sp in subs.choices.values():
        for action in sp._actions:
            if action.dest in conf:
                known.add(action.dest)
                value, lineno = conf[action.dest]
                try:
                    if action.nargs in ("*", "+"):
                        conv = [action.type(v) if action.type else v for v in value.split()]
                    elif action.const is True:  # store_true
                        conv = value.lower() in ("1", "true", "yes", "on")
                    else:
                        conv = action.type(value) if action.type else value
                except ValueError:
                    raise UsageError(f"{path}:{lineno}: bad value {value!r} for {action.dest}") from None
                if action.choices is not None and conv not in action.choices:
                    raise UsageError(f"{path}:{lineno}: {action.dest} must be one of {list(action.choices)}")
                action.default = conv
                action.required = False
    unknown = sorted(set(conf) - known)
    if unknown:
        raise UsageError(f"{path}: unknown keys {unknown}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
    except UsageError as e:
        ap.error(str(e))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs()
    try:
        rep = args.func(args, out)
        text = rep.text()
        if args.report:
            out.path(args.report).write_text(text, encoding="utf-8")
        out.commit()
    except UsageError as e:
        out.discard()
        print(f"kwspot {args.command}: usage error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except (CacheError, MatrixFormatError, InventoryError, KeywordListError, ValueError, OSError) as e:
        out.discard()
        print(f"kwspot {args.command}: error: {e}", file=sys.stderr)
        return RUN_ERROR
    except BaseException:
        out.discard()
        raise
    sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
