"""Spot management: rival margins, confidences, the sliding buffer and event output.

For a keyword ``w`` whose end state is active at frame ``t`` with score
``D(w, t)`` and start frame ``T``, the rival margin is
``R = D_best(t) - D(w, t)``: the accumulated best score over all units
minus the keyword's, both measured from the same origin. The best
filler string's score over ``[T, t]`` is replaced by
``D_best(t) - D_best(T - 1)``, which is exact whenever the best path has a
unit boundary at ``T``. Confidence is ``100 - k * R / ((t - T) * N_s)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .model import KEYWORD, KeywordEntry

NEG_INF = -np.inf

# Calibrated on the synthetic dev corpus in quasi-monophone mode (scripts/calibrate_k.py);
# recalibrate for real acoustic models.
DEFAULT_K = 2065.0


@dataclass(frozen=True)
class SpotterConfig:
    k: float = DEFAULT_K
    accept_threshold: float = 75.0
    buffer_len: int = 15
    strict_buffer_bounds: bool = True

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        # -inf accepts everything (threshold sweeps, calibration)
        if not (self.accept_threshold <= 100 and (self.accept_threshold >= 0
                                                  or self.accept_threshold == NEG_INF)):
            raise ValueError("accept_threshold must lie in [0, 100] or be -inf")
        if self.buffer_len < 1:
            raise ValueError("buffer_len must be >= 1")
        if self.strict_buffer_bounds and not 10 <= self.buffer_len <= 20:
            raise ValueError("buffer_len outside 10..20 frames (pass strict_buffer_bounds=False to override)")


@dataclass(frozen=True)
class SpotCandidate:
    unit: int
    keyword: KeywordEntry
    end_frame: int
    start_frame: int
    R: float
    C: float


@dataclass(frozen=True)
class SpotEvent:
    keyword: KeywordEntry
    start_time: float
    end_time: float
    confidence: float
    start_frame: int = -1
    end_frame: int = -1
    R: float = float("nan")
    num_states: int = 0

    @property
    def form(self):
        return self.keyword.form

    @property
    def lemma(self):
        return self.keyword.lemma

    @property
    def midpoint(self):
        return 0.5 * (self.start_time + self.end_time)


def rival_margin(D_best_t: float, D_w_t: float) -> float:
    return D_best_t - D_w_t


def confidence(R, t, T, N_s, k):
    """Map a rival margin onto the 0..100 scale, normalised per frame and per state."""
    t = np.asarray(t)
    T = np.asarray(T)
    if np.any(t <= T):
        raise ValueError("confidence needs t > T (zero-duration span)")
    if np.any(np.asarray(N_s) < 1) or not k > 0:
        raise ValueError("N_s must be >= 1 and k > 0")
    c = 100.0 - k * np.asarray(R, dtype=np.float64) / ((t - T) * np.asarray(N_s, dtype=np.float64))
    return float(c) if np.ndim(c) == 0 else c


def normalized_margin(R, duration, N_s):
    return np.asarray(R, dtype=np.float64) / (np.asarray(duration, dtype=np.float64) * np.asarray(N_s))


def calibrate_k(dev_candidates, target: float = 75.0, n_missed: int = 0) -> float:
    """Choose k so that the dev-set EER operating point lands on confidence ``target``.

    ``dev_candidates`` holds ``(R, duration, N_s, is_true_hit)`` tuples;
    ``n_missed`` counts true occurrences no candidate covers. The EER
    threshold on the normalised margin ``x = R / (duration * N_s)`` does not
    depend on k, so k follows from ``100 - k * x_eer = target``.
    """
    from .evaluation import eer_from_scores

    arr = list(dev_candidates)
    if not arr:
        raise ValueError("empty dev set")
    R, dur, ns, hit = (np.array(c) for c in zip(*arr))
    hit = hit.astype(bool)
    if hit.all() or not hit.any():
        raise ValueError("degenerate dev set: needs both true hits and false alarms")
    x = normalized_margin(R, dur, ns)
    _, thr = eer_from_scores(-x[hit], -x[~hit], n_missed=n_missed)
    x_eer = -thr
    if not x_eer > 0:
        raise ValueError("EER operating point sits at zero margin; k is undefined for this dev set")
    return (100.0 - target) / x_eer


class SpotBuffer:
    """Per-keyword max-in-window filter over accepted candidates.

    A candidate is held until ``buffer_len`` frames pass without a better
    candidate for the same keyword form arriving; a later candidate within
    the window replaces the held one only if strictly better. Candidates of
    an instance already emitted (same form and start frame, i.e. the end
    state lingering past the word) are dropped.
    """

    def __init__(self, buffer_len: int = 15):
        self.buffer_len = buffer_len
        self.pending = {}
        self.emitted_start = {}

    def push(self, cand: SpotCandidate) -> list:
        out = []
        key = cand.keyword.form
        if self.emitted_start.get(key) == cand.start_frame:
            return out
        held = self.pending.get(key)
        if held is None:
            self.pending[key] = cand
        elif cand.end_frame - held.end_frame < self.buffer_len:
            if cand.C > held.C:
                self.pending[key] = cand
        else:
            out.append(self._release(held))
            self.pending[key] = cand
        return out

    def _release(self, c):
        self.emitted_start[c.keyword.form] = c.start_frame
        return c

    def advance(self, frame: int) -> list:
        """Release held candidates whose window closed by ``frame``."""
        done = [c for c in self.pending.values() if frame - c.end_frame >= self.buffer_len]
        for c in done:
            del self.pending[c.keyword.form]
            self._release(c)
        return sorted(done, key=_cand_order)

    def flush(self) -> list:
        done = sorted(self.pending.values(), key=_cand_order)
        self.pending.clear()
        for c in done:
            self._release(c)
        return done


def _cand_order(c):
    return (c.end_frame, c.start_frame, c.keyword.form)


def buffer_filter(candidates, cfg: SpotterConfig) -> list:
    """Batch form of the sliding buffer; candidates below threshold are discarded."""
    buf = SpotBuffer(cfg.buffer_len)
    out = []
    for c in sorted(candidates, key=lambda c: (c.end_frame, c.unit)):
        if c.C >= cfg.accept_threshold:
            out.extend(buf.push(c))
    out.extend(buf.flush())
    return sorted(out, key=_cand_order)


def candidate_to_event(c: SpotCandidate, frame_shift_ms: int, num_states: int = 0) -> SpotEvent:
    shift = frame_shift_ms / 1000.0
    return SpotEvent(c.keyword, c.start_frame * shift, (c.end_frame + 1) * shift, c.C,
                     c.start_frame, c.end_frame, c.R, num_states)


def score_reports(reports, summaries, units, k, n_s=None):
    """Vectorised R and C for end-state reports; zero-duration reports are dropped.

    ``n_s`` (state count per unit) may be passed in to skip recomputing it.
    """
    frames = reports.frame
    ok = frames > reports.start
    idx = np.flatnonzero(ok)
    if reports.unit.size == 0:
        return idx, np.zeros(0), np.zeros(0)
    if n_s is None:
        n_s = np.array([u.num_states for u in units], dtype=np.float64)
    pos = frames[idx] - summaries.frames[0]
    R = summaries.D_best[pos] - reports.score[idx]
    C = 100.0 - k * R / ((frames[idx] - reports.start[idx]) * n_s[reports.unit[idx]])
    return idx, R, C


class Spotter:
    """Turns end-state reports plus frame summaries into SpotEvents for one stream."""

    def __init__(self, units, cfg: SpotterConfig = SpotterConfig(), frame_shift_ms: int = 10):
        self.units = list(units)
        self.cfg = cfg
        self.frame_shift_ms = frame_shift_ms
        self.buffer = SpotBuffer(cfg.buffer_len)
        self.candidates = []
        self.n_s = np.array([u.num_states for u in self.units], dtype=np.float64)

    def candidates_from(self, reports, summaries) -> list:
        idx, R, C = score_reports(reports, summaries, self.units, self.cfg.k, self.n_s)
        keep = C >= self.cfg.accept_threshold
        out = []
        for i, r, c in zip(idx[keep], R[keep], C[keep]):
            u = int(reports.unit[i])
            out.append(SpotCandidate(u, self.units[u].keyword, int(reports.frame[i]),
                                     int(reports.start[i]), float(r), float(c)))
        out.sort(key=lambda c: (c.end_frame, c.unit))
        return out

    def feed(self, reports, summaries, keep_candidates=False) -> list:
        """Process a block of frames (in order); returns events released so far."""
        cands = self.candidates_from(reports, summaries)
        if keep_candidates:
            self.candidates.extend(cands)
        # the buffer only needs to look at frames carrying candidates, plus the
        # block's last frame to release windows that closed without one
        out = []
        for c in cands:
            out.extend(self.buffer.advance(c.end_frame))
            out.extend(self.buffer.push(c))
        if len(summaries):
            out.extend(self.buffer.advance(int(summaries.frames[-1])))
        return [self._event(c) for c in out]

    def finish(self) -> list:
        return [self._event(c) for c in self.buffer.flush()]

    def _event(self, c):
        return candidate_to_event(c, self.frame_shift_ms, self.units[c.unit].num_states)


def spot(decode_result, cfg: SpotterConfig, frame_shift_ms: int = 10, keep_candidates=False):
    """Events for a whole decoded stream, sorted by end frame."""
    sp = Spotter(decode_result.units, cfg, frame_shift_ms)
    events = sp.feed(decode_result.reports, decode_result.summaries, keep_candidates)
    events.extend(sp.finish())
    events.sort(key=lambda e: (e.end_frame, e.start_frame, e.form))
    if keep_candidates:
        return events, sp.candidates
    return events


@dataclass
class StreamResult:
    events: list
    summaries: object
    candidates: list


def spot_stream(m, units, dcfg=None, scfg: SpotterConfig = SpotterConfig(), block: int = 2048,
                decoder=None, keep_candidates=False) -> StreamResult:
    """First pass over a likelihood stream: decode block by block and spot as we go.

    End reports are gated at the acceptance threshold inside the decoder and
    consumed per block, so memory does not grow with the keyword count.
    """
    from .decoder import Decoder, DecoderConfig, FrameSummaries, iter_blocks

    dec = decoder if decoder is not None else Decoder(units, dcfg or DecoderConfig())
    dec._check_row_width(m.num_states)
    sp = Spotter(dec.units, scfg, m.frame_shift_ms)
    events, summ = [], []
    for L in iter_blocks(m, block):
        s, r = dec.run(L, gate=(scfg.k, scfg.accept_threshold))
        summ.append(s)
        events.extend(sp.feed(r, s, keep_candidates))
    events.extend(sp.finish())
    events.sort(key=lambda e: (e.end_frame, e.start_frame, e.form))
    return StreamResult(events, FrameSummaries.concat(summ), sp.candidates)


# ---------------------------------------------------------------------------
# validation oracle for the D_best difference approximation

def exact_filler_span_score(m, fillers, T: int, t: int) -> float:
    """Best score of any string of ``fillers`` exactly covering frames T..t (fresh Viterbi).

    D_best ranges over every unit in the loop, keywords included, so the
    rival set that matches the production margin is the full unit list.
    """
    values = m.values if hasattr(m, "values") else np.asarray(m)
    if not 0 <= T <= t < values.shape[0]:
        raise ValueError(f"span {T}..{t} outside 0..{values.shape[0] - 1}")
    sids = np.concatenate([np.asarray(u.state_ids) for u in fillers])
    lens = np.array([u.num_states for u in fillers])
    ends = np.cumsum(lens) - 1
    firsts = ends - lens + 1
    d = np.full(sids.size, NEG_INF)
    entry = 0.0
    for f in range(T, t + 1):
        prev = np.empty_like(d)
        prev[1:] = d[:-1]
        prev[firsts] = entry
        d = values[f, sids].astype(np.float64) + np.maximum(d, prev)
        entry = d[ends].max()
    return float(entry)


def backtrack_passes(best_start, T: int, t: int) -> bool:
    """Does the chain of D_best holders ending at frame t have a unit boundary at T?

    ``best_start[f]`` is the start frame of the unit instance holding
    D_best(f); following it back hops from one unit boundary to the previous.
    """
    bs = best_start.best_start if hasattr(best_start, "best_start") else best_start
    b = int(bs[t])
    while b > T:
        b = int(bs[b - 1])
        if b < 0:
            return False
    return b == T


def exact_rival_margin(m, fillers, summaries, D_w: float, T: int, t: int,
                       initial_score: float = 0.0) -> float:
    """Rival margin with the rival-string score from a fresh span Viterbi over ``fillers``."""
    D_prev = initial_score if T == 0 else float(summaries.D_best[T - 1])
    S_word = D_w - D_prev
    S_fill = exact_filler_span_score(m, fillers, T, t)
    return S_fill - S_word


# ---------------------------------------------------------------------------
# event files

def format_event(stream_id: str, e: SpotEvent) -> str:
    return (f"{stream_id}\t{e.form}\t{e.lemma}\t{e.start_time:.2f}\t{e.end_time:.2f}\t"
            f"{e.confidence:.2f}")


def write_events(path, events, stream_id: str = "stream", header: Optional[list] = None) -> None:
    lines = [f"# {h}" for h in (header or [])]
    lines += [format_event(stream_id, e) for e in events]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_events_jsonl(path, events, stream_id: str = "stream") -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in events:
            rec = {"stream": stream_id, "form": e.form, "lemma": e.lemma,
                   "start": round(e.start_time, 2), "end": round(e.end_time, 2),
                   "confidence": e.confidence, "start_frame": e.start_frame,
                   "end_frame": e.end_frame, "R": e.R, "num_states": e.num_states,
                   "phones": list(e.keyword.phones)}
            f.write(json.dumps(rec) + "\n")


def read_events(path) -> list:
    """Read a tab-separated event file back (confidence at printed precision)."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        sid, form, lemma, start, end, conf = line.split("\t")
        out.append(SpotEvent(KeywordEntry(form, lemma, ()), float(start), float(end), float(conf)))
    return out
