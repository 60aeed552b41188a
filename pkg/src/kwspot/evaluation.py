"""Scoring spots against time-aligned references: matching, DET curves, EER, RT factor."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ReferenceWord:
    word: str
    lemma: str
    start: float
    end: float

    def __post_init__(self):
        if self.start < 0 or not self.end > self.start:
            raise ValueError(f"bad reference span {self.start}..{self.end} for {self.word!r}")

    @property
    def midpoint(self):
        return 0.5 * (self.start + self.end)


def load_references(path) -> list:
    refs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected word,lemma,start,end")
        try:
            refs.append(ReferenceWord(parts[0], parts[1], float(parts[2]), float(parts[3])))
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: {e}") from None
    return refs


def write_references(refs, path) -> None:
    lines = [f"{r.word},{r.lemma},{r.start:.2f},{r.end:.2f}" for r in refs]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass
class MatchResult:
    hits: list
    misses: list
    false_alarms: list


class _Matcher:
    """Incremental maximum-cardinality event/reference matching.

    An event may take a reference of the same lemma whose midpoint lies
    within ``tolerance`` of its own. Events are added one at a time and each
    addition tries one augmenting path (Kuhn), so after every addition the
    matching is maximum for the events added so far.
    """

    def __init__(self, refs, tolerance):
        self.tol = tolerance
        self.by_lemma = {}
        for j, r in enumerate(refs):
            self.by_lemma.setdefault(r.lemma, []).append((r.midpoint, j))
        self.mids = {}
        for lemma, lst in self.by_lemma.items():
            lst.sort()
            self.mids[lemma] = np.array([m for m, _ in lst])
        self.ref_match = {}
        self.event_match = {}
        self.adj = {}
        self.n_matched = 0

    def _neighbours(self, lemma, mid):
        lst = self.by_lemma.get(lemma)
        if not lst:
            return []
        mids = self.mids[lemma]
        lo = np.searchsorted(mids, mid - self.tol - 1e-9, "left")
        hi = np.searchsorted(mids, mid + self.tol + 1e-9, "right")
        cand = [(abs(lst[i][0] - mid), lst[i][0], lst[i][1]) for i in range(lo, hi)
                if abs(lst[i][0] - mid) <= self.tol + 1e-9]
        cand.sort()
        return [j for _, _, j in cand]

    def add(self, i, lemma, mid) -> bool:
        self.adj[i] = self._neighbours(lemma, mid)
        if self._augment(i, set()):
            self.n_matched += 1
            return True
        return False

    def _augment(self, i, seen):
        # iterative-safe depth: chains are short because windows are local
        for j in self.adj[i]:
            if j in seen:
                continue
            seen.add(j)
            other = self.ref_match.get(j)
            if other is None or self._augment(other, seen):
                self.ref_match[j] = i
                self.event_match[i] = j
                return True
        return False


def _event_order(events):
    return sorted(range(len(events)),
                  key=lambda i: (-events[i].confidence, events[i].midpoint, events[i].form))


def match_spots(events, refs, keyword_lemmas=None, tolerance: float = 0.5) -> MatchResult:
    """One-to-one lemma-level matching of events to references within ``tolerance`` seconds.

    Without ``keyword_lemmas`` every lemma seen in either list counts.
    """
    if keyword_lemmas is None:
        keyword_lemmas = {e.lemma for e in events} | {r.lemma for r in refs}
    keyword_lemmas = set(keyword_lemmas)
    refs = sorted((r for r in refs if r.lemma in keyword_lemmas), key=lambda r: (r.midpoint, r.lemma, r.word))
    events = sorted(events, key=lambda e: (e.midpoint, e.form, -e.confidence))
    m = _Matcher(refs, tolerance)
    for i in _event_order(events):
        m.add(i, events[i].lemma, events[i].midpoint)
    hits = sorted(((events[i], refs[j]) for i, j in m.event_match.items()), key=lambda p: p[1].midpoint)
    fas = [e for i, e in enumerate(events) if i not in m.event_match]
    misses = [r for j, r in enumerate(refs) if j not in m.ref_match]
    return MatchResult(hits, misses, fas)


def calibration_set(events, refs, keyword_lemmas=None, tolerance: float = 0.5):
    """``(R, duration, N_s, is_hit)`` tuples plus the miss count, for ``calibrate_k``.

    ``events`` should come from a permissive run (threshold at or below the
    lowest confidence of interest) so that both hits and false alarms show up.
    """
    mr = match_spots(events, refs, keyword_lemmas, tolerance)
    rows = [(e.R, e.end_frame - e.start_frame, e.num_states, True) for e, _ in mr.hits]
    rows += [(e.R, e.end_frame - e.start_frame, e.num_states, False) for e in mr.false_alarms]
    return rows, len(mr.misses)


@dataclass(frozen=True)
class DetPoint:
    threshold: float
    md_rate: float
    fa_per_kw_hour: float
    fa_fraction: float
    hits: int = 0
    false_alarms: int = 0


@dataclass
class DetResult:
    points: list
    eer: float
    eer_threshold: float
    num_targets: int
    num_events: int

    @property
    def md(self):
        return np.array([p.md_rate for p in self.points])

    @property
    def fa(self):
        return np.array([p.fa_fraction for p in self.points])

    @property
    def thresholds(self):
        return np.array([p.threshold for p in self.points])


def eer_crossing(thresholds, md, fa):
    """EER and its threshold from points sorted by ascending threshold.

    ``md`` must be nondecreasing and ``fa`` nonincreasing. The crossing of
    the piecewise-linear curves md(threshold) and fa(threshold) is returned;
    a run of exactly equal points yields its middle threshold.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    md = np.asarray(md, dtype=np.float64)
    fa = np.asarray(fa, dtype=np.float64)
    diff = md - fa
    i = int(np.argmax(diff >= 0)) if (diff >= 0).any() else len(diff) - 1
    if diff[i] == 0:
        j = i
        while j + 1 < len(diff) and diff[j + 1] == 0:
            j += 1
        return float(md[i]), float(0.5 * (thresholds[i] + thresholds[j]))
    if i == 0 or diff[i] < 0:
        return float(0.5 * (md[i] + fa[i])), float(thresholds[i])
    a = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = md[i - 1] + a * (md[i] - md[i - 1])
    thr = thresholds[i - 1] + a * (thresholds[i] - thresholds[i - 1])
    return float(eer), float(thr)


def eer_from_scores(target_scores, nontarget_scores, n_missed: int = 0):
    """EER for labelled scores (higher = more keyword-like); returns (eer, threshold)."""
    tar = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    n_tar = tar.size + n_missed
    if n_tar == 0 or non.size == 0:
        raise ValueError("need both target and non-target scores")
    thr = np.unique(np.concatenate([tar, non]))
    thr = np.append(thr, thr[-1] + 1.0)
    md = (n_missed + np.searchsorted(tar, thr, "left")) / n_tar
    fa = (non.size - np.searchsorted(non, thr, "left")) / non.size
    return eer_crossing(thr, md, fa)


def det_curve(events, refs, audio_hours: float, keyword_lemmas=None, num_keywords=None,
              tolerance: float = 0.5) -> DetResult:
    """Sweep the acceptance threshold over every distinct confidence.

    MD rate is misses over keyword occurrences in ``refs``. The EER pairs it
    with the FA fraction (false alarms at the threshold over false alarms
    with every event accepted); FA per keyword per hour is reported as well.
    """
    if keyword_lemmas is None:
        keyword_lemmas = {e.lemma for e in events} | {r.lemma for r in refs}
    keyword_lemmas = set(keyword_lemmas)
    refs = sorted((r for r in refs if r.lemma in keyword_lemmas), key=lambda r: (r.midpoint, r.lemma, r.word))
    n_tar = len(refs)
    if n_tar == 0:
        raise ValueError("no keyword occurrences in the references")
    if num_keywords is None:
        num_keywords = max(1, len(keyword_lemmas))
    events = sorted(events, key=lambda e: (e.midpoint, e.form, -e.confidence))
    order = _event_order(events)
    conf = np.array([events[i].confidence for i in order], dtype=np.float64)

    m = _Matcher(refs, tolerance)
    hits_after = np.empty(len(order), dtype=np.int64)
    for k, i in enumerate(order):
        m.add(i, events[i].lemma, events[i].midpoint)
        hits_after[k] = m.n_matched

    # thresholds descending over distinct confidences; a point counts every event >= threshold
    pts_thr, pts_n, pts_hits = [], [], []
    k = 0
    while k < len(order):
        j = k
        while j + 1 < len(order) and conf[j + 1] == conf[k]:
            j += 1
        pts_thr.append(conf[k])
        pts_n.append(j + 1)
        pts_hits.append(hits_after[j])
        k = j + 1
    pts_thr = np.array(pts_thr[::-1])
    pts_n = np.array(pts_n[::-1], dtype=np.int64)
    pts_hits = np.array(pts_hits[::-1], dtype=np.int64)
    top = (pts_thr[-1] + 1.0) if pts_thr.size else 100.0
    pts_thr = np.append(pts_thr, top)
    pts_n = np.append(pts_n, 0)
    pts_hits = np.append(pts_hits, 0)

    fa_count = pts_n - pts_hits
    fa_total = fa_count[0] if fa_count.size else 0
    md = 1.0 - pts_hits / n_tar
    fa_frac = fa_count / fa_total if fa_total > 0 else np.zeros_like(md)
    fa_rate = fa_count / (num_keywords * audio_hours) if audio_hours > 0 else np.full_like(md, np.nan)
    eer, eer_thr = eer_crossing(pts_thr, md, fa_frac)
    points = [DetPoint(float(a), float(b), float(c), float(d), int(h), int(f))
              for a, b, c, d, h, f in zip(pts_thr, md, fa_rate, fa_frac, pts_hits, fa_count)]
    return DetResult(points, eer, eer_thr, n_tar, len(events))


def write_det_csv(path, det: DetResult, header_note: str = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        if header_note:
            f.write(f"# {header_note}\n")
        f.write(f"# eer={det.eer:.6f} eer_threshold={det.eer_threshold:.4f} "
                f"(md_rate vs fa_fraction crossing)\n")
        w = csv.writer(f)
        w.writerow(["threshold", "md_rate", "fa_per_kw_hour", "fa_fraction"])
        for p in det.points:
            w.writerow([f"{p.threshold:.6f}", f"{p.md_rate:.6f}", f"{p.fa_per_kw_hour:.6f}",
                        f"{p.fa_fraction:.6f}"])


def rt_factor(processing_seconds: float, audio_seconds: float) -> float:
    if not audio_seconds > 0:
        raise ValueError("audio duration must be positive")
    return processing_seconds / audio_seconds
