"""Frame-synchronous Viterbi decoding over keyword and filler units.

All units (keywords and fillers alike) are compiled into one graph whose
nodes are HMM states. Units whose state sequences share a prefix share the
nodes of that prefix: identical inputs give identical scores and start
frames, so sharing is exact and only cuts work. Each frame:

* every state takes the better of its self-loop and its predecessor,
  carrying the start frame along with the score;
* initial states take the better of their self-loop and the previous
  frame's best end-state score (a fresh unit instance starting now);
* ``d_best`` (best state score) and ``D_best`` (best end-state score) are
  recorded, and states more than ``beam`` below ``d_best`` are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import _kernels
from .model import KEYWORD

NEG_INF = -np.inf


@dataclass(frozen=True)
class DecoderConfig:
    beam: float = 100.0
    initial_score: float = 0.0

    def __post_init__(self):
        if not self.beam > 0:
            raise ValueError("beam must be positive")


@dataclass(frozen=True)
class FrameSummary:
    frame: int
    d_best: float
    D_best: float
    # start frame of the unit instance holding D_best
    best_start: int = -1


@dataclass(frozen=True)
class EndReport:
    unit: int
    frame: int
    score: float
    start: int


def _depths(parent):
    depth = np.zeros(parent.size, dtype=np.int64)
    # parents are always created before their children
    for n in range(parent.size):
        if parent[n] >= 0:
            depth[n] = depth[parent[n]] + 1
    return depth


class DecodingGraph:
    """Prefix-shared state graph for a list of units (index in list = report id)."""

    def __init__(self, units):
        self.units = list(units)
        key_to_node = {}
        node_state, node_parent = [], []
        unit_nodes = []
        for u in self.units:
            parent = -1
            nodes = []
            for sid in u.state_ids:
                key = (parent, sid)
                n = key_to_node.get(key)
                if n is None:
                    n = len(node_state)
                    key_to_node[key] = n
                    node_state.append(sid)
                    node_parent.append(parent)
                nodes.append(n)
                parent = n
            unit_nodes.append(np.array(nodes, dtype=np.int64))
        n_nodes = len(node_state)
        node_state = np.array(node_state, dtype=np.int64)
        node_parent = np.array(node_parent, dtype=np.int64)
        # breadth-first numbering keeps siblings adjacent in memory
        order = np.argsort(_depths(node_parent), kind="stable")
        new_id = np.empty(n_nodes, dtype=np.int64)
        new_id[order] = np.arange(n_nodes)
        self.node_state = node_state[order].astype(np.int32)
        self.node_parent = np.where(node_parent[order] >= 0, new_id[node_parent[order]], -1)
        self.unit_nodes = [new_id[nodes] for nodes in unit_nodes]
        unit_nodes = self.unit_nodes
        self.num_nodes = n_nodes

        has_parent = self.node_parent >= 0
        self.roots = np.flatnonzero(~has_parent).astype(np.int32)
        kids = np.flatnonzero(has_parent)
        order = kids[np.argsort(self.node_parent[kids], kind="stable")]
        self.child_idx = order.astype(np.int32)
        counts = np.bincount(self.node_parent[kids], minlength=n_nodes) if n_nodes else np.zeros(0, int)
        self.child_ptr = np.zeros(n_nodes + 1, dtype=np.int32)
        np.cumsum(counts, out=self.child_ptr[1:])

        self.node_end = np.zeros(n_nodes, dtype=np.bool_)
        kw_pairs = []
        for i, (u, nodes) in enumerate(zip(self.units, unit_nodes)):
            self.node_end[nodes[-1]] = True
            if u.kind == KEYWORD:
                kw_pairs.append((nodes[-1], i))
        kw_pairs.sort()
        self.kw_units = np.array([i for _, i in kw_pairs], dtype=np.int32)
        kw_counts = np.bincount(np.array([n for n, _ in kw_pairs], dtype=np.int64),
                                minlength=n_nodes) if kw_pairs else np.zeros(n_nodes, dtype=np.int64)
        self.kw_ptr = np.zeros(n_nodes + 1, dtype=np.int32)
        np.cumsum(kw_counts, out=self.kw_ptr[1:])
        self.max_state = int(self.node_state.max()) if n_nodes else -1
        self.unit_ns = np.array([u.num_states for u in self.units], dtype=np.float64)


class Decoder:
    """Token set for one stream plus the frame loop that advances it."""

    def __init__(self, units, cfg: DecoderConfig = DecoderConfig(), graph: DecodingGraph = None):
        units = list(units) if graph is None else graph.units
        if not units:
            raise ValueError("cannot decode with an empty unit list")
        self.graph = graph if graph is not None else DecodingGraph(units)
        self.cfg = cfg
        n = self.graph.num_nodes
        self.d = np.empty(n)
        # 32-bit indices and frame numbers keep the per-node arrays cache-friendly
        self.T = np.empty(n, dtype=np.int32)
        self.active = np.empty(n, dtype=np.int32)
        self.stamp = np.empty(n, dtype=np.int32)
        self.nd = np.empty(n)
        self.nT = np.empty(n, dtype=np.int32)
        self.touched = np.empty(n, dtype=np.int32)
        self.reset()

    def reset(self):
        self.d.fill(NEG_INF)
        self.T.fill(-1)
        self.stamp.fill(-1)
        self.n_active = 0
        self.frame = 0
        # virtual D_best(-1): every unit may start at frame 0
        self.D_prev = float(self.cfg.initial_score)
        self.last_reports = []

    @property
    def units(self):
        return self.graph.units

    def _check_row_width(self, width):
        if width <= self.graph.max_state:
            raise ValueError(
                f"likelihood row has {width} states but units use state id {self.graph.max_state}")

    def run(self, L, entry=None, prune=None, D_ref=None, gate=None):
        """Decode a block of consecutive frames; returns (summary arrays, report arrays).

        ``entry``/``prune``/``D_ref`` switch to external mode: per-frame
        D_best(t-1) for unit entry, d_best(t) for pruning and D_best(t) for
        report gating, as stored by a first pass. ``gate = (k, threshold)``
        drops end reports whose confidence cannot reach the threshold.
        """
        L = np.ascontiguousarray(L)
        if L.ndim != 2:
            raise ValueError("likelihood block must be 2-D")
        self._check_row_width(L.shape[1])
        nf = L.shape[0]
        g = self.graph
        use_ext = entry is not None
        if use_ext:
            ext_entry = np.ascontiguousarray(entry, dtype=np.float64)
            ext_prune = np.ascontiguousarray(prune, dtype=np.float64)
            ext_D = (np.full(nf, np.nan) if D_ref is None
                     else np.ascontiguousarray(D_ref, dtype=np.float64))
            if ext_entry.shape != (nf,) or ext_prune.shape != (nf,) or ext_D.shape != (nf,):
                raise ValueError("external entry/prune arrays must have one value per frame")
            if gate is not None and D_ref is None:
                raise ValueError("report gating in external mode needs D_ref")
        else:
            ext_entry = ext_prune = ext_D = np.zeros(1)
        gate_k, gate_thr = (0.0, NEG_INF) if gate is None else (float(gate[0]), float(gate[1]))
        dbest = np.empty(nf)
        Dbest = np.empty(nf)
        bstart = np.empty(nf, dtype=np.int64)
        nact = np.empty(nf, dtype=np.int64)
        cap = 64
        res = _kernels.run_frames(
            L, self.frame,
            g.node_state, g.child_ptr, g.child_idx, g.roots, g.node_end, g.kw_ptr, g.kw_units,
            self.d, self.T, self.active, self.n_active, self.stamp,
            self.nd, self.nT, self.touched,
            self.D_prev, float(self.cfg.beam), use_ext, ext_entry, ext_prune, ext_D,
            gate_k, gate_thr, g.unit_ns,
            dbest, Dbest, bstart, nact,
            np.empty(cap, dtype=np.int64), np.empty(cap, dtype=np.int64),
            np.empty(cap), np.empty(cap, dtype=np.int64), 0)
        self.n_active, self.D_prev, ru, rt, rD, rT, n_rep = res
        self.frame += nf
        summaries = FrameSummaries(np.arange(self.frame - nf, self.frame), dbest, Dbest, bstart, nact)
        reports = EndReports(ru[:n_rep].copy(), rt[:n_rep].copy(), rD[:n_rep].copy(), rT[:n_rep].copy())
        return summaries, reports

    def step(self, L_row, entry=None, prune=None) -> FrameSummary:
        L_row = np.asarray(L_row)
        if L_row.ndim != 1:
            raise ValueError("expected one likelihood row")
        ext = None if entry is None else (np.array([entry]), np.array([prune]))
        summ, reps = self.run(L_row[None, :], *(ext or (None, None)))
        self.last_reports = list(reps)
        return summ[0]

    def score(self, unit: int, state: int):
        """Current (d, T) of one state of one unit (unit = index in the unit list)."""
        n = self.graph.unit_nodes[unit][state]
        if self.d[n] == NEG_INF:
            return NEG_INF, -1
        return float(self.d[n]), int(self.T[n])

    def unit_scores(self, unit: int) -> np.ndarray:
        return self.d[self.graph.unit_nodes[unit]].copy()


class FrameSummaries:
    """Columnar per-frame (d_best, D_best) history."""

    def __init__(self, frames, d_best, D_best, best_start, n_active=None):
        self.frames = np.asarray(frames, dtype=np.int64)
        self.d_best = np.asarray(d_best, dtype=np.float64)
        self.D_best = np.asarray(D_best, dtype=np.float64)
        self.best_start = np.asarray(best_start, dtype=np.int64)
        self.n_active = (np.zeros(len(self.frames), dtype=np.int64) if n_active is None
                         else np.asarray(n_active, dtype=np.int64))

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i):
        return FrameSummary(int(self.frames[i]), float(self.d_best[i]), float(self.D_best[i]),
                            int(self.best_start[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, a) for p in parts])
                     for a in ("frames", "d_best", "D_best", "best_start", "n_active")))

    @classmethod
    def empty(cls):
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0), np.zeros(0, np.int64))


class EndReports:
    """Columnar keyword end-state reports (unit, frame, D(u,t), T(u,t))."""

    def __init__(self, unit, frame, score, start):
        self.unit = np.asarray(unit, dtype=np.int64)
        self.frame = np.asarray(frame, dtype=np.int64)
        self.score = np.asarray(score, dtype=np.float64)
        self.start = np.asarray(start, dtype=np.int64)

    def __len__(self):
        return len(self.unit)

    def __getitem__(self, i):
        return EndReport(int(self.unit[i]), int(self.frame[i]), float(self.score[i]), int(self.start[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, a) for p in parts])
                     for a in ("unit", "frame", "score", "start")))

    @classmethod
    def empty(cls):
        z = np.zeros(0, np.int64)
        return cls(z, z, np.zeros(0), z)


@dataclass
class DecodeResult:
    summaries: FrameSummaries
    reports: EndReports
    units: list


def init_tokens(units, cfg: DecoderConfig = DecoderConfig()) -> Decoder:
    return Decoder(units, cfg)


def step_frame(tokens: Decoder, L_row, cfg: Optional[DecoderConfig] = None):
    if cfg is not None and cfg != tokens.cfg:
        tokens.cfg = cfg
    summary = tokens.step(L_row)
    return tokens, summary


def iter_blocks(m, block: int = 2048) -> Iterable[np.ndarray]:
    values = m.values if hasattr(m, "values") else np.asarray(m)
    for lo in range(0, values.shape[0], block):
        yield values[lo:lo + block]


def decode_blocks(blocks: Iterable[np.ndarray], units, cfg: DecoderConfig = DecoderConfig(),
                  decoder: Decoder = None, gate=None) -> DecodeResult:
    """Decode consecutive frame blocks in order; each block is consumed once."""
    dec = decoder if decoder is not None else Decoder(units, cfg)
    summ, reps = [], []
    for block in blocks:
        s, r = dec.run(block, gate=gate)
        summ.append(s)
        reps.append(r)
    return DecodeResult(FrameSummaries.concat(summ), EndReports.concat(reps), dec.units)


def decode_stream(m, units, cfg: DecoderConfig = DecoderConfig(), block: int = 2048,
                  decoder: Decoder = None, gate=None) -> DecodeResult:
    dec = decoder if decoder is not None else Decoder(units, cfg)
    dec._check_row_width(m.num_states)
    return decode_blocks(iter_blocks(m, block), units, cfg, decoder=dec, gate=gate)
