"""First-pass cache of likelihoods plus per-frame (d_best, D_best), and keyword-only replay.

The two summary values are stored relative to the most recent finite
D_best (the initial score before frame 0). Accumulated scores grow without
bound over a long stream, while these per-frame offsets stay small, so 32-bit
storage keeps them exact for quantised inputs and near-exact otherwise.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import Decoder, DecoderConfig, FrameSummaries
from .likelihood import DTYPE, LikelihoodMatrix
from .spotter import Spotter, SpotterConfig

MAGIC = b"KWSC"
VERSION = 1
# magic, version u16, fingerprint 16 bytes, frame_shift_ms u16, num_frames u32, num_states u32,
# stream id length u16; the UTF-8 stream id follows, then the frame records
_HEADER = struct.Struct("<4sH16sHIIH")
HEADER_SIZE = _HEADER.size


class CacheError(ValueError):
    pass


@dataclass
class RunCache:
    matrix: LikelihoodMatrix
    summaries: FrameSummaries
    fingerprint: bytes
    initial_score: float = 0.0
    stream_id: str = ""

    @property
    def values_per_frame(self) -> int:
        return self.matrix.num_states + 2


def _relative(summaries, initial):
    ref = initial
    d_rel = np.empty(len(summaries))
    D_rel = np.empty(len(summaries))
    for i, (db, Db) in enumerate(zip(summaries.d_best, summaries.D_best)):
        d_rel[i] = db - ref
        D_rel[i] = Db - ref
        if np.isfinite(Db):
            ref = Db
    return d_rel, D_rel


def _absolute(d_rel, D_rel, initial):
    ref = initial
    d_abs = np.empty(d_rel.size)
    D_abs = np.empty(D_rel.size)
    for i in range(d_rel.size):
        d_abs[i] = ref + float(d_rel[i])
        D_abs[i] = ref + float(D_rel[i])
        if np.isfinite(D_abs[i]):
            ref = D_abs[i]
    return d_abs, D_abs


def write_cache(path, m: LikelihoodMatrix, summaries: FrameSummaries, fingerprint: bytes = b"",
                initial_score: float = 0.0, stream_id: str = "") -> None:
    name = stream_id.encode("utf-8")
    if len(name) > 0xFFFF:
        raise CacheError("stream id too long")
    if len(summaries) != m.num_frames:
        raise CacheError(f"{len(summaries)} frame summaries for {m.num_frames} frames")
    fp = bytes(fingerprint).ljust(16, b"\0")[:16]
    d_rel, D_rel = _relative(summaries, initial_score)
    rec = np.empty((m.num_frames, m.num_states + 2), dtype=DTYPE)
    rec[:, :m.num_states] = m.values
    rec[:, -2] = d_rel
    rec[:, -1] = D_rel
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, fp, m.frame_shift_ms, m.num_frames, m.num_states, len(name)))
        f.write(name)
        f.write(rec.tobytes())


def read_cache(path, expect_fingerprint: bytes = None, initial_score: float = 0.0) -> RunCache:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE:
        raise CacheError(f"{path}: truncated header")
    magic, version, fp, shift, frames, states, name_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CacheError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    if expect_fingerprint is not None and fp != bytes(expect_fingerprint).ljust(16, b"\0")[:16]:
        raise CacheError(f"{path}: model fingerprint {fp.hex()} does not match the current model "
                         f"{bytes(expect_fingerprint).hex()}; rebuild the cache with this inventory and mode")
    start = HEADER_SIZE + name_len
    if len(raw) < start:
        raise CacheError(f"{path}: truncated header")
    try:
        stream_id = raw[HEADER_SIZE:start].decode("utf-8")
    except UnicodeDecodeError:
        raise CacheError(f"{path}: stream id is not valid UTF-8") from None
    per = (states + 2) * DTYPE.itemsize
    body = len(raw) - start
    if body != frames * per:
        complete = body // per
        raise CacheError(f"{path}: truncated cache, header declares {frames} frames but frame "
                         f"{complete} is incomplete ({body} payload bytes, {per} per frame)")
    rec = np.frombuffer(raw, dtype=DTYPE, offset=start).reshape(frames, states + 2)
    m = LikelihoodMatrix(rec[:, :states], frame_shift_ms=shift)
    d_abs, D_abs = _absolute(rec[:, -2], rec[:, -1], initial_score)
    summaries = FrameSummaries(np.arange(frames), d_abs, D_abs, np.full(frames, -1))
    return RunCache(m, summaries, fp, initial_score, stream_id)


@dataclass
class ReplayResult:
    events: list
    summaries: FrameSummaries
    n_active: np.ndarray


def replay_decode(cache: RunCache, keywords, dcfg: DecoderConfig = DecoderConfig(),
                  scfg: SpotterConfig = SpotterConfig(), block: int = 2048) -> ReplayResult:
    """Keyword-only decoding driven by the stored per-frame summaries."""
    keywords = list(keywords)
    S = cache.summaries
    if not keywords:
        return ReplayResult([], S, np.zeros(len(S), dtype=np.int64))
    dec = Decoder(keywords, dcfg)
    if dec.graph.max_state >= cache.matrix.num_states:
        raise CacheError(f"keywords use state id {dec.graph.max_state} but the cache holds "
                         f"{cache.matrix.num_states} states")
    entry = np.concatenate([[cache.initial_score], S.D_best[:-1]]) if len(S) else np.zeros(0)
    sp = Spotter(keywords, scfg, cache.matrix.frame_shift_ms)
    events = []
    n_active = []
    values = cache.matrix.values
    for lo in range(0, len(S), block):
        hi = min(lo + block, len(S))
        own, reps = dec.run(values[lo:hi], entry=entry[lo:hi], prune=S.d_best[lo:hi],
                            D_ref=S.D_best[lo:hi], gate=(scfg.k, scfg.accept_threshold))
        n_active.append(own.n_active)
        stored = FrameSummaries(S.frames[lo:hi], S.d_best[lo:hi], S.D_best[lo:hi], S.best_start[lo:hi])
        events.extend(sp.feed(reps, stored))
    events.extend(sp.finish())
    events.sort(key=lambda e: (e.end_frame, e.start_frame, e.form))
    return ReplayResult(events, S, np.concatenate(n_active) if n_active else np.zeros(0, np.int64))
