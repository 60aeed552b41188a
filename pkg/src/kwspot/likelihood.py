"""Per-frame state log-likelihoods: storage, binary I/O and quasi-monophone pooling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import pool_max

MAGIC = b"KWSL"
VERSION = 1
# magic, version u16, frame_shift_ms u16, num_frames u32, num_states u32
_HEADER = struct.Struct("<4sHHII")
DTYPE = np.dtype("<f4")


class MatrixFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LikelihoodMatrix:
    """Frames x states table of log-likelihoods, frame-major.

    Values are treated as already-scaled log scores. Only differences of
    accumulated scores reach the output, so log-posteriors and scaled
    log-likelihoods are interchangeable here.
    """

    values: np.ndarray
    frame_shift_ms: int = 10

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"expected a 2-D array, got shape {v.shape}")
        if v.shape[1] < 1:
            raise ValueError("num_states must be >= 1")
        if self.frame_shift_ms <= 0:
            raise ValueError("frame_shift_ms must be positive")
        bad = ~np.isfinite(v)
        if bad.any():
            t, s = np.argwhere(bad)[0]
            raise ValueError(f"non-finite value {v[t, s]} at frame {t}, state {s}")
        v = np.ascontiguousarray(v, dtype=np.float32)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_states(self) -> int:
        return self.values.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.num_frames * self.frame_shift_ms / 1000.0

    def __eq__(self, other):
        if not isinstance(other, LikelihoodMatrix):
            return NotImplemented
        return (self.frame_shift_ms == other.frame_shift_ms
                and self.values.shape == other.values.shape
                and np.array_equal(self.values, other.values))

    __hash__ = None


@dataclass(frozen=True)
class StateMap:
    """Total, surjective mapping of source (triphone) states onto pooled states."""

    target_of: np.ndarray
    num_target_states: int

    def __post_init__(self):
        target = np.ascontiguousarray(self.target_of, dtype=np.int64)
        if target.ndim != 1 or target.size == 0:
            raise ValueError("target_of must be a non-empty 1-D array")
        n_tgt = int(self.num_target_states)
        if target.min() < 0 or target.max() >= n_tgt:
            raise ValueError("target index out of range")
        covered = np.bincount(target, minlength=n_tgt)
        if (covered == 0).any():
            missing = np.flatnonzero(covered == 0)[:5].tolist()
            raise ValueError(f"map is not surjective; unmapped targets {missing}")
        if n_tgt > target.size:
            raise ValueError("more target states than source states")
        target.setflags(write=False)
        object.__setattr__(self, "target_of", target)
        object.__setattr__(self, "num_target_states", n_tgt)

    @property
    def num_source_states(self) -> int:
        return self.target_of.size

    @classmethod
    def identity(cls, n: int) -> StateMap:
        return cls(np.arange(n), n)


def write_matrix(path, m: LikelihoodMatrix) -> None:
    header = _HEADER.pack(MAGIC, VERSION, m.frame_shift_ms, m.num_frames, m.num_states)
    with open(path, "wb") as f:
        f.write(header)
        f.write(m.values.astype(DTYPE, copy=False).tobytes())


def read_header(f, path="<stream>"):
    raw = f.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise MatrixFormatError(f"{path}: truncated header ({len(raw)} of {_HEADER.size} bytes)")
    magic, version, shift, frames, states = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise MatrixFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise MatrixFormatError(f"{path}: unsupported format version {version}")
    if states < 1:
        raise MatrixFormatError(f"{path}: header declares {states} states")
    if shift < 1:
        raise MatrixFormatError(f"{path}: header declares frame shift {shift} ms")
    return shift, frames, states


def load_matrix(path) -> LikelihoodMatrix:
    path = Path(path)
    with open(path, "rb") as f:
        shift, frames, states = read_header(f, path)
        payload = f.read()
    expected = frames * states * DTYPE.itemsize
    if len(payload) != expected:
        got_values = len(payload) // DTYPE.itemsize
        raise MatrixFormatError(
            f"{path}: payload mismatch, header declares {frames}x{states} = "
            f"{frames * states} values but file holds {got_values} "
            f"({len(payload)} bytes; ends inside frame {got_values // states})")
    values = np.frombuffer(payload, dtype=DTYPE).reshape(frames, states)
    bad = ~np.isfinite(values)
    if bad.any():
        t, s = np.argwhere(bad)[0]
        raise MatrixFormatError(f"{path}: non-finite value {values[t, s]} at frame {t}, state {s}")
    return LikelihoodMatrix(values, frame_shift_ms=shift)


def pool_quasi_mono(m: LikelihoodMatrix, state_map: StateMap) -> LikelihoodMatrix:
    """Give every pooled state the best likelihood among its mapped source states."""
    if m.num_states != state_map.num_source_states:
        raise ValueError(
            f"matrix has {m.num_states} states, map expects {state_map.num_source_states}")
    pooled = pool_max(np.ascontiguousarray(m.values), state_map.target_of, state_map.num_target_states)
    return LikelihoodMatrix(pooled, frame_shift_ms=m.frame_shift_ms)
