"""Single-pass keyword spotting over per-frame log-likelihood streams.

A word-and-filler Viterbi decoder scores keyword models against a loop of
filler models; confidences come from the forward margin between the best
overall path and the keyword path. Per-frame summaries can be cached so the
same stream can be searched again with a different keyword list without
re-running the fillers.
"""

__version__ = "0.1.0"

from .cache import CacheError, RunCache, read_cache, replay_decode, write_cache
from .decoder import Decoder, DecoderConfig, DecodingGraph, decode_stream
from .evaluation import ReferenceWord, det_curve, match_spots, rt_factor
from .likelihood import LikelihoodMatrix, StateMap, load_matrix, pool_quasi_mono, write_matrix
from .model import (HmmUnit, KeywordEntry, PhonemeInventory, build_filler_set, build_keyword_model,
                    load_inventory, load_keyword_list)
from .spotter import SpotEvent, SpotterConfig, calibrate_k, confidence, spot, spot_stream

__all__ = [
    "CacheError", "Decoder", "DecoderConfig", "DecodingGraph", "HmmUnit", "KeywordEntry",
    "LikelihoodMatrix", "PhonemeInventory", "ReferenceWord", "RunCache", "SpotEvent",
    "SpotterConfig", "StateMap", "build_filler_set", "build_keyword_model", "calibrate_k",
    "confidence", "decode_stream", "det_curve", "load_inventory", "load_keyword_list",
    "load_matrix", "match_spots", "pool_quasi_mono", "read_cache", "replay_decode",
    "rt_factor", "spot", "spot_stream", "write_cache", "write_matrix",
]
