"""Glue shared by the CLI, the bench and the scripts: model setup, timed first pass, calibration."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .decoder import Decoder, DecoderConfig, DecodingGraph
from .evaluation import calibration_set, det_curve
from .likelihood import LikelihoodMatrix, pool_quasi_mono
from .model import build_filler_set, build_keyword_models, canonical_mode, keyword_context_mode
from .spotter import SpotterConfig, calibrate_k, spot_stream

SWEEP = float("-inf")  # accept threshold that lets every candidate through


@dataclass
class Models:
    """Fillers and keyword units for one filler mode; ``units`` is fillers then keywords."""
    mode: str
    fillers: list
    keywords: list
    state_map: object = None

    @property
    def units(self):
        return self.fillers + self.keywords

    def graph(self) -> DecodingGraph:
        return DecodingGraph(self.units)

    def replay_keywords(self):
        # replay decodes keywords alone, so their report ids restart at 0
        return [type(u)(i, u.kind, u.state_ids, u.keyword, u.name) for i, u in enumerate(self.keywords)]


def build_models(inventory, entries, mode: str) -> Models:
    mode = canonical_mode(mode)
    fillers, state_map = build_filler_set(inventory, mode)
    kws = build_keyword_models(entries, inventory, keyword_context_mode(mode), first_id=len(fillers))
    return Models(mode, fillers, kws, state_map)


def decoder_input(m: LikelihoodMatrix, models: Models) -> LikelihoodMatrix:
    """The matrix the decoder reads: pooled in quasi-monophone mode, as is otherwise.

    A matrix that already has the pooled width passes through unchanged.
    """
    smap = models.state_map
    if smap is None or m.num_states == smap.num_target_states:
        return m
    return pool_quasi_mono(m, smap)


@dataclass
class TimedRun:
    result: object
    seconds: float
    audio_seconds: float
    matrix: LikelihoodMatrix = None  # what the decoder read (pooled in quasi mode)

    @property
    def rt(self) -> float:
        return self.seconds / self.audio_seconds if self.audio_seconds > 0 else float("nan")


def first_pass(m: LikelihoodMatrix, models: Models, dcfg: DecoderConfig = DecoderConfig(),
               scfg: SpotterConfig = SpotterConfig(), graph: DecodingGraph = None,
               keep_candidates=False) -> TimedRun:
    """Pool (quasi mode), decode and spot ``m``; graph building is not timed."""
    graph = graph if graph is not None else models.graph()
    dec = Decoder(models.units, dcfg, graph=graph)
    t0 = time.perf_counter()
    m = decoder_input(m, models)
    res = spot_stream(m, models.units, dcfg, scfg, decoder=dec, keep_candidates=keep_candidates)
    return TimedRun(res, time.perf_counter() - t0, m.duration_seconds, m)


def sweep_events(m, models: Models, dcfg: DecoderConfig = DecoderConfig(), k: float = 1.0,
                 buffer_len: int = 15):
    """Every buffered event regardless of confidence; the basis of DET curves and calibration."""
    scfg = SpotterConfig(k=k, accept_threshold=SWEEP, buffer_len=buffer_len)
    return first_pass(m, models, dcfg, scfg).result.events


def calibrate_on(m, models: Models, refs, dcfg: DecoderConfig = DecoderConfig(), target: float = 75.0,
                 buffer_len: int = 15):
    """k that puts the EER operating point of this (dev) stream at confidence ``target``.

    Buffer decisions only depend on the order of confidences, which k does
    not change, so one sweep at k=1 serves every k.
    """
    events = sweep_events(m, models, dcfg, 1.0, buffer_len)
    rows, n_missed = calibration_set(events, refs, {e.lemma for e in models_entries(models)})
    return calibrate_k(rows, target=target, n_missed=n_missed)


def models_entries(models: Models):
    return [u.keyword for u in models.keywords]


def det_for(m, models: Models, refs, k: float, dcfg: DecoderConfig = DecoderConfig(), buffer_len: int = 15):
    events = sweep_events(m, models, dcfg, k, buffer_len)
    lemmas = {e.lemma for e in models_entries(models)}
    return det_curve(events, refs, m.duration_seconds / 3600.0, lemmas), events


def best_of(fn, repeats: int = 3) -> float:
    """Minimum wall-clock of ``fn()`` over ``repeats`` runs."""
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return float(best)
