import json

import numpy as np
import pytest

from kwspot.decoder import DecoderConfig, decode_stream
from kwspot.likelihood import LikelihoodMatrix
from kwspot.model import FILLER, KEYWORD, HmmUnit, KeywordEntry
from kwspot.pipeline import build_models, decoder_input
from kwspot.spotter import (SpotBuffer, SpotCandidate, SpotterConfig, backtrack_passes, buffer_filter,
                            calibrate_k, confidence, exact_filler_span_score, exact_rival_margin,
                            read_events, rival_margin, spot, spot_stream, write_events,
                            write_events_jsonl)

from oracles import filler_string_score

ALPHA = KeywordEntry("alpha", "alpha", ("a",))
BETA = KeywordEntry("beta", "beta", ("b",))


def cand(end, C, kw=ALPHA, start=None, unit=0):
    return SpotCandidate(unit, kw, end, end - 10 if start is None else start, 0.0, C)


def test_rival_margin_examples():
    assert rival_margin(-10.0, -10.0) == 0.0
    assert rival_margin(-10.0, -14.5) == 4.5


def test_confidence_examples():
    assert confidence(0.0, 40, 10, 12, 1000.0) == 100.0
    assert confidence(450.0, 30, 0, 15, 1.0) == 99.0
    with pytest.raises(ValueError, match="zero-duration"):
        confidence(1.0, 5, 5, 3, 1.0)


def test_confidence_strictly_decreasing_in_R():
    R = np.linspace(0, 100, 50)
    c = confidence(R, np.full(50, 20), np.zeros(50), np.full(50, 9), 30.0)
    assert np.all(np.diff(c) < 0)


def test_calibrate_k_solves_for_target():
    # EER sits at normalised margin 0.5, so 100 - k * 0.5 = 75
    rows = [(0.5 * 30 * 9, 30, 9, True), (0.7 * 30 * 9, 30, 9, False)]
    assert calibrate_k(rows) == pytest.approx(50.0)


def test_calibrate_k_degenerate_sets():
    with pytest.raises(ValueError, match="degenerate"):
        calibrate_k([(10.0, 20, 9, True)] * 5)
    with pytest.raises(ValueError, match="empty"):
        calibrate_k([])


def test_single_candidate_single_event():
    out = buffer_filter([cand(40, 90.0)], SpotterConfig())
    assert out == [cand(40, 90.0)]


def test_buffer_keeps_the_peak_of_a_run():
    cands = [cand(t, 80.0 + 5 - abs(t - 105)) for t in range(100, 111)]
    out = buffer_filter(cands, SpotterConfig())
    assert [c.end_frame for c in out] == [105]


def test_buffer_groups_per_keyword():
    out = buffer_filter([cand(50, 90.0), cand(52, 85.0, BETA, unit=1)], SpotterConfig())
    assert {c.keyword.form for c in out} == {"alpha", "beta"}


def test_buffer_tie_keeps_earliest():
    out = buffer_filter([cand(50, 90.0), cand(55, 90.0)], SpotterConfig())
    assert [c.end_frame for c in out] == [50]


def test_buffer_drops_below_threshold():
    assert buffer_filter([cand(50, 74.99)], SpotterConfig()) == []


def test_buffer_releases_after_window():
    cfg = SpotterConfig(buffer_len=10)
    out = buffer_filter([cand(50, 90.0, start=20), cand(60, 95.0, start=40)], cfg)
    assert [c.end_frame for c in out] == [50, 60]


def test_lingering_instance_is_not_emitted_twice():
    buf = SpotBuffer(10)
    assert buf.push(cand(50, 90.0, start=20)) == []
    assert buf.advance(60) == [cand(50, 90.0, start=20)]
    # the same instance (same start) still above threshold later on
    assert buf.push(cand(70, 80.0, start=20)) == []
    assert buf.flush() == []


def test_buffer_bounds():
    with pytest.raises(ValueError, match="10..20"):
        SpotterConfig(buffer_len=30)
    assert SpotterConfig(buffer_len=30, strict_buffer_bounds=False).buffer_len == 30
    with pytest.raises(ValueError):
        SpotterConfig(accept_threshold=120.0)
    with pytest.raises(ValueError):
        SpotterConfig(k=0.0)


# -- exact filler-string oracle ---------------------------------------------------

def test_span_score_single_filler_unique_path():
    L = np.array([[-1.0, -5.0, -5.0], [-5.0, -2.0, -5.0], [-5.0, -5.0, -3.0]])
    assert exact_filler_span_score(L, [HmmUnit(0, FILLER, (0, 1, 2))], 0, 2) == -6.0


def test_span_shorter_than_any_filler():
    L = np.zeros((5, 3))
    assert exact_filler_span_score(L, [HmmUnit(0, FILLER, (0, 1, 2))], 1, 2) == -np.inf


def test_span_score_matches_enumeration():
    rng = np.random.default_rng(5)
    L = rng.normal(size=(14, 7))
    shapes = [(0, 1, 2), (3, 4), (5, 6, 0), (2,)]
    fillers = [HmmUnit(i, FILLER, s) for i, s in enumerate(shapes)]
    for T, t in [(2, 11), (0, 9), (4, 13)]:
        want = filler_string_score(L, shapes, T, t)
        assert exact_filler_span_score(L, fillers, T, t) == pytest.approx(want, abs=1e-9)


def test_backtrack_single_unit_stream_always_passes():
    rng = np.random.default_rng(0)
    m = LikelihoodMatrix(rng.normal(size=(40, 3)))
    u = HmmUnit(0, KEYWORD, (0, 1, 2), keyword=ALPHA)
    res = decode_stream(m, [u], DecoderConfig(beam=np.inf))
    for r in res.reports:
        assert backtrack_passes(res.summaries, r.start, r.frame)


def _adversarial():
    """A long filler straddles keyword starts, so the D_best chain skips them."""
    fillers = [HmmUnit(0, FILLER, (3, 4, 5, 6, 7, 8)), HmmUnit(1, FILLER, (9,))]
    kw = HmmUnit(2, KEYWORD, (0, 1, 2), keyword=ALPHA)
    rng = np.random.default_rng(1)
    m = LikelihoodMatrix(np.round(rng.normal(size=(12, 10)) * 4) / 4)
    res = decode_stream(m, fillers + [kw], DecoderConfig(beam=np.inf))
    return m, fillers + [kw], res


def test_adversarial_stream_fails_backtrack_and_breaks_the_approximation():
    m, units, res = _adversarial()
    S = res.summaries
    broken = 0
    for r in res.reports:
        if r.frame <= r.start:
            continue
        R = S.D_best[r.frame] - r.score
        exact = exact_rival_margin(m, units, S, r.score, r.start, r.frame)
        if backtrack_passes(S, r.start, r.frame):
            assert exact == R
        elif exact != R:
            broken += 1
    assert broken > 0


def test_eq9_is_exact_whenever_backtrack_passes(shipped):
    c = shipped("clean")
    models = build_models(c.inventory, c.keywords, "quasi")
    m = decoder_input(c.matrix, models)
    res = spot_stream(m, models.units, keep_candidates=True)
    S = res.summaries
    checked = 0
    for cd in res.candidates[:300]:
        if backtrack_passes(S, cd.start_frame, cd.end_frame):
            D_w = S.D_best[cd.end_frame] - cd.R
            assert exact_rival_margin(m, models.units, S, D_w, cd.start_frame, cd.end_frame) == cd.R
            checked += 1
    assert checked > 100


def test_streaming_spotter_equals_batch(shipped):
    """Per-block gated spotting gives the same events as spotting a whole ungated decode."""
    c = shipped("dev")
    models = build_models(c.inventory, c.keywords, "quasi")
    m = decoder_input(c.matrix, models)
    cfg = SpotterConfig()
    batch = spot(decode_stream(m, models.units), cfg)
    streamed = spot_stream(m, models.units, scfg=cfg, block=777).events
    assert streamed == batch


def test_event_files_round_trip(tmp_path, shipped):
    c = shipped("clean")
    models = build_models(c.inventory, c.keywords, "quasi")
    events = spot_stream(decoder_input(c.matrix, models), models.units).events
    write_events(tmp_path / "e.tsv", events, "s1", header=["note"])
    back = read_events(tmp_path / "e.tsv")
    assert [(e.form, e.lemma) for e in back] == [(e.form, e.lemma) for e in events]
    assert all(abs(a.confidence - b.confidence) <= 0.005 for a, b in zip(back, events))
    write_events_jsonl(tmp_path / "e.jsonl", events, "s1")
    recs = [json.loads(x) for x in (tmp_path / "e.jsonl").read_text().splitlines()]
    assert [r["end_frame"] for r in recs] == [e.end_frame for e in events]
