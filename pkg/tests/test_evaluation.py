import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwspot.evaluation import (ReferenceWord, det_curve, eer_crossing, eer_from_scores, load_references,
                               match_spots, rt_factor, write_det_csv, write_references)
from kwspot.model import KeywordEntry
from kwspot.spotter import SpotEvent

from oracles import crossing, det_by_sweep, max_matching


def ev(lemma, mid, conf=80.0, half=0.2):
    return SpotEvent(KeywordEntry(lemma, lemma, ()), mid - half, mid + half, conf)


def ref(lemma, mid, half=0.2):
    return ReferenceWord(lemma, lemma, mid - half, mid + half)


def test_hit_within_half_a_second():
    r = match_spots([ev("david", 12.60)], [ref("david", 12.30)])
    assert len(r.hits) == 1 and not r.misses and not r.false_alarms


def test_too_far_is_a_false_alarm_and_a_miss():
    r = match_spots([ev("david", 13.00)], [ref("david", 12.30)])
    assert len(r.false_alarms) == 1 and len(r.misses) == 1 and not r.hits


def test_two_events_on_one_reference():
    r = match_spots([ev("david", 12.3, 90.0), ev("david", 12.4, 85.0)], [ref("david", 12.3)])
    assert len(r.hits) == 1 and len(r.false_alarms) == 1
    assert r.hits[0][0].confidence == 90.0


def test_lemma_level_matching():
    e = SpotEvent(KeywordEntry("davida", "david", ()), 1.0, 1.4, 90.0)
    assert len(match_spots([e], [ReferenceWord("davidovi", "david", 1.0, 1.5)]).hits) == 1
    assert len(match_spots([ev("petr", 1.2)], [ref("david", 1.2)]).hits) == 0


def test_matching_is_maximum_not_greedy():
    # the strongest event sits between two references; greedy nearest-first would strand one
    events = [ev("a", 1.25, 95.0), ev("a", 0.8, 60.0)]
    refs = [ref("a", 1.0), ref("a", 1.7)]
    assert len(match_spots(events, refs).hits) == 2


def test_keyword_lemma_filter_drops_other_references():
    r = match_spots([ev("a", 1.0)], [ref("a", 1.0), ref("b", 5.0)], keyword_lemmas={"a"})
    assert not r.misses


def test_separable_scores_give_zero_eer():
    eer, thr = eer_from_scores([90, 95, 99], [10, 20, 30])
    assert eer == 0.0 and 30 < thr <= 90


def test_threshold_above_everything():
    det = det_curve([ev("a", 1.0, 90.0), ev("a", 5.0, 40.0)], [ref("a", 1.0)], 1.0)
    top = det.points[-1]
    assert top.md_rate == 1.0 and top.fa_fraction == 0.0


def test_det_is_monotone_on_a_mixed_set():
    rng = np.random.default_rng(0)
    refs = [ref("a", float(t)) for t in range(2, 42, 2)]
    events = [ev("a", t + rng.normal(0, 0.4), float(rng.uniform(50, 100))) for t in range(2, 42)]
    det = det_curve(events, refs, 0.5)
    assert np.all(np.diff(det.md) >= 0) and np.all(np.diff(det.fa) <= 0)
    assert np.all(np.diff(det.thresholds) > 0)


def test_eer_crossing_interpolates():
    eer, thr = eer_crossing([0, 1], [0.0, 1.0], [1.0, 0.0])
    assert eer == 0.5 and thr == 0.5


def test_rt_factor_examples():
    assert rt_factor(36.0, 3600.0) == 0.01
    with pytest.raises(ValueError):
        rt_factor(1.0, 0.0)


def test_references_round_trip(tmp_path):
    refs = [ReferenceWord("davida", "david", 1.25, 1.75), ReferenceWord("petr", "petr", 3.0, 3.5)]
    write_references(refs, tmp_path / "r.txt")
    assert load_references(tmp_path / "r.txt") == refs
    (tmp_path / "bad.txt").write_text("a,b,1.0\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        load_references(tmp_path / "bad.txt")
    with pytest.raises(ValueError):
        ReferenceWord("a", "a", 2.0, 1.0)


def test_det_csv(tmp_path):
    det = det_curve([ev("a", 1.0, 90.0), ev("a", 5.0, 40.0)], [ref("a", 1.0)], 1.0)
    write_det_csv(tmp_path / "d.csv", det, "note")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "# note" and lines[2].startswith("threshold,")
    assert len(lines) == 3 + len(det.points)


# -- against the brute-force oracle ----------------------------------------------

event_sets = st.lists(st.tuples(st.sampled_from("ab"), st.integers(0, 12), st.integers(40, 60)),
                      min_size=1, max_size=8)
ref_sets = st.lists(st.tuples(st.sampled_from("ab"), st.integers(0, 12)), min_size=1, max_size=6)


def _build(evs, rfs):
    # quarter-second grid so tolerance edges are hit exactly
    events = [ev(l, 1 + m * 0.25, float(c)) for l, m, c in evs]
    refs = [ref(l, 1 + m * 0.25) for l, m in rfs]
    return events, refs


@settings(max_examples=300)
@given(event_sets, ref_sets)
def test_matching_equals_exhaustive_assignment(evs, rfs):
    events, refs = _build(evs, rfs)
    r = match_spots(events, refs)
    want = max_matching([(e.lemma, e.midpoint) for e in events], [(x.lemma, x.midpoint) for x in refs])
    assert len(r.hits) == want
    assert len(r.hits) + len(r.false_alarms) == len(events)
    assert len(r.hits) + len(r.misses) == len(refs)


@settings(max_examples=300)
@given(event_sets, ref_sets)
def test_det_and_eer_equal_a_brute_force_sweep(evs, rfs):
    events, refs = _build(evs, rfs)
    det = det_curve(events, refs, 1.0)
    thr, md, fa = det_by_sweep([e.confidence for e in events], [e.lemma for e in events],
                               [e.midpoint for e in events], [(x.lemma, x.midpoint) for x in refs])
    assert np.array_equal(det.thresholds, thr)
    assert np.allclose(det.md, md, atol=1e-12, rtol=0) and np.allclose(det.fa, fa, atol=1e-12, rtol=0)
    assert abs(det.eer - crossing(thr, md, fa)) <= 1e-9
