import numpy as np
import pytest

from kwspot.cache import HEADER_SIZE, CacheError, read_cache, replay_decode, write_cache
from kwspot.decoder import FrameSummaries
from kwspot.likelihood import LikelihoodMatrix
from kwspot.pipeline import build_models, first_pass
from kwspot.spotter import format_event

from conftest import DATA

TINY = np.array([[-1.0, -2.5, 0.0, -3.25], [-0.5, -4.0, -1.5, -2.0], [-2.0, -0.25, -3.0, -1.0]],
                dtype=np.float32)
TINY_D = np.array([0.0, -0.5, -0.75])
TINY_DD = np.array([-1.0, -1.5, -1.75])


def _summaries(d, D):
    n = len(d)
    return FrameSummaries(np.arange(n), d, D, np.full(n, -1))


def _lines(events):
    return [format_event("s", e) for e in events]


def test_golden_cache_reads_back():
    c = read_cache(DATA / "tiny.kwsc")
    assert np.array_equal(c.matrix.values, TINY)
    assert np.array_equal(c.summaries.d_best, TINY_D)
    assert np.array_equal(c.summaries.D_best, TINY_DD)
    assert c.fingerprint == b"0123456789abcdef" and c.stream_id == "tiny"


def test_writer_reproduces_golden_bytes(tmp_path):
    write_cache(tmp_path / "t.kwsc", LikelihoodMatrix(TINY), _summaries(TINY_D, TINY_DD),
                b"0123456789abcdef", stream_id="tiny")
    assert (tmp_path / "t.kwsc").read_bytes() == (DATA / "tiny.kwsc").read_bytes()


def test_quasi_cache_holds_146_values_per_frame(tmp_path):
    m = LikelihoodMatrix(np.zeros((100, 144)))
    write_cache(tmp_path / "q.kwsc", m, _summaries(np.zeros(100), np.zeros(100)))
    assert (tmp_path / "q.kwsc").stat().st_size == HEADER_SIZE + 100 * 146 * 4
    assert read_cache(tmp_path / "q.kwsc").values_per_frame == 146


def test_zero_frame_cache(tmp_path):
    write_cache(tmp_path / "z.kwsc", LikelihoodMatrix(np.zeros((0, 6))), _summaries([], []))
    c = read_cache(tmp_path / "z.kwsc")
    assert c.matrix.num_frames == 0 and c.matrix.num_states == 6
    assert replay_decode(c, []).events == []


def test_long_streams_keep_summaries_exact(tmp_path):
    # absolute scores drift far from zero; stored offsets stay small
    n = 50_000
    D = -np.cumsum(np.full(n, 37.25))
    d = D + 1.5
    write_cache(tmp_path / "l.kwsc", LikelihoodMatrix(np.zeros((n, 2))), _summaries(d, D))
    c = read_cache(tmp_path / "l.kwsc")
    assert np.array_equal(c.summaries.D_best, D) and np.array_equal(c.summaries.d_best, d)


def test_truncated_cache_names_the_frame(tmp_path):
    p = tmp_path / "t.kwsc"
    write_cache(p, LikelihoodMatrix(np.zeros((10, 4))), _summaries(np.zeros(10), np.zeros(10)))
    raw = p.read_bytes()
    p.write_bytes(raw[:-30])
    with pytest.raises(CacheError, match="declares 10 frames but frame 8 is incomplete"):
        read_cache(p)
    p.write_bytes(raw[:5])
    with pytest.raises(CacheError, match="truncated header"):
        read_cache(p)


def test_fingerprint_mismatch_is_refused():
    with pytest.raises(CacheError, match="fingerprint"):
        read_cache(DATA / "tiny.kwsc", expect_fingerprint=b"fedcba9876543210")
    assert read_cache(DATA / "tiny.kwsc", expect_fingerprint=b"0123456789abcdef").stream_id == "tiny"


@pytest.fixture(scope="module")
def clean_run(shipped, tmp_path_factory):
    c = shipped("clean")
    half = len(c.keywords) // 2
    first = build_models(c.inventory, c.keywords[:half], "quasi")
    other = build_models(c.inventory, c.keywords[half:], "quasi")
    run = first_pass(c.matrix, first)
    p = tmp_path_factory.mktemp("cache") / "clean.kwsc"
    write_cache(p, run.matrix, run.result.summaries, c.inventory.fingerprint("quasi"), stream_id="clean")
    return c, first, other, run, p


def test_replay_equals_first_pass(clean_run):
    _, first, _, run, p = clean_run
    cache = read_cache(p)
    assert cache.stream_id == "clean"
    replayed = replay_decode(cache, first.replay_keywords()).events
    assert len(replayed) > 0
    assert _lines(replayed) == _lines(run.result.events)


def test_replay_is_deterministic(clean_run):
    _, first, _, _, p = clean_run
    a = replay_decode(read_cache(p), first.replay_keywords()).events
    b = replay_decode(read_cache(p), first.replay_keywords()).events
    assert _lines(a) == _lines(b)


def test_new_keywords_match_a_full_rerun(clean_run):
    c, first, other, _, p = clean_run
    replayed = replay_decode(read_cache(p), other.replay_keywords()).events
    full = first_pass(c.matrix, other).result.events
    old = {k.form for k in c.keywords[:len(first.keywords)]}
    assert replayed and all(e.form not in old for e in replayed)
    got = {(e.form, e.end_frame): e.confidence for e in replayed}
    want = {(e.form, e.end_frame): e.confidence for e in full}
    assert got.keys() == want.keys()
    assert all(abs(got[k] - want[k]) <= 0.5 for k in want)


def test_empty_keyword_list_gives_no_events(clean_run):
    assert replay_decode(read_cache(clean_run[-1]), []).events == []


def test_keywords_wider_than_cache_are_rejected(clean_run, shipped):
    tri = build_models(shipped("triphone").inventory, shipped("triphone").keywords[:3], "triphone")
    wide = [u for u in tri.replay_keywords() if max(u.state_ids) >= 144]
    if not wide:
        pytest.skip("no keyword needs a triphone state")
    with pytest.raises(CacheError, match="state id"):
        replay_decode(read_cache(clean_run[-1]), wide)
