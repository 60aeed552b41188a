import subprocess
import sys

import pytest

from kwspot.cli import main
from kwspot.evaluation import load_references
from kwspot.model import load_inventory, load_keyword_list, write_keyword_list
from kwspot.spotter import SpotEvent, write_events


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--out-dir", d, "--recipe", "dev", "--minutes", 1) == 0
    return d


@pytest.fixture(scope="module")
def spotted(corpus):
    assert run("spot", "--matrix", corpus / "stream.kwsl", "--inventory", corpus / "inventory.txt",
               "--keywords", corpus / "keywords.txt", "--out", corpus / "first.tsv",
               "--cache-out", corpus / "run.kwsc") == 0
    return corpus


def test_synth_is_deterministic(corpus, tmp_path):
    assert run("synth", "--out-dir", tmp_path, "--recipe", "dev", "--minutes", 1) == 0
    for name in ("stream.kwsl", "inventory.txt", "keywords.txt", "refs.txt"):
        assert (tmp_path / name).read_bytes() == (corpus / name).read_bytes()


def test_synth_needs_an_existing_directory(tmp_path):
    assert run("synth", "--out-dir", tmp_path / "missing") == 2


def test_replay_output_is_byte_identical(spotted, capsys):
    d = spotted
    assert run("replay", "--cache-in", d / "run.kwsc", "--inventory", d / "inventory.txt",
               "--keywords", d / "keywords.txt", "--out", d / "replay.tsv") == 0
    first = (d / "first.tsv").read_bytes()
    assert first == (d / "replay.tsv").read_bytes()
    assert first.count(b"\n") > 5
    out = capsys.readouterr().out
    assert "[manifest]" in out and "[results]" in out and "[timing]" in out
    assert "rt_factor=" in out.split("[timing]")[1]


def test_replay_with_a_disjoint_list(spotted, tmp_path):
    d = spotted
    inv = load_inventory(d / "inventory.txt")
    kws = load_keyword_list(d / "keywords.txt", inv)
    write_keyword_list(kws[:3], tmp_path / "few.txt")
    assert run("replay", "--cache-in", d / "run.kwsc", "--inventory", d / "inventory.txt",
               "--keywords", tmp_path / "few.txt", "--out", tmp_path / "few.tsv") == 0
    forms = {line.split("\t")[1] for line in (tmp_path / "few.tsv").read_text().splitlines()
             if not line.startswith("#")}
    assert forms <= {k.form for k in kws[:3]}


def test_missing_keywords_is_a_usage_error_with_no_output(spotted, tmp_path):
    d = spotted
    rc = run("spot", "--matrix", d / "stream.kwsl", "--inventory", d / "inventory.txt",
             "--out", tmp_path / "e.tsv", "--cache-out", tmp_path / "c.kwsc")
    assert rc == 2
    assert list(tmp_path.iterdir()) == []


def test_unreadable_keyword_file_leaves_nothing_behind(spotted, tmp_path):
    d = spotted
    rc = run("spot", "--matrix", d / "stream.kwsl", "--inventory", d / "inventory.txt",
             "--keywords", tmp_path / "nope.txt", "--out", tmp_path / "e.tsv")
    assert rc in (1, 2)
    assert list(tmp_path.iterdir()) == []


def test_truncated_cache_is_reported(spotted, tmp_path, capsys):
    d = spotted
    raw = (d / "run.kwsc").read_bytes()
    (tmp_path / "cut.kwsc").write_bytes(raw[:len(raw) // 2])
    rc = run("replay", "--cache-in", tmp_path / "cut.kwsc", "--inventory", d / "inventory.txt",
             "--keywords", d / "keywords.txt", "--out", tmp_path / "r.tsv")
    assert rc == 1
    assert "incomplete" in capsys.readouterr().err
    assert not (tmp_path / "r.tsv").exists()


def test_cache_from_another_mode_is_refused(spotted, tmp_path, capsys):
    d = spotted
    rc = run("replay", "--cache-in", d / "run.kwsc", "--inventory", d / "inventory.txt",
             "--keywords", d / "keywords.txt", "--out", tmp_path / "r.tsv", "--fillers", "mono")
    assert rc == 1 and "fingerprint" in capsys.readouterr().err


def test_eval_on_perfect_events(corpus, tmp_path, capsys):
    refs = load_references(corpus / "refs.txt")
    inv = load_inventory(corpus / "inventory.txt")
    by_lemma = {k.lemma: k for k in load_keyword_list(corpus / "keywords.txt", inv)}
    events = [SpotEvent(by_lemma[r.lemma], r.start, r.end, 90.0) for r in refs]
    write_events(tmp_path / "perfect.tsv", events, "s")
    assert run("eval", "--events", tmp_path / "perfect.tsv", "--refs", corpus / "refs.txt",
               "--csv-out", tmp_path / "det.csv") == 0
    out = capsys.readouterr().out
    assert "eer=0.000000" in out
    assert (tmp_path / "det.csv").read_text().startswith("#")


def test_eval_of_a_real_run(spotted, capsys):
    d = spotted
    assert run("eval", "--events", d / "first.tsv", "--refs", d / "refs.txt", "--threshold", 75) == 0
    assert "at_threshold_75: hits=" in capsys.readouterr().out


def test_config_file_sits_between_flags_and_defaults(spotted, tmp_path, monkeypatch, capsys):
    d = spotted
    conf = tmp_path / "kw.conf"
    conf.write_text("threshold = 99.5\nbuffer-len = 12\n")
    monkeypatch.setenv("KWSPOT_CONFIG", str(conf))
    args = ["spot", "--matrix", d / "stream.kwsl", "--inventory", d / "inventory.txt",
            "--keywords", d / "keywords.txt"]
    assert run(*args, "--out", tmp_path / "a.tsv") == 0
    a = capsys.readouterr().out
    assert "threshold=99.5 buffer_len=12" in a
    assert run(*args, "--out", tmp_path / "b.tsv", "--threshold", 80) == 0
    b = capsys.readouterr().out
    assert "threshold=80 buffer_len=12" in b


def test_unknown_config_key_is_rejected(tmp_path, monkeypatch):
    conf = tmp_path / "kw.conf"
    conf.write_text("bogus = 1\n")
    monkeypatch.setenv("KWSPOT_CONFIG", str(conf))
    with pytest.raises(SystemExit) as ei:
        run("synth", "--out-dir", tmp_path)
    assert ei.value.code == 2


def test_triphone_and_quasi_both_spot(tmp_path):
    assert run("synth", "--out-dir", tmp_path, "--recipe", "triphone", "--minutes", 0.5) == 0
    for mode in ("triphone", "quasi"):
        out = tmp_path / f"{mode}.tsv"
        assert run("spot", "--matrix", tmp_path / "stream.kwsl", "--inventory", tmp_path / "inventory.txt",
                   "--keywords", tmp_path / "keywords.txt", "--out", out, "--fillers", mode) == 0
        assert any(not line.startswith("#") for line in out.read_text().splitlines())


def test_quick_bench_has_all_four_rows(tmp_path, capsys):
    assert run("bench", "--minutes-scale", 0.05, "--keyword-counts", 555, 2000, "--extra-margin",
               "--repeats", 1, "--csv-out", tmp_path / "b.csv") == 0
    out = capsys.readouterr().out
    for variant in ("triphone first-pass", "triphone replay", "quasi-mono first-pass", "quasi-mono replay"):
        assert variant in out
    assert "replay_identical=True" in out
    assert "keyword scaling 555->2000" in out
    assert (tmp_path / "b.csv").exists()


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "kwspot", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("kwspot ")
