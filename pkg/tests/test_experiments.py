import csv
import filecmp
import math

import pytest

from streamtamp import cli
from streamtamp import experiments as X
from streamtamp.planner import SolveConfig


def _rec(problem="p", method="adaptive", status="Solved", wall=1.0, search=0.5, **kw):
    base = dict(problem=problem, task="stacking", blocks=2, blockers=0, method=method, status=status,
                plan_length=4 if status == "Solved" else -1, instances=10, evaluations=5, plans_attempted=1,
                facts_added=20, violations_child=0, violations_eval=0, level_bound_violations=0, seed=0,
                config_hash="abc", wall_time=wall, time_search=search)
    base.update(kw)
    return X.RunRecord(**base)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_runs_csv_round_trip(tmp_path):
    recs = [_rec("a"), _rec("b", status="Timeout", wall=90.0)]
    X.write_runs(tmp_path / "r.csv", recs)
    back = X.read_runs(tmp_path / "r.csv")
    assert [r.problem for r in back] == ["a", "b"] and back[1].wall_time == 90.0
    assert _rows(tmp_path / "r.csv")[0] == ["#version", X.CSV_VERSION]


def test_schema_mismatch_is_an_error(tmp_path):
    (tmp_path / "bad.csv").write_text("#version,other\nx\n")
    with pytest.raises(ValueError):
        X.read_runs(tmp_path / "bad.csv")


def test_empty_report_has_headers_only(tmp_path):
    X.write_report(tmp_path, [])
    for name, header in X.REPORT_HEADERS.items():
        sub = tmp_path / "timing" if name in X.TIMED_TABLES else tmp_path
        rows = _rows(sub / f"{name}.csv")
        assert rows == [["#version", X.CSV_VERSION], list(header)]


def test_single_solved_record():
    t = X.summarize([_rec(wall=2.5)])
    assert t["summary"][0]["solve_rate"] == 1.0
    assert t["timing"][0]["mean_time_solved"] == 2.5


def test_mean_time_over_solved_only():
    t = X.summarize([_rec("a", wall=2.0), _rec("b", wall=4.0), _rec("c", status="Timeout", wall=90.0)])
    assert t["timing"][0]["mean_time_solved"] == 3.0
    assert t["summary"][0]["solve_rate"] == pytest.approx(2 / 3)
    curve = {c["time"]: c["solve_rate"] for c in t["curves"]}
    assert curve[1.0] == 0.0 and curve[5.0] == pytest.approx(2 / 3)


def test_summary_has_no_timing_columns():
    assert not any(h.startswith(("mean_time", "time", "wall")) and h != "timeouts" for h in X.REPORT_HEADERS["summary"])
    assert not set(X.TIMING) & set(X.SUMMARY_FIELDS)


def test_config_hash_is_reproducible():
    a = X.config_hash(SolveConfig(), "informed+model", "m")
    assert a == X.config_hash(SolveConfig(), "informed+model", "m")
    assert a != X.config_hash(SolveConfig(k=5), "informed+model", "m")


def test_generation_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        X.write_corpus(tmp_path / d, X.corpus_specs("sorting", "train", 3, 7))
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only


def test_empty_manifest(tmp_path):
    m = X.write_corpus(tmp_path, X.corpus_specs("stacking", "train", 0, 7))
    assert X.read_manifest(m) == []


def test_block_counts_follow_the_split(tmp_path):
    m = X.write_corpus(tmp_path, X.corpus_specs("stacking", "train", 20, 7))
    assert all(2 <= e["n_blocks"] <= 4 for e in X.read_manifest(m))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    return X.write_corpus(out / "c", X.corpus_specs("sorting", "train", 2, 3, blocks=1, blockers=2))


def test_solve_records_and_rerun_statuses(tiny, tmp_path):
    a = X.run_corpus(tiny, "adaptive", SolveConfig(timeout=30))
    b = X.run_corpus(tiny, "informed", SolveConfig(timeout=30), "uniform")
    c = X.run_corpus(tiny, "informed", SolveConfig(timeout=30), "uniform")
    assert [r.status for r in b] == [r.status for r in c]
    for r in a + b:
        assert r.status == "Solved"
        phases = r.time_expansion + r.time_search + r.time_sampling + r.time_inference
        assert phases <= r.wall_time + 1e-6


def test_timeout_status(tmp_path):
    m = X.write_corpus(tmp_path, X.corpus_specs("stacking", "test", 1, 3, blocks=6))
    (r,) = X.run_corpus(m, "adaptive", SolveConfig(timeout=1.0))
    assert r.status == "Timeout" and r.wall_time < 1.2


def test_collect_single_block_move(tiny):
    corpus = X.load_corpus(tiny)[:1]
    labels, summary = X.collect(corpus, SolveConfig(timeout=30))
    assert summary[0]["status"] == "Solved"
    assert summary[0]["positives"] >= 3


def test_unsolved_contributes_nothing(tmp_path):
    m = X.write_corpus(tmp_path, X.corpus_specs("stacking", "test", 1, 3, blocks=6))
    labels, summary = X.collect(X.load_corpus(m), SolveConfig(timeout=0.5))
    assert labels == [] and summary[0]["positives"] == 0


def test_cli_pipeline(tmp_path, capsys):
    c = str(tmp_path / "c")
    assert cli.main(["generate", "--task", "stacking", "--count", "2", "--blocks", "2", "--seed", "4",
                     "--out", c]) == 0
    m = c + "/manifest.json"
    labels = str(tmp_path / "l.jsonl")
    assert cli.main(["collect", "--manifest", m, "--out", labels]) == 0
    assert cli.main(["collect", "--manifest", m, "--out", labels, "--append"]) == 0
    assert "0 new records" in capsys.readouterr().out
    ck = str(tmp_path / "m.relnet")
    assert cli.main(["train", "--labels", labels, "--manifest", m, "--out", ck, "--epochs", "3"]) == 0
    runs = str(tmp_path / "runs.csv")
    for scorer in ("model", "stats", "pg", "level", "uniform"):
        assert cli.main(["solve", "--manifest", m, "--scorer", scorer, "--model", ck, "--out", runs,
                         "--timeout", "30"]) == 0
    assert cli.main(["solve", "--manifest", m, "--method", "adaptive", "--out", runs]) == 0
    assert cli.main(["report", "--runs", runs, "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "m.relnet.loss.csv").exists()


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["solve", "--manifest", "missing.json", "--scorer", "model", "--out", "x.csv"]) == 2
    assert cli.main(["solve", "--manifest", str(tmp_path / "missing.json"), "--method", "adaptive",
                     "--out", str(tmp_path / "x.csv")]) == 2
    with pytest.raises(SystemExit):
        cli.main(["solve", "--scorer", "oracle"])


def test_train_rejects_mixed_tasks_without_flag(tmp_path):
    ms, ls = [], []
    for task in ("stacking", "sorting"):
        d = tmp_path / task
        m = X.write_corpus(d, X.corpus_specs(task, "train", 1, 1, blocks=1 if task == "sorting" else 2,
                                             blockers=1 if task == "sorting" else None))
        labels, _ = X.collect(X.load_corpus(m), SolveConfig(timeout=30))
        from streamtamp.relnet.labels import write_dataset
        write_dataset(d / "l.jsonl", labels)
        ms.append(str(m))
        ls.append(str(d / "l.jsonl"))
    out = str(tmp_path / "mt.relnet")
    args = ["train", "--labels", *ls, "--manifest", *ms, "--out", out, "--epochs", "2"]
    assert cli.main(args) == 2
    assert cli.main(args + ["--multi-task"]) == 0


def test_cli_check(capsys):
    assert cli.main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 3
