import csv
import io
import json

import pytest

from splitaudit.cli import main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), stdout=out)
    return code, out.getvalue()


@pytest.fixture(scope="module")
def realworld_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("rw") / "rw.csv"
    assert run("gen", "--scenario", "realworld", "--rows", "800", "--seed", "7", "--out", str(path))[0] == 0
    return path


def test_gen_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run("gen", "--scenario", "realworld", "--rows", "800", "--seed", "7", "--out", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.reader(a.open()))
    assert rows[0][0] == "group" and len(rows) == 1601


@pytest.mark.parametrize("argv", [
    ["gen", "--rows", "0"],
    ["gen", "--scenario", "nope"],
    ["gen", "--n-hetero", "12"],
    ["simulate", "--rows", "0", "--reps", "1"],
    ["simulate", "--reps", "1", "--methods", "bogus"],
    ["frobnicate"],
])
def test_usage_errors(argv):
    assert run(*argv)[0] == 2


def test_check_missing_group_column(realworld_csv):
    assert run("check", "--input", str(realworld_csv), "--group-col", "arm")[0] == 2
    assert run("check", "--input", "/nonexistent.csv")[0] == 2


def test_null_check_exits_zero(tmp_path):
    path = tmp_path / "null.csv"
    run("gen", "--scenario", "marginal", "--n-hetero", "0", "--seed", "3", "--out", str(path))
    code, text = run("check", "--input", str(path), "--group-col", "group", "--b", "99", "--seed", "1")
    assert code == 0
    assert "overall: no_reject" in text


def test_realworld_check_flags_employment(realworld_csv, tmp_path):
    report = tmp_path / "r.json"
    code, _ = run("check", "--input", str(realworld_csv), "--group-col", "group", "--b", "99",
                  "--methods", "randchi,disco", "--randchi-c", "3", "--report", str(report))
    assert code == 1
    rep = json.loads(report.read_text())
    assert rep["schema_version"] == 1
    assert rep["input"]["group_sizes"] == [800, 800]
    flags = rep["methods"]["randchi"]["column_flag_counts"]
    # one dataset gives only a handful of rejected draws; the ordering over
    # many replicates is covered by the acceptance suite
    assert flags["Employment status"] > 0
    assert flags["Employment status"] >= flags["Browser type"]
    assert rep["methods"]["disco"]["decision"] == "reject"
    assert set(rep["methods"]) == {"randchi", "disco"}
    assert "most_imbalanced_draw" in rep["methods"]["randchi"]
    _, text = run("check", "--input", str(realworld_csv), "--group-col", "group", "--b", "9",
                  "--methods", "randchi", "--randchi-c", "3", "--randchi-up-to", "--format", "json")
    draws = json.loads(text)["methods"]["randchi"]["draws"]
    assert all(1 <= len(d["columns"]) <= 3 for d in draws)


def test_check_report_identical_across_runs_and_threads(realworld_csv, tmp_path):
    outs = []
    for threads in ("1", "1", "3"):
        code, text = run("check", "--input", str(realworld_csv), "--group-col", "group", "--b", "19",
                         "--format", "json", "--threads", threads, "--seed", "5")
        outs.append(text)
    assert outs[0] == outs[1] == outs[2]
    assert "wall_time_s" not in outs[0]


def test_timings_are_opt_in(realworld_csv):
    _, text = run("check", "--input", str(realworld_csv), "--group-col", "group", "--b", "9",
                  "--methods", "disco", "--format", "json", "--timings")
    assert "wall_time_s" in json.loads(text)["methods"]["disco"]


def test_config_file_and_flag_precedence(realworld_csv, tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("# defaults\nb = 9\nmethods = disco\nformat = json\nseed = 4\n")
    _, text = run("check", "--input", str(realworld_csv), "--group-col", "group", "--config", str(conf))
    rep = json.loads(text)
    assert set(rep["methods"]) == {"disco"} and rep["seed"] == 4
    _, text = run("check", "--input", str(realworld_csv), "--group-col", "group", "--config", str(conf),
                  "--seed", "6")
    assert json.loads(text)["seed"] == 6
    conf.write_text("bogus_key = 1\n")
    assert run("check", "--input", str(realworld_csv), "--config", str(conf))[0] == 2


def test_interaction_passes_marginal_but_not_randchi(tmp_path):
    path = tmp_path / "i.csv"
    run("gen", "--scenario", "interaction", "--signal", "strong", "--seed", "2", "--out", str(path))
    _, text = run("check", "--input", str(path), "--group-col", "group", "--b", "99",
                  "--methods", "baseline,randchi", "--randchi-c", "3", "--format", "json")
    rep = json.loads(text)
    assert rep["methods"]["baseline"]["decision"] == "no_reject"
    assert rep["methods"]["randchi"]["decision"] == "reject"


def test_simulate_sweep_and_flags(tmp_path):
    flags = tmp_path / "f.csv"
    code, text = run("simulate", "--scenario", "marginal", "--signal", "strong", "--sweep-hetero", "1..3",
                     "--reps", "2", "--b", "9", "--methods", "randchi", "--flags-out", str(flags))
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(text)))
    assert [r["n_hetero"] for r in rows] == ["1", "2", "3"]
    assert all(0 <= float(r["power"]) <= 1 for r in rows)
    assert len(list(csv.reader(flags.open()))) == 1 + 3 * 10


def test_simulate_compare_holm_and_determinism():
    argv = ["simulate", "--scenario", "marginal", "--signal", "medium", "--reps", "3", "--b", "19",
            "--methods", "baseline,randchi", "--compare", "holm"]
    code, a = run(*argv)
    _, b = run(*argv, "--threads", "2")
    assert code == 0 and a == b
    methods = [r["method"] for r in csv.DictReader(io.StringIO(a))]
    assert methods == ["baseline", "randchi", "baseline_holm", "randchi_holm"]


def test_simulate_dimension_sweep():
    code, text = run("simulate", "--sweep-dim", "10..20:10", "--signal", "weak", "--reps", "1",
                     "--b", "9", "--methods", "disco")
    assert code == 0
    assert [r["m"] for r in csv.DictReader(io.StringIO(text))] == ["10", "20"]
