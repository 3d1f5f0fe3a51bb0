import csv
import json

import pytest

from ace_cfe import synthetic
from ace_cfe.cli import main
from ace_cfe.schema import save_schema, write_csv

FAST = ["--n0", "10", "--mc", "200", "--ss", "256", "--restarts", "3"]


@pytest.fixture
def files(tmp_path):
    data, schema = synthetic.moons()
    d, s = tmp_path / "moons.csv", tmp_path / "moons.schema.json"
    write_csv(d, schema, data)
    save_schema(schema, s)
    return str(d), str(s), tmp_path


def explain(d, s, *extra):
    return main(["explain", "--data", d, "--schema", s, "--instance", "0", *FAST, *extra])


def test_explain_is_deterministic(files, capsys):
    d, s, tmp = files
    outs = []
    for i in range(2):
        assert explain(d, s, "--seed", "3", "--out", str(tmp / f"r{i}.json")) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1]
    assert (tmp / "r0.json").read_bytes() == (tmp / "r1.json").read_bytes()
    res = json.loads(outs[0])
    assert res["valid"] and res["method"] == "ace" and len(res["x_cfe"]) == 2


def test_seed_falls_back_to_environment(files, capsys, monkeypatch):
    d, s, _ = files
    explain(d, s, "--seed", "5")
    direct = capsys.readouterr().out
    monkeypatch.setenv("ACE_SEED", "5")
    explain(d, s)
    assert capsys.readouterr().out == direct
    monkeypatch.setenv("ACE_SEED", "five")
    assert explain(d, s) == 1


def test_zero_budget_has_no_cfe(files, capsys):
    d, s, _ = files
    assert explain(d, s, "--max-queries", "0") == 2
    assert json.loads(capsys.readouterr().out)["valid"] is False


def test_usage_errors(files, capsys):
    d, s, tmp = files
    with pytest.raises(SystemExit) as exc:
        main(["explain", "--data", d, "--instance", "0"])
    assert exc.value.code == 1
    assert main(["explain", "--data", d, "--schema", str(tmp / "none.json"),
                 "--instance", "0"]) == 1
    assert explain(d, s, "--blackbox", "oracle") == 1
    assert main(["explain", "--data", d, "--schema", s, "--instance", "999"]) == 1
    assert main(["explain", "--data", d, "--schema", s, "--instance", "[0.1]"]) == 1
    assert explain(d, s, "--restarts", "0") == 1


def test_benchmark_fixed_writes_rows(files, capsys):
    d, s, tmp = files
    out = tmp / "b.csv"
    code = main(["benchmark", "--data", d, "--schema", s, "--methods", "ace", "--mode", "fixed",
                 "--instance", "0", "--repeats", "3", "--out", str(out), *FAST])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 3 and {r["method"] for r in rows} == {"ace"}
    assert [int(r["seed"]) for r in rows] == [0, 1, 2]
    assert "S" not in capsys.readouterr().out.splitlines()[0].split()


def test_benchmark_two_methods_reports_score(files, capsys):
    d, s, tmp = files
    code = main(["benchmark", "--data", d, "--schema", s, "--mode", "mixed", "--n-instances", "2",
                 "--out", str(tmp / "m.csv"), *FAST])
    assert code == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0].split()[-1] == "S"
    assert {r.split()[0] for r in table[2:]} == {"ace", "gs"}


def test_benchmark_usage_errors(files):
    d, s, tmp = files
    base = ["benchmark", "--data", d, "--schema", s, "--out", str(tmp / "x.csv")]
    assert main(base + ["--methods", "ace,moc", "--instance", "0"]) == 1
    assert main(base + ["--mode", "fixed"]) == 1
    assert main(base + ["--mode", "mixed", "--blackbox", "subprocess:cat"]) == 1
