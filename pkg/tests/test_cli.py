from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from smsqldb import cli
from smsqldb.microdb import default_config


def run(capsys, *argv):
    code = cli.main(list(argv))
    return code, capsys.readouterr().out


def test_query_verbose(capsys):
    code, out = run(capsys, "query", "dbiris tbiris atsepl va8")
    assert code == 0
    lines = out.splitlines()
    assert lines[:2] == ["Species found is:", "Iris-Virginica"]
    assert "sql: SELECT sepl FROM iris.iris WHERE sepl = 8" in lines
    assert any(l.startswith("latency_ms: ") for l in lines)


def test_query_terse(capsys):
    code, out = run(capsys, "query", "dburis tbiris atsepl va6")
    assert code == 0
    assert out.splitlines()[0] == "IVS"


def test_query_incomplete(capsys):
    code, out = run(capsys, "query", "dbiris tbiris")
    assert code == 2
    assert out.startswith("ERR: incomplete query")


def test_query_oversize_body(capsys):
    code, out = run(capsys, "query", "x" * 161)
    assert code == 2 and out.startswith("ERR:")


def test_query_no_ts_is_byte_reproducible(capsys):
    _, a = run(capsys, "query", "--no-ts", "--seed", "7", "dbiris tbiris atsepl va3")
    _, b = run(capsys, "query", "--no-ts", "--seed", "7", "dbiris tbiris atsepl va3")
    assert a == b and "latency" not in a


def test_query_repl(capsys, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO("dburis tbiris atsepl va6\n\ndbiris\nquit\ndbiris tbiris atsepl va8\n"))
    code, out = run(capsys, "query", "--no-ts")
    assert code == 2
    assert out.splitlines()[0] == "IVS"
    assert "ERR: incomplete query: missing tb, at, va" in out
    assert "Iris-Virginica" not in out


def test_ga_flags_override(capsys):
    code, out = run(capsys, "query", "--no-ts", "--gens", "3", "--threshold", "0", "--selection", "truncation",
                    "--pop-size", "4", "dbiris tbiris atsepl va2")
    assert code == 0
    assert "generations=3 evaluations=12" in out


def test_bench_table1_default(capsys):
    code, out = run(capsys, "bench-table1", "--no-ts")
    assert code == 0
    assert "matched 4/4" in out
    for expected in ("Species Found Iris-Setosa", "Species Found Iris-Virginica", "Species Found IVS"):
        assert expected in out


def test_bench_table1_detects_flipped_terse_mode(capsys, tmp_path):
    doc = default_config()
    for db in doc["databases"]:
        db["report_mode"] = "verbose"
    path = tmp_path / "flipped.json"
    path.write_text(json.dumps(doc))
    code, out = run(capsys, "bench-table1", "--no-ts", "--config", str(path))
    assert code == 1
    assert "matched 3/4" in out
    assert "- row 4: expected 'Species Found IVS'" in out
    assert "+ row 4: actual   'Species Found Iris-Versicolor'" in out


def test_bench_table1_seed_sweep(capsys):
    code, out = run(capsys, "bench-table1", "--no-ts", "--sweep", "100")
    assert code == 0
    assert "seed sweep: 100/100" in out


def test_oracle_sweep_small(capsys):
    code, out = run(capsys, "oracle-sweep", "--no-ts", "--targets", "0..15", "--seeds", "20")
    assert code == 0
    assert "cells: 320  dominance violations: 0" in out


def test_oracle_sweep_in_range_without_fallback(capsys):
    code, out = run(capsys, "oracle-sweep", "--no-ts", "--targets", "4..8", "--seeds", "50", "--no-fallback")
    assert code == 0
    rows = [l.split() for l in out.splitlines()[1:6]]
    assert [r[0] for r in rows] == ["4", "5", "6", "7", "8"]
    assert all(r[5] == "100.0%" for r in rows)  # accept column


def test_oracle_sweep_empty_range(capsys):
    code, out = run(capsys, "oracle-sweep", "--no-ts", "--targets", "5..4")
    assert code == 0
    assert "cells: 0" in out


def test_oracle_sweep_bad_range_is_usage_error(capsys):
    with pytest.raises(SystemExit) as err:
        cli.main(["oracle-sweep", "--targets", "a..b"])
    assert err.value.code == 2


def test_no_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as err:
        cli.main([])
    assert err.value.code == 2


def test_ingest_then_query_written_config(capsys, tmp_path):
    csv_path = tmp_path / "garden.csv"
    csv_path.write_text("# garden\n6.3,3.3,6.0,2.5,Iris-virginica\n5.0,3.4,1.5,0.2\n")
    out_cfg = tmp_path / "garden.json"
    code, out = run(capsys, "ingest", str(csv_path), "--db", "garden", "--table", "beds", "--mode", "terse",
                    "--write-config", str(out_cfg))
    assert code == 0
    assert "0,6,3,6,3,Iris-Versicolor" in out
    assert "ingested 2 rows into garden.beds" in out
    code, out = run(capsys, "query", "--no-ts", "--config", str(out_cfg), "dbgarden tbbeds atsepl va5")
    assert code == 0 and out.splitlines()[0] == "IS"


def test_ingest_bad_csv(capsys, tmp_path):
    csv_path = tmp_path / "bad.csv"
    csv_path.write_text("abc,1,1,1\n")
    code = cli.main(["ingest", str(csv_path), "--db", "x", "--table", "y"])
    assert code == 2
    assert "line 1" in capsys.readouterr().err


def test_serve_loopback_over_stdio():
    lines = "MSG|I|803|0|dburis tbiris atsepl va6\nGARBAGE\nMSG|I|804|0|dbq tbiris atsepl va6\n"
    proc = subprocess.run(
        [sys.executable, "-m", "smsqldb", "serve"], input=lines, capture_output=True, text=True, timeout=20
    )
    assert proc.returncode == 0
    out = proc.stdout.splitlines()
    assert sorted(l.split("|", 4)[2] + "|" + l.split("|", 4)[4] for l in out) == [
        "803|IVS",
        "804|ERR: unknown database q",
    ]
    assert "ERR|not a frame" in proc.stderr
    assert proc.stderr.count("STAT|") == 2
