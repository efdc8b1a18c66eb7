import io
import json
import os

import pytest
from click.testing import CliRunner

from flowsight.cli import main, read_config
from flowsight.corpus import CorpusSpec, write_corpus
from flowsight.flowagg import AggConfig, Granularity
from flowsight.flowdb import FlowDB
from flowsight.pipeline import build_rollups, ingest_records
from flowsight.shell import Shell

from test_flowql_exec import make_records, FS, R2H, H0


@pytest.fixture(scope="module")
def db(tmp_path_factory):
    store = FlowDB(str(tmp_path_factory.mktemp("shellstore")))
    cfg = AggConfig(feature_sets=FS, insert_probability=1.0)
    ingest_records(store, make_records(), cfg)
    build_rollups(store, [Granularity.H1], cfg)
    return store


def run_shell(db, script: str) -> str:
    out = io.StringIO()
    Shell(db, out=out).run(source=io.StringIO(script))
    return out.getvalue()


def test_shell_table_output(db):
    text = run_shell(db, f"SELECT top(2,any,byte) FROM {R2H} WHERE site_id=ANY and dst_port=ANY\n")
    assert "123|16" in text
    assert "bytes" in text  # header


def test_shell_timing_toggle(db):
    script = f"\\timing\nSELECT pop FROM {H0} WHERE site_id=1 and dst_port=53|16\n"
    text = run_shell(db, script)
    assert "timing is on" in text
    assert "row(s) in" in text and "ms" in text


def test_shell_format_json_lines(db):
    script = (
        "\\format json-lines\n"
        f"SELECT pop FROM {H0} WHERE site_id=1 and dst_port=53|16\n"
    )
    text = run_shell(db, script)
    line = [l for l in text.splitlines() if l.startswith("{")][0]
    row = json.loads(line)
    assert row["key"] == "53|16" and row["site"] == "1"


def test_shell_format_csv(db):
    script = "\\format csv\n" f"SELECT pop FROM {H0} WHERE site_id=1 and dst_port=53|16\n"
    text = run_shell(db, script)
    assert "bin,site,key,flows,packets,bytes,exact" in text


def test_shell_syntax_error_caret(db):
    text = run_shell(db, "SELECT pop FROM nonsense\n")
    lines = text.splitlines()
    caret_line = [i for i, l in enumerate(lines) if l.strip() == "^"]
    assert caret_line, text
    # caret points at the offending token on the echoed line
    i = caret_line[0]
    assert "nonsense" in lines[i - 1]
    assert lines[i].index("^") == lines[i - 1].index("nonsense")


def test_shell_explain_meta(db):
    text = run_shell(db, f"\\explain SELECT pop FROM {H0} WHERE site_id=ANY and dst_port=80|16\n")
    assert "mini-queries: 1" in text


def test_shell_quit(db):
    text = run_shell(db, "\\q\nSELECT never FROM run\n")
    assert "never" not in text


def test_read_config(tmp_path):
    path = tmp_path / "conf"
    path.write_text("# comment\nstore=/tmp/x\ncache_trees=12\n\nworkers=3\n")
    cfg = read_config(str(path))
    assert cfg == {"store": "/tmp/x", "cache_trees": "12", "workers": "3"}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("clicorpus")
    spec = CorpusSpec(sites=2, bins=8, flows_per_bin=30, attack_site=1, attack_sources=40)
    write_corpus(spec, str(d / "flows.csv"), str(d / "truth.json"))
    return d


def test_cli_ingest_query_roundtrip(corpus_dir, tmp_path_factory):
    store = str(tmp_path_factory.mktemp("clistore"))
    runner = CliRunner()
    res = runner.invoke(
        main,
        ["--store", store, "ingest", str(corpus_dir / "flows.csv"),
         "--feature-sets", "SP,DP", "--probability", "1.0"],
    )
    assert res.exit_code == 0, res.output
    assert "records_read=" in res.output and "trees_written=" in res.output
    res = runner.invoke(main, ["--store", store, "rollup", "--granularities", "1h"])
    assert res.exit_code == 0, res.output
    first_written = [l for l in res.output.splitlines() if l.startswith("trees_written=")][0]
    assert int(first_written.split("=")[1]) > 0
    # idempotent second run
    res = runner.invoke(main, ["--store", store, "rollup", "--granularities", "1h"])
    assert "trees_written=0" in res.output
    res = runner.invoke(
        main,
        ["--store", store, "query", "-q",
         "SELECT top(3,any,byte) FROM (time 2024-03-14 00:00 to 2024-03-14 01:59) "
         "WHERE site_id=ANY and src_port=ANY", "--format", "csv"],
    )
    assert res.exit_code == 0, res.output
    assert "bin,site,key" in res.output


def test_cli_ingest_dedup(corpus_dir, tmp_path_factory):
    store = str(tmp_path_factory.mktemp("dedupstore"))
    runner = CliRunner()
    args = ["--store", store, "ingest", str(corpus_dir / "flows.csv"),
            "--feature-sets", "SP", "--dedup"]
    res = runner.invoke(main, args)
    assert res.exit_code == 0
    assert "files_skipped=0" in res.output
    res = runner.invoke(main, args)
    assert "files_skipped=1" in res.output
    assert "trees_written=0" in res.output


def test_cli_query_error_exit(tmp_path_factory):
    store = str(tmp_path_factory.mktemp("errstore"))
    runner = CliRunner()
    res = runner.invoke(main, ["--store", store, "query", "-q", "SELECT junk FROM x"])
    assert res.exit_code == 1
    assert "^" in res.output


def test_cli_store_from_env(corpus_dir, tmp_path_factory, monkeypatch):
    store = str(tmp_path_factory.mktemp("envstore"))
    monkeypatch.setenv("FLOWSIGHT_STORE", store)
    runner = CliRunner()
    res = runner.invoke(
        main, ["ingest", str(corpus_dir / "flows.csv"), "--feature-sets", "SP"]
    )
    assert res.exit_code == 0
    assert os.path.isdir(os.path.join(store, "SP"))


def test_cli_gen_corpus(tmp_path):
    runner = CliRunner()
    out = tmp_path / "c.csv"
    truth = tmp_path / "t.json"
    res = runner.invoke(
        main,
        ["gen-corpus", str(out), "--sites", "2", "--flows-per-bin", "5",
         "--truth", str(truth)],
    )
    assert res.exit_code == 0, res.output
    assert out.exists() and truth.exists()
    t = json.loads(truth.read_text())
    assert t["attack"]["dst_port"] == 123
    header = out.read_text().splitlines()[0]
    assert header == "ts,site,src_ip,dst_ip,src_port,dst_port,proto,packets,bytes"
