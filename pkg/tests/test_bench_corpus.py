import collections
import csv
import os

import pytest

from flowsight.bench import GRAN_LEVELS, build_suite, run_suite, summarize, write_csv
from flowsight.corpus import CorpusSpec, generate_records, ground_truth
from flowsight.figures import save_bench_figure, save_store_figures
from flowsight.flowagg import AggConfig, Granularity
from flowsight.flowdb import FlowDB
from flowsight.hierarchy import FeatureSet
from flowsight.pipeline import build_rollups, ingest_records

SPEC = CorpusSpec(sites=3, bins=16, flows_per_bin=60, attack_site=2, attack_sources=120)


def test_corpus_deterministic_and_shaped():
    recs = list(generate_records(SPEC))
    assert recs == list(generate_records(SPEC))
    per_bin = collections.Counter(
        (r.site_id, (r.ts - SPEC.day_start) // SPEC.bin_seconds) for r in recs
    )
    for site in range(1, SPEC.sites + 1):
        for b in range(SPEC.bins):
            base = per_bin[(site, b)]
            if site == SPEC.attack_site and b in (5, 6):
                assert base == SPEC.flows_per_bin + SPEC.attack_sources
            else:
                assert base == SPEC.flows_per_bin


def test_corpus_attack_ground_truth():
    truth = ground_truth(SPEC)
    recs = list(generate_records(SPEC))
    attack = [r for r in recs if r.dst_port == 123 and r.src_port == 123 and r.bytes == SPEC.attack_bytes_each]
    assert len(attack) == SPEC.attack_sources * SPEC.attack_bins
    a, b = truth["attack"]["window"]
    assert all(a <= r.ts < b for r in attack)
    assert all(r.site_id == SPEC.attack_site for r in attack)
    assert len({r.src_ip for r in attack}) == SPEC.attack_sources
    assert truth["attack"]["bytes"] == sum(r.bytes for r in attack)


def test_corpus_bins_saturate():
    # distinct keys per bin stay close to the pool size, so hourly rollups
    # add few new keys: the premise behind the storage-overhead bound
    recs = list(generate_records(SPEC))
    per_bin_keys = collections.defaultdict(set)
    per_hour_keys = collections.defaultdict(set)
    for r in recs:
        if r.site_id != 1:
            continue
        b = (r.ts - SPEC.day_start) // SPEC.bin_seconds
        key = (r.src_ip, r.dst_ip, r.src_port, r.dst_port)
        per_bin_keys[b].add(key)
        per_hour_keys[b // 4].add(key)
    bins_sum = sum(len(v) for v in per_bin_keys.values())
    hours_sum = sum(len(v) for v in per_hour_keys.values())
    assert hours_sum < 0.45 * bins_sum


@pytest.fixture(scope="module")
def bench_db(tmp_path_factory):
    db = FlowDB(str(tmp_path_factory.mktemp("benchstore")))
    cfg = AggConfig(
        feature_sets=(FeatureSet.SI, FeatureSet.DI, FeatureSet.SP, FeatureSet.DP,
                      FeatureSet.SIDI, FeatureSet.FULL),
    )
    ingest_records(db, generate_records(SPEC), cfg)
    build_rollups(db, [Granularity.H1, Granularity.D1], cfg)
    return db


def test_suite_has_ten_templates(bench_db):
    suite = build_suite(bench_db, SPEC.day_start)
    assert len(suite) == 10
    assert [b.number for b in suite] == list(range(1, 11))
    names = {b.name for b in suite}
    assert {"traffic_matrix", "super_spreader", "heavy_changers", "tuple_query"} <= names
    day_runnable = [b for b in suite if b.runs_at(Granularity.D1)]
    assert all(not b.iterator_heavy for b in day_runnable)


def test_run_suite_and_outputs(bench_db, tmp_path):
    suite = build_suite(bench_db, SPEC.day_start)
    rows = run_suite(bench_db, suite, repetitions=1, levels=(Granularity.H1, Granularity.M15))
    assert rows
    modes = {r.mode for r in rows}
    assert modes == {"cold", "hot"}
    by_bench = {r.benchmark for r in rows}
    assert by_bench == set(range(1, 11))
    for row in rows:
        assert row.ms >= 0
        assert row.rows >= 0
    csv_path = tmp_path / "bench.csv"
    write_csv(rows, str(csv_path))
    with open(csv_path) as fh:
        parsed = list(csv.reader(fh))
    assert parsed[0][:4] == ["benchmark", "name", "granularity", "mode"]
    assert len(parsed) == len(rows) + 1
    summary = summarize(rows)
    assert all("median" in v for v in summary.values())
    fig = save_bench_figure(rows, str(tmp_path / "bench.png"))
    assert os.path.getsize(fig) > 1000
    figs = save_store_figures(bench_db, str(tmp_path))
    assert len(figs) == 2
    for f in figs:
        assert os.path.getsize(f) > 1000


def test_benchmarks_answer_from_coarse_trees(bench_db):
    suite = build_suite(bench_db, SPEC.day_start)
    # the corpus is only 4 hours long here, but 1h-capped runs must succeed
    top_ports = next(b for b in suite if b.name == "top_k_ports")
    from flowsight.bench import run_benchmark

    ms, nrows = run_benchmark(bench_db, top_ports, Granularity.H1)
    assert nrows == 10
    ms, nrows = run_benchmark(bench_db, top_ports, Granularity.M15)
    assert nrows == 10
