import gzip
import io

import pytest

from flowsight.hierarchy import FeatureSet
from flowsight.flowagg import (
    AggConfig,
    FLOW_HEADER,
    FlowRecord,
    FormatError,
    Granularity,
    IngestQualityError,
    IngestReport,
    PACKET_HEADER,
    SITE_ALL,
    TreeKey,
    WindowError,
    bin_and_build,
    parse_flow_csv,
    parse_packet_summaries,
    rollup,
    sites_rollup,
)
from flowsight.flowtree import merge_many


def flow_csv(rows, header=FLOW_HEADER):
    return (header + "\n" + "\n".join(rows) + "\n").encode()


def test_parse_flow_csv_basic():
    data = flow_csv(["100,1,1.2.3.4,5.6.7.8,1234,80,6,3,1800"])
    recs = list(parse_flow_csv(data))
    assert len(recs) == 1
    r = recs[0]
    assert r.ts == 100 and r.site_id == 1
    assert r.src_ip == (1 << 24) + (2 << 16) + (3 << 8) + 4
    assert r.packets == 3 and r.bytes == 1800


def test_parse_flow_csv_empty_after_header():
    assert list(parse_flow_csv(flow_csv([]))) == []


def test_parse_flow_csv_missing_header():
    with pytest.raises(FormatError):
        list(parse_flow_csv(b"1,2,3\n"))


def test_parse_flow_csv_skips_and_counts_bad_lines():
    report = IngestReport()
    data = flow_csv(
        [
            "100,1,1.2.3.4,5.6.7.8,70000,80,6,3,1800",  # port out of range
            "100,1,1.2.3.4,5.6.7.8,1234,80,6,3,1800",
            "junk",
        ]
    )
    recs = list(parse_flow_csv(data, report, max_bad_fraction=0.9))
    assert len(recs) == 1
    assert report.records_skipped == 2
    assert report.records_read == 1
    assert any("=" in line for line in report.log_lines())


def test_parse_flow_csv_quality_gate():
    rows = ["junk"] * 10 + ["100,1,1.2.3.4,5.6.7.8,1234,80,6,3,1800"]
    with pytest.raises(IngestQualityError):
        list(parse_flow_csv(flow_csv(rows), max_bad_fraction=0.01))


def test_gzip_autodetect():
    data = gzip.compress(flow_csv(["100,1,1.2.3.4,5.6.7.8,1234,80,6,3,1800"]))
    recs = list(parse_flow_csv(io.BytesIO(data)))
    assert len(recs) == 1


def test_parse_packet_summaries():
    data = (
        PACKET_HEADER
        + "\n"
        + "1500000000000000,2,1.2.3.4,5.6.7.8,1234,80,17,60\n"
        + "1500000000500000,2,1.2.3.4,5.6.7.8,1234,80,17,60\n"
    ).encode()
    recs = list(parse_packet_summaries(data))
    assert len(recs) == 2  # same 5-tuple stays two records
    assert all(r.packets == 1 and r.bytes == 60 for r in recs)
    assert recs[0].ts == 1_500_000_000


def make_record(ts, site=1, sport=1000, dport=80):
    return FlowRecord(
        ts=ts,
        site_id=site,
        src_ip=0x0A000001,
        dst_ip=0x0A000002,
        src_port=sport,
        dst_port=dport,
        proto=6,
        packets=2,
        bytes=100,
    )


def test_bin_and_build_partitions():
    cfg = AggConfig(feature_sets=tuple(FeatureSet))
    recs = [make_record(ts, site) for site in (1, 2) for ts in (0, 100, 900, 1000)]
    out = list(bin_and_build(recs, cfg))
    assert len(out) == 2 * 2 * 11  # sites x bins x feature sets
    keys = {k for k, _ in out}
    assert TreeKey(1, FeatureSet.SI, Granularity.M15, 0) in keys
    assert TreeKey(2, FeatureSet.FULL, Granularity.M15, 900) in keys


def test_bin_boundary_goes_to_later_bin():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    out = dict(bin_and_build([make_record(900)], cfg))
    assert list(out) == [TreeKey(1, FeatureSet.SI, Granularity.M15, 900)]


def test_bin_totals_conserved():
    cfg = AggConfig(feature_sets=(FeatureSet.SI, FeatureSet.DP))
    recs = [make_record(i) for i in range(50)]
    out = dict(bin_and_build(recs, cfg))
    for tree in out.values():
        assert tree.total.flows == 50
        assert tree.total.packets == 100
        assert tree.total.bytes == 5000


def test_late_records_reopen_bin():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,), watermark_bins=1)
    recs = [make_record(0), make_record(5000), make_record(10)]  # last is late
    out = list(bin_and_build(recs, cfg))
    bins0 = [t for k, t in out if k.start_ts == 0]
    assert len(bins0) == 2  # flushed once, reopened for the straggler
    assert sum(t.total.flows for t in bins0) == 2


def test_rollup_four_quarters_to_hour():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    recs = [make_record(ts) for ts in (0, 900, 1800, 2700)]
    pieces = [(k, t) for k, t in bin_and_build(recs, cfg)]
    key, tree = rollup(pieces, Granularity.H1)
    assert key == TreeKey(1, FeatureSet.SI, Granularity.H1, 0)
    assert tree.total.flows == 4


def test_rollup_partial_inputs_ok():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    pieces = list(bin_and_build([make_record(900)], cfg))
    key, tree = rollup(pieces, Granularity.H1)
    assert key.start_ts == 0
    assert tree.total.flows == 1


def test_rollup_rejects_multiple_windows():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    recs = [make_record(0), make_record(3600)]
    pieces = list(bin_and_build(recs, cfg))
    with pytest.raises(WindowError):
        rollup(pieces, Granularity.H1)


def test_rollup_associative_day():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    recs = [make_record(900 * i, sport=i % 7) for i in range(96)]
    pieces = list(bin_and_build(recs, cfg))
    assert len(pieces) == 96
    direct = merge_many([t for _, t in pieces])
    hours = []
    for h in range(24):
        hour_pieces = [(k, t) for k, t in pieces if k.start_ts // 3600 == h]
        hours.append(rollup(hour_pieces, Granularity.H1))
    _, via_hours = rollup(hours, Granularity.D1)
    assert {k: c.as_tuple() for k, c in direct.items()} == {
        k: c.as_tuple() for k, c in via_hours.items()
    }


def test_sites_rollup():
    cfg = AggConfig(feature_sets=(FeatureSet.SI,))
    recs = [make_record(0, site=1), make_record(0, site=2)]
    pieces = list(bin_and_build(recs, cfg))
    key, tree = sites_rollup(pieces)
    assert key.site_id == SITE_ALL
    assert tree.total.flows == 2


def test_tree_key_text_roundtrip():
    key = TreeKey(7, FeatureSet.DIDP, Granularity.M15, 900)
    assert key.text() == "7-DIDP-15m-900"
    assert TreeKey.from_text(key.text()) == key
    allk = TreeKey(SITE_ALL, FeatureSet.SP, Granularity.D1, 86400)
    assert TreeKey.from_text(allk.text()) == allk


def test_tree_key_alignment_enforced():
    with pytest.raises(Exception):
        TreeKey(1, FeatureSet.SI, Granularity.M15, 10)
