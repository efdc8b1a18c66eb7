"""Ingestion: parse raw flow inputs, bin by site and time, build trees,
and roll bins up to coarser granularities and across sites."""

from __future__ import annotations

import enum
import gzip
import io
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Optional

from .hierarchy import FeatureSet, FlowKey
from .flowtree import (
    DEFAULT_MAX_NODES,
    DEFAULT_PORT_MAX_NODES,
    DEFAULT_INSERT_PROBABILITY,
    Counters,
    Flowtree,
    merge_many,
)

SITE_ALL = 0xFFFFFFFF


class IngestError(Exception):
    pass


class FormatError(IngestError):
    """Missing or wrong header, or an unreadable input."""


class IngestQualityError(IngestError):
    """Too large a fraction of malformed lines."""


class WindowError(IngestError):
    """Rollup inputs span more than one target window."""


class Granularity(enum.Enum):
    M1 = ("1m", 60)
    M15 = ("15m", 900)
    H1 = ("1h", 3600)
    D1 = ("1d", 86400)
    W1 = ("1w", 604800)

    @property
    def label(self) -> str:
        return self.value[0]

    @property
    def seconds(self) -> int:
        return self.value[1]

    @classmethod
    def from_label(cls, label: str) -> "Granularity":
        for g in cls:
            if g.label == label:
                return g
        raise IngestError(f"unknown granularity {label!r}")

    @classmethod
    def from_seconds(cls, seconds: int) -> Optional["Granularity"]:
        for g in cls:
            if g.seconds == seconds:
                return g
        return None


GRANULARITIES_COARSE_FIRST = [
    Granularity.W1,
    Granularity.D1,
    Granularity.H1,
    Granularity.M15,
    Granularity.M1,
]


@dataclass(frozen=True)
class FlowRecord:
    ts: int
    site_id: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int
    packets: int
    bytes: int


@dataclass
class AggConfig:
    base_granularity: Granularity = Granularity.M15
    feature_sets: tuple[FeatureSet, ...] = tuple(FeatureSet)
    max_nodes: dict = field(default_factory=dict)
    rollup_granularities: tuple[Granularity, ...] = (Granularity.H1, Granularity.D1)
    insert_probability: float = DEFAULT_INSERT_PROBABILITY
    seed: int = 0
    watermark_bins: int = 2
    max_bad_fraction: float = 0.01

    def cap_for(self, fs: FeatureSet) -> int:
        if fs in self.max_nodes:
            return self.max_nodes[fs]
        if fs in (FeatureSet.SP, FeatureSet.DP):
            return DEFAULT_PORT_MAX_NODES
        return DEFAULT_MAX_NODES


@dataclass
class IngestReport:
    records_read: int = 0
    records_skipped: int = 0
    skip_reasons: dict = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.records_skipped += 1
        self.skip_reasons[reason] = self.skip_reasons.get(reason, 0) + 1

    def log_lines(self) -> list[str]:
        lines = [
            f"records_read={self.records_read}",
            f"records_skipped={self.records_skipped}",
        ]
        for reason, count in sorted(self.skip_reasons.items()):
            lines.append(f"skipped_{reason}={count}")
        return lines


FLOW_HEADER = "ts,site,src_ip,dst_ip,src_port,dst_port,proto,packets,bytes"
PACKET_HEADER = "ts_us,site,src_ip,dst_ip,src_port,dst_port,proto,frame_len"


def open_maybe_gzip(source) -> IO[bytes]:
    """Accept a path, raw bytes or a binary file object; sniff gzip by its
    magic bytes."""
    if isinstance(source, str):
        raw: IO[bytes] = open(source, "rb")
    elif isinstance(source, bytes):
        raw = io.BytesIO(source)
    else:
        raw = source
    if raw.seekable():
        head = raw.read(2)
        raw.seek(0)
        if head == b"\x1f\x8b":
            return gzip.open(raw, "rb")
        return raw
    data = raw.read()
    if data[:2] == b"\x1f\x8b":
        return gzip.open(io.BytesIO(data), "rb")
    return io.BytesIO(data)


def _parse_ip(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError("bad ip")
    value = 0
    for p in parts:
        octet = int(p)
        if octet > 255 or octet < 0:
            raise ValueError("bad ip")
        value = (value << 8) | octet
    return value


def _iter_csv(
    source,
    expected_header: str,
    report: IngestReport,
    max_bad_fraction: float,
) -> Iterator[list[str]]:
    stream = io.TextIOWrapper(open_maybe_gzip(source), encoding="utf-8", errors="replace")
    header = stream.readline().strip()
    if header != expected_header:
        raise FormatError(
            f"bad header: expected {expected_header!r}, got {header[:120]!r}"
        )
    ncols = expected_header.count(",") + 1
    for line in stream:
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != ncols:
            report.skip("bad_field_count")
            continue
        yield fields
    total = report.records_read + report.records_skipped
    if total and report.records_skipped / total > max_bad_fraction:
        raise IngestQualityError(
            f"{report.records_skipped}/{total} malformed lines exceeds "
            f"{max_bad_fraction:.2%}"
        )


def parse_flow_csv(
    source, report: Optional[IngestReport] = None, max_bad_fraction: float = 0.01
) -> Iterator[FlowRecord]:
    """Flow rows: one record per line, malformed lines counted and skipped."""
    report = report if report is not None else IngestReport()
    for f in _iter_csv(source, FLOW_HEADER, report, max_bad_fraction):
        try:
            rec = FlowRecord(
                ts=int(f[0]),
                site_id=int(f[1]),
                src_ip=_parse_ip(f[2]),
                dst_ip=_parse_ip(f[3]),
                src_port=int(f[4]),
                dst_port=int(f[5]),
                proto=int(f[6]),
                packets=int(f[7]),
                bytes=int(f[8]),
            )
            if not (
                0 <= rec.src_port < 65536
                and 0 <= rec.dst_port < 65536
                and 0 <= rec.proto < 256
                and 0 <= rec.site_id < SITE_ALL
                and rec.packets >= 1
                and rec.bytes >= 1
            ):
                raise ValueError("out of range")
        except ValueError:
            report.skip("bad_value")
            continue
        report.records_read += 1
        yield rec


def parse_packet_summaries(
    source, report: Optional[IngestReport] = None, max_bad_fraction: float = 0.01
) -> Iterator[FlowRecord]:
    """Packet rows: each packet becomes a record with packets=1."""
    report = report if report is not None else IngestReport()
    for f in _iter_csv(source, PACKET_HEADER, report, max_bad_fraction):
        try:
            rec = FlowRecord(
                ts=int(f[0]) // 1_000_000,
                site_id=int(f[1]),
                src_ip=_parse_ip(f[2]),
                dst_ip=_parse_ip(f[3]),
                src_port=int(f[4]),
                dst_port=int(f[5]),
                proto=int(f[6]),
                packets=1,
                bytes=int(f[7]),
            )
            if not (
                0 <= rec.src_port < 65536
                and 0 <= rec.dst_port < 65536
                and 0 <= rec.proto < 256
                and 0 <= rec.site_id < SITE_ALL
                and rec.bytes >= 1
            ):
                raise ValueError("out of range")
        except ValueError:
            report.skip("bad_value")
            continue
        report.records_read += 1
        yield rec


@dataclass(frozen=True)
class TreeKey:
    """Address of one stored tree: site, feature set, granularity, bin start."""

    site_id: int
    feature_set: FeatureSet
    granularity: Granularity
    start_ts: int

    def __post_init__(self):
        if self.start_ts % self.granularity.seconds != 0:
            raise IngestError(
                f"start_ts {self.start_ts} not aligned to {self.granularity.label}"
            )

    def __lt__(self, other):  # order by (site, fs, gran, ts) deterministically
        return (
            self.site_id,
            self.feature_set.fsid,
            self.granularity.seconds,
            self.start_ts,
        ) < (other.site_id, other.feature_set.fsid, other.granularity.seconds, other.start_ts)

    def text(self) -> str:
        return f"{self.site_id}-{self.feature_set.name}-{self.granularity.label}-{self.start_ts}"

    @classmethod
    def from_text(cls, text: str) -> "TreeKey":
        parts = text.split("-")
        if len(parts) != 4:
            raise IngestError(f"bad tree key {text!r}")
        return cls(
            site_id=int(parts[0]),
            feature_set=FeatureSet.from_name(parts[1]),
            granularity=Granularity.from_label(parts[2]),
            start_ts=int(parts[3]),
        )


class _BinBuilder:
    """Trees for one (site, bin): one per configured feature set."""

    def __init__(self, cfg: AggConfig, site: int, start: int):
        self.site = site
        self.start = start
        # Seeded per site, not per bin: steady traffic then samples the same
        # interior nodes bin after bin, which keeps per-site trees
        # structurally aligned and their time rollups compact.
        self.trees = {
            fs: Flowtree(
                fs,
                max_nodes=cfg.cap_for(fs),
                p=cfg.insert_probability,
                seed=(cfg.seed ^ (site * 0x9E3779B9)) & 0xFFFFFFFFFFFFFFFF,
            )
            for fs in cfg.feature_sets
        }

    def add(self, rec: FlowRecord) -> None:
        for fs, tree in self.trees.items():
            values = tuple(getattr(rec, f.label) for f in fs.features)
            tree.add3(FlowKey(fs, values, fs.widths), 1, rec.packets, rec.bytes)


def bin_and_build(
    records: Iterable[FlowRecord], cfg: AggConfig
) -> Iterator[tuple[TreeKey, Flowtree]]:
    """Partition records into half-open bins [start, start+g) per site and
    emit one tree per feature set and bin.

    Bins are flushed once the maximum timestamp seen moves past the
    configured watermark; records arriving later than that re-open a fresh
    builder for their bin, which the store merges on put.
    """
    gran = cfg.base_granularity
    size = gran.seconds
    open_bins: dict[tuple[int, int], _BinBuilder] = {}
    max_ts = None

    def flush(builder: _BinBuilder) -> Iterator[tuple[TreeKey, Flowtree]]:
        for fs, tree in sorted(builder.trees.items(), key=lambda kv: kv[0].fsid):
            yield TreeKey(builder.site, fs, gran, builder.start), tree

    for rec in records:
        start = (rec.ts // size) * size
        bkey = (rec.site_id, start)
        builder = open_bins.get(bkey)
        if builder is None:
            builder = _BinBuilder(cfg, rec.site_id, start)
            open_bins[bkey] = builder
        builder.add(rec)
        if max_ts is None or rec.ts > max_ts:
            max_ts = rec.ts
            horizon = ((max_ts // size) - cfg.watermark_bins) * size
            ripe = [k for k in open_bins if k[1] + size <= horizon]
            for k in sorted(ripe):
                yield from flush(open_bins.pop(k))
    for k in sorted(open_bins):
        yield from flush(open_bins.pop(k))


def rollup(
    inputs: list[tuple[TreeKey, Flowtree]],
    target: Granularity,
    cap: Optional[int] = None,
) -> tuple[TreeKey, Flowtree]:
    """Merge contiguous finer bins of one site/feature set into one
    target-granularity tree; missing sub-bins are fine (no traffic)."""
    if not inputs:
        raise IngestError("rollup needs at least one input tree")
    keys = [k for k, _ in inputs]
    fs = keys[0].feature_set
    site = keys[0].site_id
    g = keys[0].granularity
    for k in keys:
        if k.feature_set is not fs or k.site_id != site or k.granularity is not g:
            raise IngestError("rollup inputs must share site, feature set, granularity")
    if target.seconds % g.seconds != 0 or target.seconds <= g.seconds:
        raise WindowError(f"{target.label} is not a multiple of {g.label}")
    windows = {(k.start_ts // target.seconds) * target.seconds for k in keys}
    if len(windows) != 1:
        raise WindowError(f"inputs span {len(windows)} {target.label} windows")
    start = windows.pop()
    merged = merge_many([t for _, t in inputs], max_nodes=cap)
    return TreeKey(site, fs, target, start), merged


def sites_rollup(
    inputs: list[tuple[TreeKey, Flowtree]],
    cap: Optional[int] = None,
) -> tuple[TreeKey, Flowtree]:
    """Merge the same bin across sites under the reserved ALL site id."""
    if not inputs:
        raise IngestError("sites_rollup needs at least one input tree")
    keys = [k for k, _ in inputs]
    fs = keys[0].feature_set
    g = keys[0].granularity
    start = keys[0].start_ts
    for k in keys:
        if k.feature_set is not fs or k.granularity is not g or k.start_ts != start:
            raise WindowError("sites_rollup inputs must share bin, granularity, feature set")
    merged = merge_many([t for _, t in inputs], max_nodes=cap)
    return TreeKey(SITE_ALL, fs, g, start), merged
