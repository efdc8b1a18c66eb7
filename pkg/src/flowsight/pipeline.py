"""End-to-end ingest and rollup passes connecting parsers, trees and store."""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .flowagg import (
    AggConfig,
    Granularity,
    IngestReport,
    SITE_ALL,
    TreeKey,
    bin_and_build,
    parse_flow_csv,
    parse_packet_summaries,
    rollup,
    sites_rollup,
)
from .flowdb import FlowDB

DIGEST_LOG = "ingested.log"


@dataclass
class IngestResult:
    report: IngestReport = field(default_factory=IngestReport)
    trees_written: int = 0
    files_skipped: int = 0
    seconds: float = 0.0

    def log_lines(self) -> list[str]:
        lines = self.report.log_lines()
        lines.append(f"trees_written={self.trees_written}")
        lines.append(f"files_skipped={self.files_skipped}")
        lines.append(f"wall_seconds={self.seconds:.3f}")
        return lines


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _seen_digests(db: FlowDB) -> set[str]:
    path = os.path.join(db.root, DIGEST_LOG)
    if not os.path.exists(path):
        return set()
    with open(path) as fh:
        return {line.split()[0] for line in fh if line.strip()}


def _record_digest(db: FlowDB, digest: str, source: str) -> None:
    with open(os.path.join(db.root, DIGEST_LOG), "a") as fh:
        fh.write(f"{digest} {source}\n")


def ingest_records(db: FlowDB, records: Iterable, cfg: AggConfig) -> int:
    """Bin a record stream and store every resulting tree; returns the
    number of trees written (late bins merge into what is already there)."""
    written = 0
    for key, tree in bin_and_build(records, cfg):
        db.put(key, tree)
        written += 1
    return written


def ingest_files(
    db: FlowDB,
    paths: list[str],
    cfg: AggConfig,
    kind: str = "flow",
    dedup: bool = False,
) -> IngestResult:
    """Ingest flow or packet-summary CSV files (gzip auto-detected)."""
    result = IngestResult()
    started = time.monotonic()
    parser = parse_flow_csv if kind == "flow" else parse_packet_summaries
    seen = _seen_digests(db) if dedup else set()
    for path in paths:
        digest = _file_digest(path) if dedup else None
        if dedup and digest in seen:
            result.files_skipped += 1
            continue
        records = parser(path, result.report, cfg.max_bad_fraction)
        result.trees_written += ingest_records(db, records, cfg)
        if dedup:
            _record_digest(db, digest, os.path.basename(path))
            seen.add(digest)
    result.seconds = time.monotonic() - started
    return result


@dataclass
class RollupResult:
    trees_written: int = 0
    trees_skipped: int = 0
    seconds: float = 0.0


def build_rollups(
    db: FlowDB,
    granularities: Optional[list[Granularity]] = None,
    cfg: Optional[AggConfig] = None,
) -> RollupResult:
    """Materialize missing coarser-granularity and all-sites trees.

    Per feature set: the finest stored granularity rolls up to each target,
    then every granularity gains one ALL tree per bin.  Existing trees are
    left alone, so a second run is a no-op.
    """
    cfg = cfg or AggConfig()
    targets = granularities or list(cfg.rollup_granularities)
    result = RollupResult()
    started = time.monotonic()
    for fs in db.feature_sets():
        cap = cfg.cap_for(fs)
        stored = db.granularities(fs)
        if not stored:
            continue
        base = stored[0]
        # time rollups per real site
        for target in sorted(targets, key=lambda g: g.seconds):
            if target.seconds <= base.seconds:
                continue
            source = _finest_source(db, fs, target, base)
            for site in db.sites():
                keys = db.range([site], fs, source, 0, 1 << 62)
                by_window: dict[int, list[TreeKey]] = {}
                for key in keys:
                    window = (key.start_ts // target.seconds) * target.seconds
                    by_window.setdefault(window, []).append(key)
                for window, group in sorted(by_window.items()):
                    out_key = TreeKey(site, fs, target, window)
                    if out_key in db:
                        result.trees_skipped += 1
                        continue
                    _, tree = rollup([(k, db.get(k)) for k in group], target, cap=cap)
                    db.put(out_key, tree, overwrite=True)
                    result.trees_written += 1
        # all-sites rollups at every granularity now present
        for gran in db.granularities(fs):
            keys = [
                k
                for k in db.range(None, fs, gran, 0, 1 << 62)
                if k.site_id != SITE_ALL
            ]
            by_bin: dict[int, list[TreeKey]] = {}
            for key in keys:
                by_bin.setdefault(key.start_ts, []).append(key)
            for start, group in sorted(by_bin.items()):
                out_key = TreeKey(SITE_ALL, fs, gran, start)
                if out_key in db:
                    result.trees_skipped += 1
                    continue
                _, tree = sites_rollup([(k, db.get(k)) for k in group], cap=cap)
                db.put(out_key, tree, overwrite=True)
                result.trees_written += 1
    result.seconds = time.monotonic() - started
    return result


def _finest_source(db: FlowDB, fs, target: Granularity, base: Granularity) -> Granularity:
    """Roll up from the coarsest stored granularity that still divides the
    target (building 1d from 1h beats re-merging 96 base trees)."""
    best = base
    for gran in db.granularities(fs):
        if gran.seconds < target.seconds and target.seconds % gran.seconds == 0:
            if gran.seconds > best.seconds:
                best = gran
    return best
