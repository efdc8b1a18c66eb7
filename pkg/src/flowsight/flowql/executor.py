"""Query execution: fan out mini-queries over site units and time windows,
merge the fetched trees, dispatch the operator, assemble deterministic rows."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..hierarchy import FeatureSet, FlowKey, matches_pattern, render_key
from ..flowdb import FlowDB
from ..flowtree import Flowtree, PopReport, heavy_changers, merge_many
from .parser import QueryPlan, SemanticError
from .planner import (
    DEFAULT_FEATURE_SET,
    Cover,
    MiniQuery,
    cover_window,
    resolve_minis,
    site_units,
    windows_for,
)

DEFAULT_TIMEOUT = 60.0


@dataclass
class ResultRow:
    bin_ts: int
    site: str
    key: FlowKey
    key_text: str
    flows: int
    packets: int
    bytes: int
    exact: bool

    def value(self, counter: str) -> int:
        return getattr(self, counter)

    def as_dict(self) -> dict:
        return {
            "bin": self.bin_ts,
            "site": self.site,
            "key": self.key_text,
            "flows": self.flows,
            "packets": self.packets,
            "bytes": self.bytes,
            "exact": self.exact,
        }


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    counter: str = "flows"
    elapsed_ms: float = 0.0
    truncated: bool = False
    trees_fetched: int = 0
    merges: int = 0

    def as_dicts(self) -> list[dict]:
        return [r.as_dict() for r in self.rows]

    def meta(self) -> dict:
        return {
            "elapsed_ms": round(self.elapsed_ms, 3),
            "rows": len(self.rows),
            "counter": self.counter,
            "trees_fetched": self.trees_fetched,
            "merges": self.merges,
            "truncated": self.truncated,
            "warnings": self.warnings,
        }


class QueryTimeout(Exception):
    pass


def _site_rank(label: str):
    if label == "ALL":
        return (0, 0)
    try:
        return (1, int(label))
    except ValueError:  # pragma: no cover - labels are ALL or numeric
        return (2, 0)


def _grain_filter(mini: MiniQuery) -> Callable[[FlowKey], bool]:
    """Rows for top/hc land on fully-specified values of the constrained
    features (concrete ports, addresses, tuples), inside the pattern."""
    fs = mini.feature_set
    widths = fs.widths
    named_idx = [i for i, f in enumerate(fs.features) if f.label in mini.named]
    pattern = mini.pattern

    def ok(key: FlowKey) -> bool:
        for i in named_idx:
            if key.masks[i] != widths[i]:
                return False
        return matches_pattern(key, pattern)

    return ok


class _Execution:
    def __init__(
        self,
        db: FlowDB,
        plan: QueryPlan,
        default_fs: FeatureSet,
        timeout: float,
        workers: int,
        gran_cap=None,
    ):
        self.db = db
        self.plan = plan
        self.default_fs = default_fs
        self.gran_cap = gran_cap
        self.deadline = time.monotonic() + timeout
        self.workers = max(1, workers)
        self.table = ResultTable(counter=plan.select.counter)
        self._seen: set[tuple[int, str, FlowKey]] = set()

    def out_of_time(self) -> bool:
        return time.monotonic() > self.deadline

    def load(self, cover: Cover) -> Optional[Flowtree]:
        if not cover.keys:
            return None
        if self.workers > 1 and len(cover.keys) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                trees = list(pool.map(self.db.get, cover.keys))
        else:
            trees = [self.db.get(k) for k in cover.keys]
        self.table.trees_fetched += len(trees)
        if len(trees) == 1:
            return trees[0]
        self.table.merges += len(trees) - 1
        return merge_many(trees)

    def emit(self, bin_ts: int, site: str, reports: list[PopReport]) -> None:
        for rep in reports:
            ident = (bin_ts, site, rep.key)
            if ident in self._seen:
                continue
            self._seen.add(ident)
            self.table.rows.append(
                ResultRow(
                    bin_ts=bin_ts,
                    site=site,
                    key=rep.key,
                    key_text=render_key(rep.key),
                    flows=rep.pop.flows,
                    packets=rep.pop.packets,
                    bytes=rep.pop.bytes,
                    exact=rep.exact,
                )
            )

    def dispatch(self, tree: Flowtree, mini: MiniQuery) -> list[PopReport]:
        select = self.plan.select
        if select.kind == "pop":
            return [tree.query(mini.pattern)]
        if select.kind == "star":
            return tree.subtree_query(mini.pattern)
        if select.kind == "above":
            return [
                r
                for r in tree.above_t(select.threshold, select.counter)
                if matches_pattern(r.key, mini.pattern)
            ]
        if select.kind == "top":
            return tree.top_k(select.k, select.counter, key_filter=_grain_filter(mini))
        if select.kind == "hhh":
            return [
                r
                for r in tree.hhh(select.percent / 100.0)
                if matches_pattern(r.key, mini.pattern)
            ]
        raise SemanticError(f"operator {select.kind} not executable here")

    def run(self) -> ResultTable:
        started = time.monotonic()
        plan = self.plan
        select = plan.select
        if select.proto_scope != "any":
            self.table.warnings.append(
                f"protocol scope {select.proto_scope!r} is not recorded in stored "
                "summaries; rows are not filtered by protocol"
            )
        for mini in resolve_minis(plan, self.default_fs):
            if mini.empty:
                self.table.warnings.append(
                    f"mini-query {mini.describe()} is unsatisfiable"
                )
                continue
            units = site_units(self.db, mini)
            if not units:
                self.table.warnings.append("no sites match the site_id condition")
                continue
            for label, site_id in units:
                if self.truncate_if_needed():
                    break
                if select.kind == "hc":
                    self.run_heavy_changer(mini, label, site_id)
                    continue
                for a, b in windows_for(plan):
                    if self.truncate_if_needed():
                        break
                    cover = cover_window(self.db, mini, site_id, a, b, self.gran_cap)
                    if cover.gaps:
                        self.note_gaps(cover)
                    tree = self.load(cover)
                    if tree is None:
                        continue
                    self.emit(a, label, self.dispatch(tree, mini))
        self.table.rows.sort(
            key=lambda r: (
                r.bin_ts,
                _site_rank(r.site),
                -r.value(self.table.counter),
                r.key.level,
                r.key.sort_token(),
            )
        )
        self.table.elapsed_ms = (time.monotonic() - started) * 1000.0
        return self.table

    def run_heavy_changer(self, mini: MiniQuery, label: str, site_id) -> None:
        covers = [
            cover_window(self.db, mini, site_id, a, b, self.gran_cap)
            for a, b in self.plan.ranges
        ]
        for cover in covers:
            if cover.gaps:
                self.note_gaps(cover)
        t1 = self.load(covers[0])
        t2 = self.load(covers[1])
        if t1 is None and t2 is None:
            return
        fs = mini.feature_set
        if t1 is None:
            t1 = Flowtree(fs)
        if t2 is None:
            t2 = Flowtree(fs)
        reports = heavy_changers(
            t1, t2, self.plan.select.k, self.plan.select.counter,
            key_filter=_grain_filter(mini),
        )
        self.emit(self.plan.ranges[0][0], label, reports)

    def note_gaps(self, cover: Cover) -> None:
        for ga, gb in cover.gaps:
            self.table.warnings.append(
                f"no data for site={cover.site_label} in [{ga}, {gb})"
            )

    def truncate_if_needed(self) -> bool:
        if self.out_of_time():
            if not self.table.truncated:
                self.table.truncated = True
                self.table.warnings.append("query timed out; results are partial")
            return True
        return False


def execute(
    db: FlowDB,
    plan: QueryPlan,
    default_fs: FeatureSet = DEFAULT_FEATURE_SET,
    timeout: float = DEFAULT_TIMEOUT,
    workers: int = 1,
    gran_cap=None,
) -> ResultTable:
    return _Execution(db, plan, default_fs, timeout, workers, gran_cap).run()
