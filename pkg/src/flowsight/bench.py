"""Benchmark harness: ten canned operator-task queries timed cold and hot.

Each template stands for one recurring operator task (aggregate range
stats, drill-down counting, traffic matrix, attack diagnosis, the
two-query super-spreader hunt, top-k, above-threshold, hierarchical heavy
hitters, heavy changers, and an exact 4-tuple lookup).  Templates bind to
a corpus day and derive their thresholds from the stored totals.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

from .flowagg import Granularity
from .flowdb import FlowDB
from .flowql import execute, parse
from .hierarchy import FeatureSet

GRAN_LEVELS = (Granularity.D1, Granularity.H1, Granularity.M15)


@dataclass
class Benchmark:
    number: int
    name: str
    queries: list[str]
    min_granularity: Granularity = Granularity.D1  # coarsest level it still runs at
    iterator_heavy: bool = False
    chained: bool = False  # second query derives from the first result

    def runs_at(self, level: Granularity) -> bool:
        return level.seconds <= self.min_granularity.seconds


def _fmt(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d %H:%M")


def _range(a: int, b_inclusive: int) -> str:
    return f"(time {_fmt(a)} to {_fmt(b_inclusive)})"


def build_suite(db: FlowDB, day_start: int, day_seconds: int = 86400) -> list[Benchmark]:
    day = _range(day_start, day_start + day_seconds - 60)
    hour0 = _range(day_start, day_start + 3540)
    hour1 = _range(day_start + 3600, day_start + 7140)
    attack_hour = _range(day_start + 3600, day_start + 7140)
    totals = execute(db, parse(f"SELECT pop FROM {day} WHERE site_id=ANY and src_ip=ANY"))
    day_bytes = totals.rows[0].bytes if totals.rows else 1
    day_flows = totals.rows[0].flows if totals.rows else 1
    t_matrix = max(1, day_bytes // 200)  # 0.5% of day bytes
    t_flows = max(1, day_flows // 200)
    tuple_q = _known_tuple_query(db, day)
    return [
        Benchmark(1, "aggregate_stats", [
            f"SELECT pop(any,byte) FROM {day} WHERE site_id=ANY and src_ip=10.1.0.0|16",
        ]),
        Benchmark(2, "drilldown_counting", [
            f"SELECT pop(any,flow,bin60) FROM {day} WHERE site_id=ANY and dst_port=53|16",
        ], min_granularity=Granularity.H1, iterator_heavy=True),
        Benchmark(3, "traffic_matrix", [
            f"SELECT above({t_matrix},any,byte) FROM {day} WHERE site_id=ANY and src_ip=ANY and dst_ip=ANY",
        ]),
        Benchmark(4, "ddos_diagnosis", [
            f"SELECT pop(any,byte,bin15) FROM {attack_hour} WHERE site_id=ANY and dst_port=123|16",
        ], min_granularity=Granularity.M15, iterator_heavy=True),
        Benchmark(5, "super_spreader", [
            f"SELECT top(1,any,flow,bin60) FROM {day} WHERE site_id=ANY and src_ip=ANY",
            f"SELECT top(10,any,flow) FROM {day} WHERE site_id=ANY and src_ip={{top_src}}|32 and dst_ip=ANY",
        ], min_granularity=Granularity.H1, iterator_heavy=True, chained=True),
        Benchmark(6, "top_k_ports", [
            f"SELECT top(10,any,byte) FROM {day} WHERE site_id=ANY and src_port=ANY",
        ]),
        Benchmark(7, "above_threshold", [
            f"SELECT above({t_flows},any,flow) FROM {day} WHERE site_id=ANY and dst_ip=ANY",
        ]),
        Benchmark(8, "hierarchical_heavy_hitters", [
            f"SELECT hhh(1) FROM {day} WHERE site_id=ANY and src_ip=ANY",
        ]),
        Benchmark(9, "heavy_changers", [
            f"SELECT hc(100,any,byte) FROM {hour0}{hour1} WHERE site_id=ANY and (dst_port=ANY or src_port=ANY)",
        ], min_granularity=Granularity.H1),
        Benchmark(10, "tuple_query", [tuple_q]),
    ]


def _known_tuple_query(db: FlowDB, day: str) -> str:
    """Pick a concrete stored 4-tuple so the lookup hits a real node."""
    try:
        probe = parse(
            f"SELECT top(1,any,flow) FROM {day} WHERE site_id=ANY and src_ip=ANY "
            "and dst_ip=ANY and src_port=ANY and dst_port=ANY"
        )
        rows = execute(db, probe).rows
    except Exception:
        rows = []
    if rows:
        si, di, sp, dp = rows[0].key_text.split(",")
        cond = f"src_ip={si} and dst_ip={di} and src_port={sp} and dst_port={dp}"
    else:
        cond = (
            "src_ip=10.1.7.7|32 and dst_ip=192.168.9.9|32 "
            "and src_port=443|16 and dst_port=40000|16"
        )
    return f"SELECT pop(any,byte) FROM {day} WHERE site_id=ANY and {cond}"


@dataclass
class BenchRow:
    benchmark: int
    name: str
    granularity: str
    mode: str  # cold | hot
    rep: int
    ms: float
    rows: int
    iterator_heavy: bool

    def as_csv(self) -> list:
        return [
            self.benchmark,
            self.name,
            self.granularity,
            self.mode,
            self.rep,
            f"{self.ms:.2f}",
            self.rows,
            int(self.iterator_heavy),
        ]


CSV_HEADER = ["benchmark", "name", "granularity", "mode", "rep", "ms", "rows", "iterator_heavy"]


def run_benchmark(
    db: FlowDB,
    bench: Benchmark,
    level: Granularity,
    workers: int = 1,
    timeout: float = 120.0,
) -> tuple[float, int]:
    """One timed execution; returns (wall ms, row count of the last query)."""
    started = time.monotonic()
    rows = 0
    binding = {}
    for text in bench.queries:
        if "{top_src}" in text:
            text = text.format(**binding)
        plan = parse(text)
        table = execute(db, plan, timeout=timeout, workers=workers, gran_cap=level)
        rows = len(table.rows)
        if bench.chained and table.rows and "{top_src}" not in text:
            binding["top_src"] = table.rows[0].key_text.split(",")[0].split("|")[0]
    return (time.monotonic() - started) * 1000.0, rows


def run_suite(
    db: FlowDB,
    suite: list[Benchmark],
    repetitions: int = 3,
    levels=GRAN_LEVELS,
    workers: int = 1,
) -> list[BenchRow]:
    out: list[BenchRow] = []
    for level in levels:
        for bench in suite:
            if not bench.runs_at(level):
                continue
            for rep in range(repetitions):
                db.clear_cache()
                ms, nrows = run_benchmark(db, bench, level, workers=workers)
                out.append(
                    BenchRow(bench.number, bench.name, level.label, "cold", rep, ms,
                             nrows, bench.iterator_heavy)
                )
                ms, nrows = run_benchmark(db, bench, level, workers=workers)
                out.append(
                    BenchRow(bench.number, bench.name, level.label, "hot", rep, ms,
                             nrows, bench.iterator_heavy)
                )
    return out


def write_csv(rows: list[BenchRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def summarize(rows: list[BenchRow]) -> dict[tuple[int, str, str], dict]:
    """(benchmark, granularity, mode) -> min/median/max milliseconds."""
    groups: dict[tuple[int, str, str], list[float]] = {}
    names: dict[int, str] = {}
    for row in rows:
        groups.setdefault((row.benchmark, row.granularity, row.mode), []).append(row.ms)
        names[row.benchmark] = row.name
    out = {}
    for key, vals in sorted(groups.items()):
        vals = sorted(vals)
        out[key] = {
            "name": names[key[0]],
            "min": vals[0],
            "median": vals[len(vals) // 2],
            "max": vals[-1],
        }
    return out
