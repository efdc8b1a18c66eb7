"""Deterministic synthetic flow corpus with planted anomalies.

Traffic is drawn from a global pool of "connections" (concrete 5-tuples):
every site reuses a shared head of the pool plus a couple of site-local
tuples, and each 15-minute bin oversamples its site pool, so bins saturate
and coarser rollups stay compact.  Two anomalies are planted on top:

* a reflection burst on port 123 toward one victim during a fixed
  30-minute window at one site (thousands of distinct sources), and
* one loud UDP src/dst pair sustained all day (a traffic-matrix hot cell).
"""

from __future__ import annotations

import gzip as gzip_mod
import json
import random
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .flowagg import FLOW_HEADER, FlowRecord
from .hierarchy import int_to_ip

DEFAULT_DAY_START = 1710374400  # 2024-03-14 00:00 UTC

SERVICE_PORTS = (
    443, 80, 53, 22, 25, 123, 993, 3074, 8080, 1900,
    110, 143, 465, 587, 3389, 5060, 8443, 179, 389, 636,
)

EPHEMERAL_BASE = 40000
EPHEMERAL_SPAN = 64


@dataclass
class CorpusSpec:
    sites: int = 50
    day_start: int = DEFAULT_DAY_START
    bins: int = 96
    bin_seconds: int = 900
    flows_per_bin: int = 150
    seed: int = 1234
    pool_shared: int = 28
    pool_per_site: int = 0
    attack_site: int = 3
    attack_start_bin: int = 5  # 01:15
    attack_bins: int = 2  # 30 minutes
    attack_sources: int = 2000
    attack_networks: int = 8
    attack_bytes_each: int = 4000

    def __post_init__(self):
        if self.flows_per_bin < self.pool_shared + self.pool_per_site:
            raise ValueError("flows_per_bin must cover the site connection pool")

    @property
    def attack_window(self) -> tuple[int, int]:
        a = self.day_start + self.attack_start_bin * self.bin_seconds
        return (a, a + self.attack_bins * self.bin_seconds)


@dataclass
class Connection:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    proto: int
    base_bytes: int


def _build_pool(spec: CorpusSpec) -> list[Connection]:
    """Global connection pool; index 0 is the planted heavy UDP pair."""
    rng = random.Random(spec.seed)
    pool: list[Connection] = []
    total = spec.pool_shared + spec.sites * spec.pool_per_site
    # clustered address space: a handful of /24s on either side
    src_nets = [0x0A010100, 0x0A010200, 0x0A020100, 0x0A020200]
    dst_nets = [0xC0A80100, 0xC0A80200, 0xAC100100]
    for i in range(total):
        service = SERVICE_PORTS[min(int(rng.paretovariate(1.0)) - 1, len(SERVICE_PORTS) - 1)]
        ephemeral = EPHEMERAL_BASE + rng.randrange(EPHEMERAL_SPAN)
        response = rng.random() < 0.5
        conn = Connection(
            src_ip=src_nets[rng.randrange(len(src_nets))] + rng.randrange(1, 255),
            dst_ip=dst_nets[rng.randrange(len(dst_nets))] + rng.randrange(1, 255),
            src_port=service if response else ephemeral,
            dst_port=ephemeral if response else service,
            proto=17 if service in (53, 123, 1900, 5060) else 6,
            base_bytes=int(rng.lognormvariate(6.5, 0.6)) + 60,
        )
        pool.append(conn)
    heavy = pool[0]
    heavy.src_ip = 0x0A010707  # 10.1.7.7
    heavy.dst_ip = 0xC0A80909  # 192.168.9.9
    heavy.src_port = 443
    heavy.dst_port = EPHEMERAL_BASE
    heavy.proto = 17
    heavy.base_bytes = 9000
    return pool


def _site_pool(spec: CorpusSpec, pool: list[Connection], site: int) -> list[Connection]:
    """Per-site view of the pool: the planted heavy pair stays rank one
    everywhere, the rest rotates so sites emphasize different connections
    without introducing site-local keys (rollups across sites stay small).
    Optional site-local tuples are appended when pool_per_site > 0."""
    shared = pool[: spec.pool_shared]
    rot = (site - 1) % max(1, len(shared) - 1)
    rotated = [shared[0]] + shared[1 + rot :] + shared[1 : 1 + rot]
    local_start = spec.pool_shared + (site - 1) * spec.pool_per_site
    return rotated + pool[local_start : local_start + spec.pool_per_site]


def _zipf_cum_weights(n: int, alpha: float = 1.0) -> list[float]:
    acc = 0.0
    out = []
    for i in range(1, n + 1):
        acc += 1.0 / (i ** alpha)
        out.append(acc)
    return out


def generate_records(spec: CorpusSpec) -> Iterator[FlowRecord]:
    """The full corpus, deterministic in the spec's seed.

    Records come out bin by bin (sites interleaved inside one bin), so
    binning watermarks never flush early.
    """
    pool = _build_pool(spec)
    site_pools = {s: _site_pool(spec, pool, s) for s in range(1, spec.sites + 1)}
    cum = _zipf_cum_weights(spec.pool_shared + spec.pool_per_site)
    attack_first = spec.attack_start_bin
    attack_last = spec.attack_start_bin + spec.attack_bins - 1
    for b in range(spec.bins):
        bin_start = spec.day_start + b * spec.bin_seconds
        for site in range(1, spec.sites + 1):
            rng = random.Random(spec.seed * 1_000_003 + site * 100_003 + b)
            pool_here = site_pools[site]
            # steady services are always on: one flow per connection per bin,
            # the rest of the bin's volume lands Zipf-style on the heavy ones
            conns = list(pool_here)
            conns.extend(
                rng.choices(pool_here, cum_weights=cum, k=spec.flows_per_bin - len(pool_here))
            )
            for conn in conns:
                size = max(60, int(conn.base_bytes * rng.uniform(0.7, 1.3)))
                yield FlowRecord(
                    ts=bin_start + rng.randrange(spec.bin_seconds),
                    site_id=site,
                    src_ip=conn.src_ip,
                    dst_ip=conn.dst_ip,
                    src_port=conn.src_port,
                    dst_port=conn.dst_port,
                    proto=conn.proto,
                    packets=size // 700 + 1,
                    bytes=size,
                )
            if site == spec.attack_site and attack_first <= b <= attack_last:
                arng = random.Random(spec.seed * 1_000_003 + 0x0A77ACC + b)
                per_net = (spec.attack_sources + spec.attack_networks - 1) // spec.attack_networks
                for i in range(spec.attack_sources):
                    # reflectors sit in a handful of /24s across the 85/8 space
                    net = 0x55000000 + (i // per_net) * 0x00081700
                    yield FlowRecord(
                        ts=bin_start + arng.randrange(spec.bin_seconds),
                        site_id=site,
                        src_ip=net + 1 + (i % per_net),
                        dst_ip=0xC0A800FE,  # 192.168.0.254, the victim
                        src_port=123,
                        dst_port=123,
                        proto=17,
                        packets=4,
                        bytes=spec.attack_bytes_each,
                    )


def ground_truth(spec: CorpusSpec) -> dict:
    """Facts tests and demo queries can rely on without re-deriving."""
    pool = _build_pool(spec)
    heavy = pool[0]
    a, b = spec.attack_window
    return {
        "day_start": spec.day_start,
        "day_end": spec.day_start + spec.bins * spec.bin_seconds,
        "sites": spec.sites,
        "bins": spec.bins,
        "bin_seconds": spec.bin_seconds,
        "attack": {
            "site": spec.attack_site,
            "window": [a, b],
            "bins": [a + i * spec.bin_seconds for i in range(spec.attack_bins)],
            "dst_port": 123,
            "victim": int_to_ip(0xC0A800FE),
            "sources": spec.attack_sources,
            "bytes": spec.attack_sources * spec.attack_bins * spec.attack_bytes_each,
        },
        "heavy_pair": {
            "src_ip": int_to_ip(heavy.src_ip),
            "dst_ip": int_to_ip(heavy.dst_ip),
            "src_port": heavy.src_port,
            "dst_port": heavy.dst_port,
            "proto": heavy.proto,
        },
        "seed": spec.seed,
    }


def record_to_csv(rec: FlowRecord) -> str:
    return (
        f"{rec.ts},{rec.site_id},{int_to_ip(rec.src_ip)},{int_to_ip(rec.dst_ip)},"
        f"{rec.src_port},{rec.dst_port},{rec.proto},{rec.packets},{rec.bytes}"
    )


def write_corpus(spec: CorpusSpec, csv_path: str, truth_path: Optional[str] = None,
                 compress: bool = False) -> dict:
    """Write the corpus as a flow CSV (optionally gzip) plus a truth JSON."""
    opener = gzip_mod.open if compress else open
    count = 0
    with opener(csv_path, "wt") as fh:
        fh.write(FLOW_HEADER + "\n")
        for rec in generate_records(spec):
            fh.write(record_to_csv(rec) + "\n")
            count += 1
    truth = ground_truth(spec)
    truth["records"] = count
    if truth_path:
        with open(truth_path, "w") as fh:
            json.dump(truth, fh, indent=2)
    return truth
