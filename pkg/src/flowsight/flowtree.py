"""Bounded self-adjusting hierarchical summary trees.

One tree summarizes a stream of flows for a single feature set.  Every
node holds the complementary popularity (comp_pop): the traffic not
covered by any current child.  Pruning a node pushes its contribution to
its parent, so the sum of all comp_pop counters is conserved across every
operation and always equals the inserted totals.
"""

from __future__ import annotations

import heapq
import random
import struct
import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Optional

from .hierarchy import (
    FeatureSet,
    FeatureSetMismatch,
    FlowKey,
    fast_parent,
    is_ancestor,
    key_from_flow,
    matches_pattern,
    next_parent,
    root_key,
)

U64_MAX = 0xFFFFFFFFFFFFFFFF

DEFAULT_MAX_NODES = 40_000
DEFAULT_PORT_MAX_NODES = 10_000
DEFAULT_INSERT_PROBABILITY = 0.3
MIN_CAPACITY = 16

# Auto-compression aims below the cap so compressions amortize.
COMPRESS_TARGET_RATIO = 0.9


class FlowtreeError(Exception):
    pass


class CounterOverflow(FlowtreeError):
    """A 64-bit counter would wrap; the addition saturates and reports."""


class RootDeletion(FlowtreeError):
    pass


class KeyNotFound(FlowtreeError):
    pass


class DecodeError(FlowtreeError):
    """Base for all serialized-tree decoding failures."""


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class ChecksumMismatch(DecodeError):
    pass


class MalformedTree(DecodeError):
    pass


class Counters:
    """Flow, packet and byte counts with saturating u64 arithmetic."""

    __slots__ = ("flows", "packets", "bytes")

    def __init__(self, flows: int = 0, packets: int = 0, bytes: int = 0):
        self.flows = flows
        self.packets = packets
        self.bytes = bytes

    def copy(self) -> "Counters":
        return Counters(self.flows, self.packets, self.bytes)

    def iadd(self, other: "Counters") -> None:
        f = self.flows + other.flows
        p = self.packets + other.packets
        b = self.bytes + other.bytes
        if f > U64_MAX or p > U64_MAX or b > U64_MAX:
            self.flows = min(f, U64_MAX)
            self.packets = min(p, U64_MAX)
            self.bytes = min(b, U64_MAX)
            raise CounterOverflow("counter saturated at 2^64-1")
        self.flows, self.packets, self.bytes = f, p, b

    def add3(self, flows: int, packets: int, bytes_: int) -> None:
        f = self.flows + flows
        p = self.packets + packets
        b = self.bytes + bytes_
        if f > U64_MAX or p > U64_MAX or b > U64_MAX:
            self.flows = min(f, U64_MAX)
            self.packets = min(p, U64_MAX)
            self.bytes = min(b, U64_MAX)
            raise CounterOverflow("counter saturated at 2^64-1")
        self.flows, self.packets, self.bytes = f, p, b

    def get(self, counter: str) -> int:
        return getattr(self, counter)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.flows, self.packets, self.bytes)

    def is_zero(self) -> bool:
        return self.flows == 0 and self.packets == 0 and self.bytes == 0

    def __eq__(self, other) -> bool:
        return isinstance(other, Counters) and self.as_tuple() == other.as_tuple()

    def __repr__(self) -> str:
        return f"Counters(flows={self.flows}, packets={self.packets}, bytes={self.bytes})"


COUNTER_NAMES = ("flows", "packets", "bytes")


@dataclass
class PopReport:
    """One answer row about a key: subtree popularity and node-local share.

    `exact` is True when the key is a tree node; estimated answers also
    carry the lower bound derived from covered children.
    """

    key: FlowKey
    pop: Counters
    comp_pop: Counters
    exact: bool
    lower: Optional[Counters] = None


class _Node:
    __slots__ = ("key", "comp", "parent", "children")

    def __init__(self, key: FlowKey, comp: Counters, parent: Optional["_Node"]):
        self.key = key
        self.comp = comp
        self.parent = parent
        self.children: set["_Node"] = set()


class Flowtree:
    """Bounded-size summary tree over one feature set.

    Interior nodes on the path to a new key are materialized with
    probability `p` (the key itself is always inserted), which keeps the
    growth rate of internal nodes in check.  Whenever the node count
    exceeds `max_nodes`, the tree compresses itself back below the cap.
    """

    def __init__(
        self,
        feature_set: FeatureSet,
        max_nodes: int = DEFAULT_MAX_NODES,
        p: float = DEFAULT_INSERT_PROBABILITY,
        seed: int = 0,
    ):
        if max_nodes < MIN_CAPACITY:
            raise FlowtreeError(f"max_nodes must be >= {MIN_CAPACITY}")
        if not 0.0 < p <= 1.0:
            raise FlowtreeError("insert probability must be in (0, 1]")
        self.feature_set = feature_set
        self.max_nodes = int(max_nodes)
        # p is carried in micro-units on the wire; quantize up front so a
        # round-trip preserves it exactly.
        self.p = max(1, round(p * 1_000_000)) / 1_000_000
        self.seed = int(seed) & U64_MAX
        self._rng = random.Random(self.seed)
        self.total = Counters()
        root = _Node(root_key(feature_set), Counters(), None)
        self._nodes: dict[FlowKey, _Node] = {root.key: root}
        self._root = root
        self.compressions = 0

    # -- basic introspection ------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def root(self) -> FlowKey:
        return self._root.key

    def __contains__(self, key: FlowKey) -> bool:
        return key in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def keys(self) -> Iterator[FlowKey]:
        return iter(self._nodes)

    def comp_pop(self, key: FlowKey) -> Counters:
        return self._nodes[key].comp.copy()

    def items(self) -> Iterator[tuple[FlowKey, Counters]]:
        for key, node in self._nodes.items():
            yield key, node.comp

    def parent_of(self, key: FlowKey) -> Optional[FlowKey]:
        node = self._nodes[key]
        return node.parent.key if node.parent is not None else None

    def children_of(self, key: FlowKey) -> list[FlowKey]:
        node = self._nodes[key]
        return sorted((c.key for c in node.children), key=lambda k: (k.level, k.sort_token()))

    # -- construction -------------------------------------------------------

    def _find_parent(self, key: FlowKey) -> _Node:
        """Nearest existing ancestor: walk the chain until a node is hit."""
        cur = key
        while True:
            cur = fast_parent(cur)
            node = self._nodes.get(cur)
            if node is not None:
                return node
            if cur.level == 0:  # pragma: no cover - root always present
                return self._root

    def _attach(self, key: FlowKey, comp: Counters) -> _Node:
        """Insert a node, linking it under its nearest ancestor and pulling
        down any of that ancestor's children the new node covers."""
        return self._attach_under(key, self._find_parent(key), comp)

    def _attach_under(self, key: FlowKey, parent: _Node, comp: Counters) -> _Node:
        node = _Node(key, comp, parent)
        if key.masks != key.fs.widths:  # full-mask keys cannot cover anything
            moved = [c for c in parent.children if is_ancestor(key, c.key)]
            for child in moved:
                parent.children.discard(child)
                child.parent = node
                node.children.add(child)
        parent.children.add(node)
        self._nodes[key] = node
        return node

    def add(self, key: FlowKey, stats: Counters) -> None:
        """Insert or update a key; returns nothing, updates totals."""
        self.add3(key, stats.flows, stats.packets, stats.bytes)

    def add3(self, key: FlowKey, flows: int, packets: int, bytes_: int) -> None:
        if key.fs is not self.feature_set:
            raise FeatureSetMismatch(
                f"key is {key.fs.name}, tree is {self.feature_set.name}"
            )
        node = self._nodes.get(key)
        if node is not None:
            node.comp.add3(flows, packets, bytes_)
            self.total.add3(flows, packets, bytes_)
            return
        # New key: collect the chain up to the first existing ancestor and
        # materialize a random subset of the intermediate hops.
        chain: list[FlowKey] = []
        nodes = self._nodes
        cur = key
        while True:
            cur = fast_parent(cur)
            anchor = nodes.get(cur)
            if anchor is not None:
                break
            chain.append(cur)
        rng = self._rng
        p = self.p
        if p >= 1.0:
            picked = chain
        else:
            picked = [k for k in chain if rng.random() < p]
        # Insert top-down so every node lands directly on its final parent.
        parent = anchor
        for k in reversed(picked):
            parent = self._attach_under(k, parent, Counters())
        self._attach_under(key, parent, Counters(flows, packets, bytes_))
        self.total.add3(flows, packets, bytes_)
        if len(self._nodes) > self.max_nodes:
            self.compress_to_capacity(max(MIN_CAPACITY, int(self.max_nodes * COMPRESS_TARGET_RATIO)))

    # -- stats and pruning ----------------------------------------------------

    def _postorder(self) -> list[_Node]:
        """Children before parents.  Sibling order is unspecified; every
        consumer's result is independent of it (sums and threshold tests
        commute), so no sorting is spent here."""
        order: list[_Node] = []
        stack: list[_Node] = [self._root]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(node.children)
        order.reverse()
        return order

    def _pops(self) -> dict[FlowKey, Counters]:
        """Subtree popularity per node in one bottom-up pass."""
        pops: dict[FlowKey, Counters] = {}
        for node in self._postorder():
            acc = node.comp.copy()
            for child in node.children:
                c = pops[child.key]
                acc.add3(c.flows, c.packets, c.bytes)
            pops[node.key] = acc
        return pops

    def _pop_flows(self) -> dict[FlowKey, int]:
        """Flows-only subtree sums; the cheap pass pruning decisions need."""
        pops: dict[FlowKey, int] = {}
        for node in self._postorder():
            acc = node.comp.flows
            for child in node.children:
                acc += pops[child.key]
            pops[node.key] = acc
        return pops

    def stats(self) -> dict[FlowKey, PopReport]:
        pops = self._pops()
        return {
            key: PopReport(key=key, pop=pops[key], comp_pop=node.comp.copy(), exact=True)
            for key, node in self._nodes.items()
        }

    def delete_node(self, key: FlowKey) -> None:
        node = self._nodes.get(key)
        if node is None:
            raise KeyNotFound(f"{key!r} not in tree")
        if node is self._root:
            raise RootDeletion("cannot delete the root")
        self._delete(node)

    def _delete(self, node: _Node) -> None:
        parent = node.parent
        parent.comp.iadd(node.comp)
        parent.children.discard(node)
        for child in node.children:
            child.parent = parent
            parent.children.add(child)
        node.children.clear()
        del self._nodes[node.key]

    def compress(self, thresh_comp_pop: int, thresh_pop: int) -> int:
        """Prune unpopular nodes, thresholds measured on the flows counter.

        Leaves go when comp_pop < thresh_comp_pop; interior nodes when both
        comp_pop < thresh_comp_pop and pop < thresh_pop.  Processing is
        bottom-up so newly exposed leaves fall in the same pass.  Returns
        the number of deleted nodes.
        """
        if thresh_comp_pop <= 0 and thresh_pop <= 0:
            return 0
        pops = self._pop_flows()
        deleted = 0
        root = self._root
        for node in self._postorder():
            if node is root:
                continue
            if not node.children:
                if node.comp.flows < thresh_comp_pop:
                    self._delete(node)
                    deleted += 1
            elif node.comp.flows < thresh_comp_pop and pops[node.key] < thresh_pop:
                self._delete(node)
                deleted += 1
        return deleted

    def compress_to_capacity(self, target: int) -> None:
        """Prune until at most `target` nodes remain.

        The comp threshold is read off the sorted comp_pop distribution
        (smallest value whose survivor estimate fits), doubling both
        thresholds whenever a pass leaves the tree over target.
        """
        if target < MIN_CAPACITY:
            raise FlowtreeError(f"target must be >= {MIN_CAPACITY}")
        if len(self._nodes) <= target:
            return
        excess = len(self._nodes) - target
        flows_sorted = sorted(n.comp.flows for n in self._nodes.values())
        thresh = flows_sorted[excess - 1] + 1
        while len(self._nodes) > target:
            self.compress(thresh, 2 * thresh)
            self.compressions += 1
            thresh *= 2

    # -- queries --------------------------------------------------------------

    def _subtree_pops(self, top: _Node) -> dict[FlowKey, Counters]:
        order: list[_Node] = []
        stack = [top]
        while stack:
            node = stack.pop()
            order.append(node)
            stack.extend(node.children)
        pops: dict[FlowKey, Counters] = {}
        for node in reversed(order):
            acc = node.comp.copy()
            for child in node.children:
                c = pops[child.key]
                acc.add3(c.flows, c.packets, c.bytes)
            pops[node.key] = acc
        return pops

    def query(self, key: FlowKey) -> PopReport:
        """Exact answer for present keys, bounded estimate otherwise."""
        if key.fs is not self.feature_set:
            raise FeatureSetMismatch(
                f"key is {key.fs.name}, tree is {self.feature_set.name}"
            )
        node = self._nodes.get(key)
        if node is not None:
            pops = self._subtree_pops(node)
            return PopReport(key=key, pop=pops[key], comp_pop=node.comp.copy(), exact=True)
        anchor = self._find_parent(key)
        pops = self._subtree_pops(anchor)
        lower = Counters()
        covered = Counters()
        for child in anchor.children:
            cpop = pops[child.key]
            if matches_pattern(child.key, key):
                lower.add3(cpop.flows, cpop.packets, cpop.bytes)
            else:
                covered.add3(cpop.flows, cpop.packets, cpop.bytes)
        anchor_pop = pops[anchor.key]
        est_a = Counters(
            anchor_pop.flows - covered.flows,
            anchor_pop.packets - covered.packets,
            anchor_pop.bytes - covered.bytes,
        )
        est_b = Counters(
            anchor.comp.flows + lower.flows,
            anchor.comp.packets + lower.packets,
            anchor.comp.bytes + lower.bytes,
        )
        estimate = Counters(
            min(est_a.flows, est_b.flows),
            min(est_a.packets, est_b.packets),
            min(est_a.bytes, est_b.bytes),
        )
        return PopReport(key=key, pop=estimate, comp_pop=anchor.comp.copy(), exact=False, lower=lower)

    def subtree_query(self, pattern: FlowKey) -> list[PopReport]:
        """All nodes at or below the pattern, with stats."""
        if pattern.fs is not self.feature_set:
            raise FeatureSetMismatch(
                f"pattern is {pattern.fs.name}, tree is {self.feature_set.name}"
            )
        pops = self._pops()
        out = [
            PopReport(key=key, pop=pops[key], comp_pop=node.comp.copy(), exact=True)
            for key, node in self._nodes.items()
            if matches_pattern(key, pattern)
        ]
        out.sort(key=lambda r: (r.key.level, r.key.sort_token()))
        return out

    def drill_down(self, key: FlowKey) -> list[PopReport]:
        node = self._nodes.get(key)
        if node is None:
            raise KeyNotFound(f"{key!r} not in tree")
        pops = self._pops()
        out = [
            PopReport(key=c.key, pop=pops[c.key], comp_pop=c.comp.copy(), exact=True)
            for c in node.children
        ]
        out.sort(key=lambda r: (r.key.level, r.key.sort_token()))
        return out

    def above_t(self, t: int, counter: str = "flows") -> list[PopReport]:
        """Nodes at any level whose subtree popularity strictly exceeds t."""
        if t < 0:
            raise FlowtreeError("threshold must be >= 0")
        pops = self._pops()
        out = [
            PopReport(key=key, pop=pops[key], comp_pop=node.comp.copy(), exact=True)
            for key, node in self._nodes.items()
            if pops[key].get(counter) > t
        ]
        out.sort(key=lambda r: (-r.pop.get(counter), -r.key.level, r.key.sort_token()))
        return out

    def top_k(
        self,
        k: int,
        counter: str = "flows",
        key_filter: Optional[Callable[[FlowKey], bool]] = None,
    ) -> list[PopReport]:
        """Highest adjusted popularities, largest first.

        Extracting a node subtracts its adjusted counters from every
        ancestor before the next extraction, so nested entries do not
        double-report.  Ties break deeper-level-first, then key order.
        `key_filter` restricts which extractions are reported (the
        adjustment bookkeeping still covers the whole tree).
        """
        if k < 1:
            raise FlowtreeError("k must be >= 1")
        pops = self._pops()
        work: dict[FlowKey, list[int]] = {
            key: [c.flows, c.packets, c.bytes] for key, c in pops.items()
        }
        idx = COUNTER_NAMES.index(counter)
        seq = 0
        heap = []
        for key, vals in work.items():
            heap.append((-vals[idx], -key.level, key.sort_token(), seq, key))
            seq += 1
        heapq.heapify(heap)
        done: set[FlowKey] = set()
        out: list[PopReport] = []
        while heap and len(out) < k:
            negv, _, _, _, key = heapq.heappop(heap)
            if key in done:
                continue
            vals = work[key]
            if -negv != vals[idx]:
                continue  # stale entry
            done.add(key)
            node = self._nodes[key]
            anc = node.parent
            while anc is not None:
                avals = work[anc.key]
                avals[0] -= vals[0]
                avals[1] -= vals[1]
                avals[2] -= vals[2]
                if anc.key not in done:
                    seq += 1
                    heapq.heappush(
                        heap,
                        (-avals[idx], -anc.key.level, anc.key.sort_token(), seq, anc.key),
                    )
                anc = anc.parent
            if key_filter is None or key_filter(key):
                out.append(
                    PopReport(
                        key=key,
                        pop=Counters(*vals),
                        comp_pop=node.comp.copy(),
                        exact=True,
                    )
                )
        return out

    def hhh(self, phi: float) -> list[PopReport]:
        """Hierarchical heavy hitters at fraction `phi` of total flows.

        A node qualifies when its residual popularity (subtree flows not
        already claimed by a qualifying descendant) exceeds phi * total.
        """
        if not 0.0 < phi < 1.0:
            raise FlowtreeError("phi must be in (0, 1)")
        threshold = phi * self.total.flows
        residual: dict[FlowKey, list[int]] = {}
        out: list[PopReport] = []
        for node in self._postorder():
            acc = [node.comp.flows, node.comp.packets, node.comp.bytes]
            for child in node.children:
                cres = residual[child.key]
                acc[0] += cres[0]
                acc[1] += cres[1]
                acc[2] += cres[2]
            if acc[0] > threshold:
                out.append(
                    PopReport(
                        key=node.key,
                        pop=Counters(*acc),
                        comp_pop=node.comp.copy(),
                        exact=True,
                    )
                )
                residual[node.key] = [0, 0, 0]
            else:
                residual[node.key] = acc
        out.sort(key=lambda r: (-r.pop.flows, -r.key.level, r.key.sort_token()))
        return out

    def rescale(self, factor) -> None:
        """Multiply every comp_pop counter by a positive rational factor,
        rounding half up; totals are recomputed from the scaled counters."""
        frac = Fraction(factor)
        if frac <= 0:
            raise FlowtreeError("rescale factor must be > 0")
        num, den = frac.numerator, frac.denominator
        total = Counters()
        for node in self._nodes.values():
            c = node.comp
            c.flows = (2 * c.flows * num + den) // (2 * den)
            c.packets = (2 * c.packets * num + den) // (2 * den)
            c.bytes = (2 * c.bytes * num + den) // (2 * den)
            if c.flows > U64_MAX or c.packets > U64_MAX or c.bytes > U64_MAX:
                raise CounterOverflow("rescale saturated a counter")
            total.iadd(c)
        self.total = total

    # -- bulk loading (merge, decode) ------------------------------------------

    def _bulk_load(self, entries: dict[FlowKey, Counters], total: Counters) -> None:
        """Replace contents with the given key -> comp_pop map; parent and
        child links are reconstructed from the key set alone."""
        rk = root_key(self.feature_set)
        nodes: dict[FlowKey, _Node] = {}
        for key, comp in entries.items():
            nodes[key] = _Node(key, comp, None)
        if rk not in nodes:
            nodes[rk] = _Node(rk, Counters(), None)
        self._nodes = nodes
        self._root = nodes[rk]
        for key in sorted(nodes, key=lambda k: (k.level, k.sort_token())):
            if key is rk or key == rk:
                continue
            node = nodes[key]
            cur = key
            while True:
                cur = fast_parent(cur)
                parent = nodes.get(cur)
                if parent is not None:
                    node.parent = parent
                    parent.children.add(node)
                    break
        self.total = total


def build(
    records: Iterable,
    fs: FeatureSet,
    max_nodes: int = DEFAULT_MAX_NODES,
    p: float = DEFAULT_INSERT_PROBABILITY,
    seed: int = 0,
) -> Flowtree:
    """Summarize a stream of flow records into one tree.

    Each record contributes one flow, its packet count and its byte count
    to the leaf key projected from the record.
    """
    tree = Flowtree(fs, max_nodes=max_nodes, p=p, seed=seed)
    widths = fs.widths
    features = fs.features
    for rec in records:
        values = tuple(getattr(rec, f.label) for f in features)
        tree.add3(FlowKey(fs, values, widths), 1, rec.packets, rec.bytes)
    return tree


def merge_many(
    trees: list[Flowtree],
    max_nodes: Optional[int] = None,
    compress: bool = True,
) -> Flowtree:
    """Union of several trees of one feature set.

    Shared keys sum their comp_pop counters; keys missing from a tree
    contribute zero.  Insertion is deterministic (no probabilistic hops)
    and a single final compression brings the result under the cap, so a
    pairwise reduction in any order produces the same key to comp_pop map.
    """
    if not trees:
        raise FlowtreeError("merge_many needs at least one tree")
    fs = trees[0].feature_set
    for t in trees[1:]:
        if t.feature_set is not fs:
            raise FeatureSetMismatch(f"{t.feature_set.name} vs {fs.name}")
    cap = max_nodes if max_nodes is not None else max(t.max_nodes for t in trees)
    out = Flowtree(fs, max_nodes=cap, p=trees[0].p, seed=trees[0].seed)
    entries: dict[FlowKey, Counters] = {}
    total = Counters()
    for t in trees:
        total.iadd(t.total)
        for key, comp in t.items():
            have = entries.get(key)
            if have is None:
                entries[key] = comp.copy()
            else:
                have.iadd(comp)
    out._bulk_load(entries, total)
    if compress and out.node_count > cap:
        out.compress_to_capacity(cap)
    return out


def merge(t1: Flowtree, t2: Flowtree) -> Flowtree:
    return merge_many([t1, t2])


def diff(t1: Flowtree, t2: Flowtree) -> Flowtree:
    """Magnitude-of-change tree: union both, then replace every counter of
    a key present in t2 by |merged - 2 * t2|.  Keys only in t1 keep their
    counters; diff(T, T) is all zeros."""
    if t1.feature_set is not t2.feature_set:
        raise FeatureSetMismatch(f"{t1.feature_set.name} vs {t2.feature_set.name}")
    merged = merge_many([t1, t2], compress=False)
    total = Counters()
    for key, comp in merged.items():
        if key in t2:
            other = t2.comp_pop(key)
            comp.flows = abs(comp.flows - 2 * other.flows)
            comp.packets = abs(comp.packets - 2 * other.packets)
            comp.bytes = abs(comp.bytes - 2 * other.bytes)
        total.iadd(comp)
    merged.total = total
    if merged.node_count > merged.max_nodes:
        merged.compress_to_capacity(merged.max_nodes)
    return merged


def heavy_changers(
    t1: Flowtree,
    t2: Flowtree,
    k: int,
    counter: str = "flows",
    key_filter: Optional[Callable[[FlowKey], bool]] = None,
) -> list[PopReport]:
    """Top-k over the diff of two trees."""
    return diff(t1, t2).top_k(k, counter=counter, key_filter=key_filter)


# ---------------------------------------------------------------------------
# Serialization: little-endian, deterministic node order, CRC32 over the body.
#
#   header: magic "FTR1", version u16, feature_set u8, reserved u8,
#           p in micro-units u32, max_nodes u32, seed u64, node_count u32,
#           total flows/packets/bytes u64 each, crc32(body) u32
#   body:   per node, (value u32, mask u8) per feature in canonical order,
#           then comp_pop as three u64; nodes sorted by (level, key).

MAGIC = b"FTR1"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBBIIQIQQQI")


def _record_struct(fs: FeatureSet) -> struct.Struct:
    return struct.Struct("<" + "IB" * len(fs.features) + "QQQ")


def serialize(tree: Flowtree) -> bytes:
    fs = tree.feature_set
    rec = _record_struct(fs)
    body = bytearray()
    for key in sorted(tree.keys(), key=lambda k: (k.level, k.sort_token())):
        comp = tree.comp_pop(key)
        fields: list[int] = []
        for v, m in zip(key.values, key.masks):
            fields.append(v)
            fields.append(m)
        fields.extend((comp.flows, comp.packets, comp.bytes))
        body += rec.pack(*fields)
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        fs.fsid,
        0,
        round(tree.p * 1_000_000),
        tree.max_nodes,
        tree.seed,
        tree.node_count,
        tree.total.flows,
        tree.total.packets,
        tree.total.bytes,
        zlib.crc32(body) & 0xFFFFFFFF,
    )
    return header + bytes(body)


def deserialize(data: bytes) -> Flowtree:
    if len(data) < _HEADER.size:
        raise Truncated(f"{len(data)} bytes, header needs {_HEADER.size}")
    (
        magic,
        version,
        fsid,
        _reserved,
        p_micro,
        max_nodes,
        seed,
        node_count,
        tf,
        tp,
        tb,
        crc,
    ) = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != FORMAT_VERSION:
        raise BadVersion(f"version {version}")
    try:
        fs = FeatureSet.from_id(fsid)
    except Exception as exc:
        raise MalformedTree(str(exc)) from None
    body = data[_HEADER.size:]
    rec = _record_struct(fs)
    if len(body) != node_count * rec.size:
        raise Truncated(
            f"body is {len(body)} bytes, expected {node_count} records of {rec.size}"
        )
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch("body checksum mismatch")
    nfeat = len(fs.features)
    entries: dict[FlowKey, Counters] = {}
    total_check = Counters()
    for i in range(node_count):
        fields = rec.unpack_from(body, i * rec.size)
        values = fields[0 : 2 * nfeat : 2]
        masks = fields[1 : 2 * nfeat : 2]
        try:
            key = FlowKey(fs, values, masks)
        except Exception as exc:
            raise MalformedTree(f"record {i}: {exc}") from None
        if key.values != tuple(values):
            raise MalformedTree(f"record {i}: key not in canonical form")
        if key in entries:
            raise MalformedTree(f"record {i}: duplicate key")
        comp = Counters(*fields[2 * nfeat :])
        entries[key] = comp
        total_check.iadd(comp)
    if total_check.as_tuple() != (tf, tp, tb):
        raise MalformedTree("totals do not match the sum of node counters")
    if max_nodes < MIN_CAPACITY or not 0 < p_micro <= 1_000_000:
        raise MalformedTree("invalid tree parameters in header")
    tree = Flowtree(fs, max_nodes=max_nodes, p=p_micro / 1_000_000, seed=seed)
    tree._bulk_load(entries, Counters(tf, tp, tb))
    return tree
