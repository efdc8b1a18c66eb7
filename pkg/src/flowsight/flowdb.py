"""Persistent tree store with an in-memory index and an LRU cache.

Layout on disk: one directory per (feature set, granularity), one file per
tree named by its textual key, `<site>-<fs>-<gran>-<start>.ftr`.  Writes
go through a temp file and an atomic rename so readers never observe a
partial tree; the index is rebuilt from a directory scan on open, which
also recovers from a crash between write and index update.
"""

from __future__ import annotations

import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .hierarchy import FeatureSet
from .flowagg import Granularity, SITE_ALL, TreeKey
from .flowtree import Flowtree, deserialize, merge, serialize

TREE_SUFFIX = ".ftr"
TMP_SUFFIX = ".ftr.tmp"

DEFAULT_MAX_CACHED_TREES = 4096
DEFAULT_EVICTION_INTERVAL = 30.0


class StoreError(Exception):
    pass


class NotFound(StoreError):
    pass


class KeyMismatch(StoreError):
    """TreeKey and tree disagree (feature set)."""


class StorageError(StoreError):
    pass


@dataclass
class CacheConfig:
    max_cached_trees: int = DEFAULT_MAX_CACHED_TREES
    eviction_interval: float = DEFAULT_EVICTION_INTERVAL


@dataclass
class IndexEntry:
    key: TreeKey
    size_bytes: int
    cached: bool = False


@dataclass
class StoreStats:
    trees: int = 0
    bytes: int = 0
    by_granularity: dict = field(default_factory=dict)
    by_feature_set: dict = field(default_factory=dict)
    cache_hits: int = 0
    cache_misses: int = 0
    evictions: int = 0
    cached_trees: int = 0


class FlowDB:
    """Embedded directory store; one instance per store root.

    Thread safety: a single lock guards index and cache bookkeeping, and
    writes to the same key serialize through it.  Readers get decoded
    trees that are treated as immutable by every query path.
    """

    def __init__(self, root: str, cache: Optional[CacheConfig] = None):
        self.root = os.path.abspath(root)
        self.cache_config = cache or CacheConfig()
        self._lock = threading.RLock()
        self._index: dict[TreeKey, IndexEntry] = {}
        self._buckets: dict[tuple, list[TreeKey]] = {}
        self._cache: OrderedDict[TreeKey, Flowtree] = OrderedDict()
        self._grans: dict[FeatureSet, set[Granularity]] = {}
        self._sites: set[int] = set()
        self._hits = 0
        self._misses = 0
        self._evictions = 0
        os.makedirs(self.root, exist_ok=True)
        self._scan()

    # -- layout -----------------------------------------------------------

    def _dir_for(self, fs: FeatureSet, gran: Granularity) -> str:
        return os.path.join(self.root, fs.name, gran.label)

    def _path_for(self, key: TreeKey) -> str:
        return os.path.join(
            self._dir_for(key.feature_set, key.granularity), key.text() + TREE_SUFFIX
        )

    def _scan(self) -> None:
        """Rebuild the index from disk, dropping stale temp files."""
        index: dict[TreeKey, IndexEntry] = {}
        for dirpath, _dirnames, filenames in os.walk(self.root):
            for name in filenames:
                path = os.path.join(dirpath, name)
                if name.endswith(TMP_SUFFIX):
                    try:
                        os.unlink(path)
                    except OSError:
                        pass
                    continue
                if not name.endswith(TREE_SUFFIX):
                    continue
                try:
                    key = TreeKey.from_text(name[: -len(TREE_SUFFIX)])
                except Exception:
                    continue
                index[key] = IndexEntry(key=key, size_bytes=os.path.getsize(path))
        with self._lock:
            self._index = index
            self._buckets = {}
            self._grans = {}
            self._sites = set()
            for key in index:
                self._note_key(key)

    def _note_key(self, key: TreeKey) -> None:
        self._grans.setdefault(key.feature_set, set()).add(key.granularity)
        self._buckets.setdefault((key.feature_set, key.granularity), []).append(key)
        if key.site_id != SITE_ALL:
            self._sites.add(key.site_id)

    # -- core API -----------------------------------------------------------

    def put(self, key: TreeKey, tree: Flowtree, overwrite: bool = False) -> None:
        """Durably store a tree.  An existing tree under the same key is
        merged with the incoming one (late data) unless `overwrite`."""
        if tree.feature_set is not key.feature_set:
            raise KeyMismatch(
                f"tree is {tree.feature_set.name}, key says {key.feature_set.name}"
            )
        with self._lock:
            if not overwrite and key in self._index:
                tree = merge(self.get(key), tree)
            data = serialize(tree)
            path = self._path_for(key)
            tmp = path + ".tmp"
            os.makedirs(os.path.dirname(path), exist_ok=True)
            try:
                with open(tmp, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except OSError as exc:
                try:
                    os.unlink(tmp)
                except OSError:
                    pass
                raise StorageError(f"writing {path}: {exc}") from exc
            if key not in self._index:
                self._note_key(key)
            self._index[key] = IndexEntry(key=key, size_bytes=len(data))
            self._cache[key] = tree
            self._cache.move_to_end(key)
            self._evict_locked()

    def get(self, key: TreeKey) -> Flowtree:
        with self._lock:
            tree = self._cache.get(key)
            if tree is not None:
                self._hits += 1
                self._cache.move_to_end(key)
                return tree
            if key not in self._index:
                raise NotFound(key.text())
            self._misses += 1
        path = self._path_for(key)
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise StorageError(f"reading {path}: {exc}") from exc
        tree = deserialize(data)
        with self._lock:
            self._cache[key] = tree
            self._cache.move_to_end(key)
            self._evict_locked()
        return tree

    def get_bytes(self, key: TreeKey) -> bytes:
        with self._lock:
            if key not in self._index:
                raise NotFound(key.text())
        path = self._path_for(key)
        try:
            with open(path, "rb") as fh:
                return fh.read()
        except OSError as exc:
            raise StorageError(f"reading {path}: {exc}") from exc

    def __contains__(self, key: TreeKey) -> bool:
        with self._lock:
            return key in self._index

    def range(
        self,
        sites,
        feature_set: FeatureSet,
        granularity: Granularity,
        t_from: int,
        t_to: int,
    ) -> list[TreeKey]:
        """Stored keys with start_ts in [t_from, t_to).

        `sites` is an explicit iterable of ids, SITE_ALL for the all-sites
        rollup, or None meaning every site.
        """
        if t_from > t_to:
            raise StoreError("t_from must be <= t_to")
        if sites is None:
            wanted = None
        elif isinstance(sites, int):
            wanted = {sites}
        else:
            wanted = set(sites)
        with self._lock:
            bucket = self._buckets.get((feature_set, granularity), ())
            keys = [
                k
                for k in bucket
                if t_from <= k.start_ts < t_to
                and (wanted is None or k.site_id in wanted)
            ]
        keys.sort(key=lambda k: (k.site_id, k.start_ts))
        return keys

    def evict(self) -> None:
        with self._lock:
            self._evict_locked()

    def _evict_locked(self) -> None:
        limit = self.cache_config.max_cached_trees
        while len(self._cache) > limit:
            self._cache.popitem(last=False)
            self._evictions += 1

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    # -- metadata -----------------------------------------------------------

    def sites(self) -> list[int]:
        """Distinct real site ids (the ALL rollup pseudo-site excluded)."""
        with self._lock:
            return sorted(self._sites)

    def granularities(self, feature_set: Optional[FeatureSet] = None) -> list[Granularity]:
        with self._lock:
            if feature_set is None:
                grans = set()
                for gs in self._grans.values():
                    grans |= gs
            else:
                grans = set(self._grans.get(feature_set, ()))
        return sorted(grans, key=lambda g: g.seconds)

    def feature_sets(self) -> list[FeatureSet]:
        with self._lock:
            return sorted({k.feature_set for k in self._index}, key=lambda f: f.fsid)

    def keys(self) -> list[TreeKey]:
        with self._lock:
            return sorted(
                self._index,
                key=lambda k: (k.feature_set.fsid, k.granularity.seconds, k.site_id, k.start_ts),
            )

    def entry_sizes(self) -> list[tuple[TreeKey, int]]:
        """(key, serialized size) for every stored tree."""
        with self._lock:
            return [(e.key, e.size_bytes) for e in self._index.values()]

    def stats(self) -> StoreStats:
        with self._lock:
            st = StoreStats(
                trees=len(self._index),
                bytes=sum(e.size_bytes for e in self._index.values()),
                cache_hits=self._hits,
                cache_misses=self._misses,
                evictions=self._evictions,
                cached_trees=len(self._cache),
            )
            for entry in self._index.values():
                g = entry.key.granularity.label
                f = entry.key.feature_set.name
                cnt_g = st.by_granularity.setdefault(g, [0, 0])
                cnt_g[0] += 1
                cnt_g[1] += entry.size_bytes
                cnt_f = st.by_feature_set.setdefault(f, [0, 0])
                cnt_f[0] += 1
                cnt_f[1] += entry.size_bytes
        return st
