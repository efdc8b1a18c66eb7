"""Mini-query resolution, tree selection and granularity synthesis.

Each DNF conjunction resolves to the smallest feature set covering its
constrained features.  Time windows are tiled greedily with the coarsest
stored trees that fit; an answer-bin drill-down tiles every output bin
separately, merging finer trees when the exact width is not stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..hierarchy import FEATURE_BY_LABEL, Feature, FeatureSet, FlowKey
from ..flowagg import GRANULARITIES_COARSE_FIRST, SITE_ALL, TreeKey
from ..flowdb import FlowDB
from .parser import Atom, QueryPlan, SemanticError

DEFAULT_FEATURE_SET = FeatureSet.SI


@dataclass
class MiniQuery:
    atoms: tuple[Atom, ...]
    feature_set: FeatureSet
    pattern: FlowKey
    named: frozenset[str]
    site_scope: str = "any"  # any | fixed | iter
    site_ids: Optional[tuple[int, ...]] = None  # fixed sites
    iter_lo: Optional[int] = None
    iter_bits: Optional[int] = None
    empty: bool = False  # contradictory atoms: matches nothing

    def describe(self) -> str:
        conds = " and ".join(a.render() for a in self.atoms) or "(no conditions)"
        return f"{conds} -> {self.feature_set.name}"


def _merge_prefix_atoms(a: Atom, b: Atom) -> Optional[Atom]:
    """Intersect two prefix constraints on one feature; None when disjoint."""
    hi, lo = (a, b) if a.mask <= b.mask else (b, a)
    width = FEATURE_BY_LABEL[hi.feature].width
    shift = width - hi.mask
    if hi.mask == 0 or (lo.value >> shift) == (hi.value >> shift):
        return lo
    return None


def resolve_minis(plan: QueryPlan, default_fs: FeatureSet = DEFAULT_FEATURE_SET) -> list[MiniQuery]:
    minis = []
    for conj in plan.dnf:
        minis.append(_resolve_conjunction(conj, default_fs))
    return minis


def _resolve_conjunction(conj, default_fs: FeatureSet) -> MiniQuery:
    by_feature: dict[str, Atom] = {}
    named: set[str] = set()
    site_scope = "any"
    site_ids: Optional[tuple[int, ...]] = None
    iter_lo = iter_bits = None
    empty = False
    for atom in conj:
        if atom.feature == "site_id":
            if atom.kind == "any":
                continue
            if atom.kind == "iter":
                site_scope = "iter"
                iter_lo, iter_bits = atom.iter_lo, atom.iter_bits
                continue
            if site_scope == "fixed" and site_ids != (atom.value,):
                empty = True
            site_scope = "fixed"
            site_ids = (atom.value,)
            continue
        if atom.feature == "proto":
            if atom.kind == "prefix":
                raise SemanticError(
                    "no feature set carries the protocol; use the select "
                    "scope (any/tcp/udp) or proto=ANY"
                )
            continue
        named.add(atom.feature)
        if atom.kind == "any":
            by_feature.setdefault(atom.feature, atom)
            continue
        have = by_feature.get(atom.feature)
        if have is None or have.kind == "any":
            by_feature[atom.feature] = atom
        else:
            merged = _merge_prefix_atoms(have, atom)
            if merged is None:
                empty = True
            else:
                by_feature[atom.feature] = merged
    if named:
        kinds = {FEATURE_BY_LABEL[label] for label in named}
        fs = FeatureSet.covering(kinds)
    else:
        fs = default_fs
    values = []
    masks = []
    for feature in fs.features:
        atom = by_feature.get(feature.label)
        if atom is None or atom.kind == "any":
            values.append(0)
            masks.append(0)
        else:
            values.append(atom.value)
            masks.append(atom.mask)
    pattern = FlowKey(fs, values, masks)
    return MiniQuery(
        atoms=tuple(conj),
        feature_set=fs,
        pattern=pattern,
        named=frozenset(named),
        site_scope=site_scope,
        site_ids=site_ids,
        iter_lo=iter_lo,
        iter_bits=iter_bits,
        empty=empty,
    )


@dataclass
class Cover:
    """Trees answering one (site unit, time window) execution."""

    site_label: str
    window: tuple[int, int]
    keys: list[TreeKey] = field(default_factory=list)
    gaps: list[tuple[int, int]] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.gaps

    @property
    def merge_count(self) -> int:
        return max(0, len(self.keys) - 1)


def tile_window(
    db: FlowDB, fs: FeatureSet, site_id: int, a: int, b: int,
    gran_cap=None,
) -> tuple[list[TreeKey], list[tuple[int, int]]]:
    """Greedy cover of [a, b): coarsest aligned stored tree first.  With a
    granularity cap only trees at or below that width are considered."""
    grans = [
        g
        for g in GRANULARITIES_COARSE_FIRST
        if g in db.granularities(fs)
        and (gran_cap is None or g.seconds <= gran_cap.seconds)
    ]
    keys: list[TreeKey] = []
    gaps: list[tuple[int, int]] = []
    if not grans:
        return keys, [(a, b)]
    finest = grans[-1].seconds
    t = a
    gap_start = None
    while t < b:
        hit = None
        for g in grans:
            if t % g.seconds == 0 and t + g.seconds <= b:
                key = TreeKey(site_id, fs, g, t)
                if key in db:
                    hit = key
                    break
        if hit is not None:
            if gap_start is not None:
                gaps.append((gap_start, t))
                gap_start = None
            keys.append(hit)
            t += hit.granularity.seconds
        else:
            if gap_start is None:
                gap_start = t
            t = min(b, ((t // finest) + 1) * finest)
    if gap_start is not None:
        gaps.append((gap_start, b))
    return keys, gaps


def site_units(db: FlowDB, mini: MiniQuery) -> list[tuple[str, Optional[int]]]:
    """(label, site id) execution units; id None means "ANY" (merged scope)."""
    if mini.site_scope == "fixed":
        return [(str(s), s) for s in mini.site_ids]
    if mini.site_scope == "iter":
        sites = db.sites()
        if mini.iter_lo is not None:
            lo = mini.iter_lo
            hi = lo + (1 << mini.iter_bits) - 1
            sites = [s for s in sites if lo <= s <= hi]
        return [(str(s), s) for s in sites]
    return [("ALL", None)]


def cover_window(
    db: FlowDB, mini: MiniQuery, site_id: Optional[int], a: int, b: int,
    gran_cap=None,
) -> Cover:
    """Tiling for one unit; ANY scope prefers the all-sites rollup and
    falls back to merging per-site trees where it is missing."""
    label = "ALL" if site_id is None else str(site_id)
    cover = Cover(site_label=label, window=(a, b))
    if site_id is not None:
        cover.keys, cover.gaps = tile_window(db, mini.feature_set, site_id, a, b, gran_cap)
        return cover
    keys, gaps = tile_window(db, mini.feature_set, SITE_ALL, a, b, gran_cap)
    cover.keys = keys
    for ga, gb in gaps:
        remaining: Optional[list[tuple[int, int]]] = None
        for site in db.sites():
            skeys, sgaps = tile_window(db, mini.feature_set, site, ga, gb, gran_cap)
            cover.keys.extend(skeys)
            remaining = sgaps if remaining is None else _intersect_gaps(remaining, sgaps)
        if remaining is None:
            cover.gaps.append((ga, gb))
        else:
            cover.gaps.extend(remaining)
    return cover


def _intersect_gaps(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    for a0, a1 in a:
        for b0, b1 in b:
            lo, hi = max(a0, b0), min(a1, b1)
            if lo < hi:
                out.append((lo, hi))
    return out


def windows_for(plan: QueryPlan) -> list[tuple[int, int]]:
    """Output windows: whole ranges, or per-bin splits for drill-downs."""
    if plan.select.bin_minutes is None:
        return list(plan.ranges)
    width = plan.select.bin_minutes * 60
    out = []
    for a, b in plan.ranges:
        t = a
        while t < b:
            out.append((t, t + width))
            t += width
    return out


def plan_fetch(
    db: FlowDB, plan: QueryPlan, default_fs: FeatureSet = DEFAULT_FEATURE_SET
) -> list[tuple[MiniQuery, list[Cover]]]:
    """Full fetch plan: per mini-query, the covers for every execution unit."""
    out = []
    for mini in resolve_minis(plan, default_fs):
        covers: list[Cover] = []
        if not mini.empty:
            for label, site_id in site_units(db, mini):
                for a, b in windows_for(plan):
                    covers.append(cover_window(db, mini, site_id, a, b))
        out.append((mini, covers))
    return out


def explain(db: FlowDB, plan: QueryPlan, default_fs: FeatureSet = DEFAULT_FEATURE_SET) -> str:
    lines = [f"select: {plan.select.render()}"]
    for i, (a, b) in enumerate(plan.ranges):
        lines.append(f"range[{i}]: [{a}, {b}) = {(b - a) // 60} minutes")
    fetch = plan_fetch(db, plan, default_fs)
    lines.append(f"mini-queries: {len(fetch)}")
    for i, (mini, covers) in enumerate(fetch):
        lines.append(f"  [{i}] {mini.describe()}")
        if mini.empty:
            lines.append("      unsatisfiable: no rows")
            continue
        lines.append(f"      pattern: {mini.pattern!r} scope={mini.site_scope}")
        shown = covers[:6]
        for cover in shown:
            gran_mix = {}
            for key in cover.keys:
                gran_mix[key.granularity.label] = gran_mix.get(key.granularity.label, 0) + 1
            mix = "+".join(f"{n}x{g}" for g, n in sorted(gran_mix.items())) or "nothing"
            gap_note = f", {len(cover.gaps)} gap(s)" if cover.gaps else ""
            lines.append(
                f"      site={cover.site_label} window=[{cover.window[0]},{cover.window[1]})"
                f" fetch {mix} ({cover.merge_count}-way merge){gap_note}"
            )
        if len(covers) > len(shown):
            lines.append(f"      ... {len(covers) - len(shown)} more units")
    return "\n".join(lines)
