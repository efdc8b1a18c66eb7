"""Feature hierarchies and generalized flow keys.

A generalized flow key is a point in a joined hierarchy over one or more
flow features (IPv4 prefixes and port ranges).  Every feature carries a
value and a prefix-mask length; walking one level up shortens every
non-exhausted mask by one bit (lockstep), so a key at level L reaches the
all-wildcard root after exactly L steps.
"""

from __future__ import annotations

import enum
from typing import Iterable, Sequence


class HierarchyError(ValueError):
    pass


class InvalidMask(HierarchyError):
    """Mask length outside [0, feature width]."""


class NoParent(HierarchyError):
    """next_parent called on the root key."""


class FeatureSetMismatch(HierarchyError):
    """Operation across keys/trees of different feature sets."""


class Feature(enum.Enum):
    """A flow feature with its fixed bit width."""

    SRC_IP = ("src_ip", 32)
    DST_IP = ("dst_ip", 32)
    SRC_PORT = ("src_port", 16)
    DST_PORT = ("dst_port", 16)
    PROTO = ("proto", 8)

    def __init__(self, label: str, width: int):
        self.label = label
        self.width = width
        self.is_ip = width == 32


# Canonical feature order inside a key: src_ip, dst_ip, src_port, dst_port.
FEATURE_ORDER = (Feature.SRC_IP, Feature.DST_IP, Feature.SRC_PORT, Feature.DST_PORT)

FEATURE_BY_LABEL = {f.label: f for f in Feature}


class FeatureSet(enum.Enum):
    """The eleven fixed feature combinations a tree can summarize."""

    SI = (0, (Feature.SRC_IP,))
    DI = (1, (Feature.DST_IP,))
    SP = (2, (Feature.SRC_PORT,))
    DP = (3, (Feature.DST_PORT,))
    SIDI = (4, (Feature.SRC_IP, Feature.DST_IP))
    SPDP = (5, (Feature.SRC_PORT, Feature.DST_PORT))
    SISP = (6, (Feature.SRC_IP, Feature.SRC_PORT))
    SIDP = (7, (Feature.SRC_IP, Feature.DST_PORT))
    DISP = (8, (Feature.DST_IP, Feature.SRC_PORT))
    DIDP = (9, (Feature.DST_IP, Feature.DST_PORT))
    FULL = (10, (Feature.SRC_IP, Feature.DST_IP, Feature.SRC_PORT, Feature.DST_PORT))

    def __init__(self, fsid: int, features: tuple):
        self.fsid = fsid
        self.features = features
        self.widths = tuple(f.width for f in features)
        # depth: hierarchy levels below the root (max feature width)
        self.depth = max(self.widths)

    @classmethod
    def from_id(cls, fsid: int) -> "FeatureSet":
        try:
            return _FS_BY_ID[fsid]
        except KeyError:
            raise HierarchyError(f"unknown feature set id {fsid}") from None

    @classmethod
    def from_name(cls, name: str) -> "FeatureSet":
        try:
            return cls[name.upper()]
        except KeyError:
            raise HierarchyError(f"unknown feature set {name!r}") from None

    @classmethod
    def covering(cls, kinds: Iterable[Feature]) -> "FeatureSet":
        """Smallest feature set whose features include all of `kinds`."""
        wanted = frozenset(kinds)
        try:
            return _FS_BY_KINDS[wanted]
        except KeyError:
            pass
        # No exact match (three features, or any superset need): fall back to
        # the smallest set that covers, FULL at worst.
        best = None
        for fs in cls:
            if wanted <= frozenset(fs.features):
                if best is None or len(fs.features) < len(best.features):
                    best = fs
        if best is None:
            raise HierarchyError(f"no feature set covers {sorted(k.label for k in wanted)}")
        return best


_FS_BY_ID = {fs.fsid: fs for fs in FeatureSet}
_FS_BY_KINDS = {frozenset(fs.features): fs for fs in FeatureSet}


class FlowKey:
    """A canonical generalized flow key: per-feature (value, mask) pairs.

    Construction canonicalizes: bits below each mask are cleared, so two
    keys describing the same hierarchy point always compare equal.
    """

    __slots__ = ("fs", "values", "masks", "level", "_hash")

    def __init__(self, fs: FeatureSet, values: Sequence[int], masks: Sequence[int]):
        widths = fs.widths
        if len(values) != len(widths) or len(masks) != len(widths):
            raise HierarchyError(
                f"{fs.name} key needs {len(widths)} features, got "
                f"{len(values)} values / {len(masks)} masks"
            )
        canon = []
        level = 0
        for v, m, w in zip(values, masks, widths):
            if not 0 <= m <= w:
                raise InvalidMask(f"mask {m} out of range for width {w}")
            keep = ((1 << m) - 1) << (w - m)
            canon.append(v & keep)
            if m > level:
                level = m
        self.fs = fs
        self.values = tuple(canon)
        self.masks = tuple(int(m) for m in masks)
        self.level = level
        self._hash = hash((fs.fsid,) + self.values + self.masks)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FlowKey)
            and self.fs is other.fs
            and self.values == other.values
            and self.masks == other.masks
        )

    def __ne__(self, other) -> bool:
        return not self.__eq__(other)

    @property
    def is_root(self) -> bool:
        return self.level == 0

    @property
    def is_full(self) -> bool:
        """True when every feature is at full mask (a leaf-level key)."""
        return self.masks == self.fs.widths

    def sort_token(self):
        """Total order inside one feature set: lexicographic on values, masks."""
        return (self.values, self.masks)

    def __repr__(self) -> str:
        return f"FlowKey({self.fs.name}:{render_key(self)})"


def root_key(fs: FeatureSet) -> FlowKey:
    return _ROOTS[fs]


_ROOTS = {fs: FlowKey(fs, (0,) * len(fs.features), (0,) * len(fs.features)) for fs in FeatureSet}


def canonicalize(key: FlowKey) -> FlowKey:
    """Explicit canonical form; keys canonicalize on construction, so this
    is the identity on any existing key (and therefore idempotent)."""
    return FlowKey(key.fs, key.values, key.masks)


def make_key(fs: FeatureSet, values: Sequence[int], masks: Sequence[int]) -> FlowKey:
    return FlowKey(fs, values, masks)


def next_parent(key: FlowKey) -> FlowKey:
    """One hierarchy level up: every non-zero mask shortened by one bit."""
    if key.level == 0:
        raise NoParent("root key has no parent")
    return fast_parent(key)


def fast_parent(key: FlowKey) -> FlowKey:
    """next_parent without validation, for trusted chain walks.  The input
    is canonical by construction and must not be the root."""
    values = []
    masks = []
    level = 0
    for v, m, w in zip(key.values, key.masks, key.fs.widths):
        if m > 0:
            m -= 1
            v &= ((1 << m) - 1) << (w - m)
            if m > level:
                level = m
        values.append(v)
        masks.append(m)
    out = object.__new__(FlowKey)
    out.fs = key.fs
    out.values = tuple(values)
    out.masks = tuple(masks)
    out.level = level
    out._hash = hash((key.fs.fsid,) + out.values + out.masks)
    return out


def is_ancestor(a: FlowKey, b: FlowKey, include_equal: bool = False) -> bool:
    """True iff `a` covers `b` in the joined hierarchy (strict by default)."""
    if a.fs is not b.fs:
        raise FeatureSetMismatch(f"{a.fs.name} vs {b.fs.name}")
    equal = True
    for va, ma, vb, mb, w in zip(a.values, a.masks, b.values, b.masks, a.fs.widths):
        if ma > mb:
            return False
        if ma and (vb >> (w - ma)) != (va >> (w - ma)):
            return False
        if ma != mb or va != vb:
            equal = False
    if equal:
        return include_equal
    return True


def matches_pattern(key: FlowKey, pattern: FlowKey) -> bool:
    """Descendant-or-equal test used by subtree filters."""
    return is_ancestor(pattern, key, include_equal=True)


def key_from_flow(flow, fs: FeatureSet) -> FlowKey:
    """Leaf-level key projecting a flow record onto a feature set."""
    values = tuple(getattr(flow, f.label) for f in fs.features)
    return FlowKey(fs, values, fs.widths)


# ---------------------------------------------------------------------------
# Textual syntax: `a.b.c.d|m` for IPs, `p|m` for ports, ANY for mask 0.
# Multi-feature keys join the per-feature renderings with commas in
# canonical feature order.

def ip_to_int(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise HierarchyError(f"bad IPv4 address {text!r}")
    value = 0
    for p in parts:
        if not p.isdigit():
            raise HierarchyError(f"bad IPv4 address {text!r}")
        octet = int(p)
        if octet > 255:
            raise HierarchyError(f"bad IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def int_to_ip(value: int) -> str:
    return f"{(value >> 24) & 0xFF}.{(value >> 16) & 0xFF}.{(value >> 8) & 0xFF}.{value & 0xFF}"


def render_feature(feature: Feature, value: int, mask: int) -> str:
    if mask == 0:
        return "ANY"
    if feature.is_ip:
        return f"{int_to_ip(value)}|{mask}"
    return f"{value}|{mask}"


def render_key(key: FlowKey) -> str:
    return ",".join(
        render_feature(f, v, m) for f, v, m in zip(key.fs.features, key.values, key.masks)
    )


def parse_feature_value(feature: Feature, text: str) -> tuple[int, int]:
    """Parse one feature component: ANY, `ip|mask`, or `port|mask`."""
    text = text.strip()
    if text.upper() == "ANY":
        return 0, 0
    if "|" in text:
        raw, _, mask_text = text.partition("|")
        if not mask_text.isdigit():
            raise HierarchyError(f"bad mask in {text!r}")
        mask = int(mask_text)
    else:
        raw, mask = text, feature.width
    if feature.is_ip:
        value = ip_to_int(raw)
    else:
        if not raw.isdigit():
            raise HierarchyError(f"bad value {raw!r} for {feature.label}")
        value = int(raw)
        if value >= (1 << feature.width):
            raise HierarchyError(f"{feature.label} value {value} out of range")
    if not 0 <= mask <= feature.width:
        raise InvalidMask(f"mask {mask} out of range for {feature.label}")
    return value, mask


def parse_key(fs: FeatureSet, text: str) -> FlowKey:
    parts = text.split(",")
    if len(parts) != len(fs.features):
        raise HierarchyError(
            f"{fs.name} key needs {len(fs.features)} components, got {len(parts)}"
        )
    values = []
    masks = []
    for feature, part in zip(fs.features, parts):
        v, m = parse_feature_value(feature, part)
        values.append(v)
        masks.append(m)
    return FlowKey(fs, values, masks)
