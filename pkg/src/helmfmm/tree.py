"""Uniform octree metadata: Morton keys, leaf partitioning, local subtrees and
plural-node ownership.

Levels are numbered root-first: the root is level 1 and leaves sit at level
``L``. A level-``l`` key carries ``3 * (l - 1)`` bits, interleaved x-lowest,
then y, then z. Only nonempty boxes are materialized; a planar particle layer
therefore produces a quadtree inside the 3-D tree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DIM = 3
MAX_LEVEL = 21  # 3 * 20 bits fit in an int64


@dataclass(frozen=True, order=True)
class MortonKey:
    level: int
    code: int

    def __post_init__(self):
        if self.level < 1 or self.level > MAX_LEVEL:
            raise ValueError(f"level {self.level} out of range")
        if not 0 <= self.code < 1 << (DIM * (self.level - 1)):
            raise ValueError(f"code {self.code} has too many bits for level {self.level}")

    def parent(self) -> "MortonKey":
        if self.level == 1:
            raise ValueError("the root has no parent")
        return MortonKey(self.level - 1, self.code >> DIM)

    def children(self) -> list["MortonKey"]:
        return [MortonKey(self.level + 1, (self.code << DIM) | i) for i in range(1 << DIM)]

    def ancestor(self, level: int) -> "MortonKey":
        return MortonKey(level, self.code >> (DIM * (self.level - level)))

    def coords(self) -> tuple[int, int, int]:
        x, y, z = decode(np.array([self.code]), self.level - 1)
        return int(x[0]), int(y[0]), int(z[0])

    def as_list(self) -> list[int]:
        return [self.level, self.code]


def encode(ix, iy, iz, nbits: int) -> np.ndarray:
    """Interleave the low ``nbits`` of each integer coordinate."""
    ix, iy, iz = (np.asarray(a, dtype=np.int64) for a in (ix, iy, iz))
    code = np.zeros(np.broadcast(ix, iy, iz).shape, dtype=np.int64)
    for b in range(nbits):
        code |= ((ix >> b) & 1) << (3 * b)
        code |= ((iy >> b) & 1) << (3 * b + 1)
        code |= ((iz >> b) & 1) << (3 * b + 2)
    return code


def decode(code, nbits: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    code = np.asarray(code, dtype=np.int64)
    ix = np.zeros_like(code)
    iy = np.zeros_like(code)
    iz = np.zeros_like(code)
    for b in range(nbits):
        ix |= ((code >> (3 * b)) & 1) << b
        iy |= ((code >> (3 * b + 1)) & 1) << b
        iz |= ((code >> (3 * b + 2)) & 1) << b
    return ix, iy, iz


def compute_num_levels(D0: float, leaf_diameter: float) -> int:
    """Smallest integer L with L >= log2(D0 / leaf_diameter) + 1."""
    if not (leaf_diameter > 0 and D0 >= leaf_diameter * (1 - 1e-12)):
        raise ValueError("need D0 >= leaf_diameter > 0")
    ratio = D0 / leaf_diameter
    L = 1
    # exact on powers of two, unlike ceil(log2(...))
    while 2.0 ** (L - 1) < ratio * (1 - 1e-12):
        L += 1
    return L


@dataclass(frozen=True)
class TreeConfig:
    """Root box geometry. ``D0`` is the side of the bounding cube; the tree's
    root side is ``leaf_diameter * 2**(L-1) >= D0`` so leaves have exactly the
    requested size. ``d`` only labels the geometry class for cost models."""

    D0: float
    leaf_diameter: float
    L: int
    root_corner: tuple[float, float, float]
    d: int = 3

    def __post_init__(self):
        if self.L != compute_num_levels(self.D0, self.leaf_diameter):
            raise ValueError("L must be the smallest level count covering D0")
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")

    @property
    def root_side(self) -> float:
        return self.leaf_diameter * 2 ** (self.L - 1)

    def box_side(self, level: int) -> float:
        return self.root_side / 2 ** (level - 1)

    def box_centers(self, level: int, codes) -> np.ndarray:
        ix, iy, iz = decode(codes, level - 1)
        side = self.box_side(level)
        ijk = np.stack([ix, iy, iz], axis=-1).astype(float)
        return np.asarray(self.root_corner) + (ijk + 0.5) * side

    @classmethod
    def for_points(cls, positions: np.ndarray, leaf_diameter: float, d: int | None = None):
        """Bounding cube of ``positions`` padded by one leaf (cells centred on
        the points), with the root centred on the bounding box."""
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        lo, hi = positions.min(axis=0), positions.max(axis=0)
        D0 = float((hi - lo).max()) + leaf_diameter
        L = compute_num_levels(D0, leaf_diameter)
        side = leaf_diameter * 2 ** (L - 1)
        corner = (lo + hi) / 2 - side / 2
        if d is None:
            d = 2 if np.ptp(positions, axis=0).min() == 0 else 3
        return cls(D0, leaf_diameter, L, tuple(float(c) for c in corner), d)

    def to_json(self) -> dict:
        return {"D0": self.D0, "leaf_diameter": self.leaf_diameter, "L": self.L,
                "root_corner": list(self.root_corner), "d": self.d}


def box_indices(positions, config: TreeConfig, level: int) -> np.ndarray:
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    side = config.box_side(level)
    rel = (positions - np.asarray(config.root_corner)) / side
    n = 2 ** (level - 1)
    tol = 1e-9 * n
    if (rel < -tol).any() or (rel > n + tol).any():
        raise ValueError("position outside the root box")
    return np.clip(np.floor(rel).astype(np.int64), 0, n - 1)


def morton_codes(positions, config: TreeConfig, level: int) -> np.ndarray:
    idx = box_indices(positions, config, level)
    return encode(idx[:, 0], idx[:, 1], idx[:, 2], level - 1)


def morton_key(position, config: TreeConfig, level: int) -> MortonKey:
    return MortonKey(level, int(morton_codes(position, config, level)[0]))


# ---------------------------------------------------------------- partition

@dataclass(frozen=True)
class Partition:
    """Contiguous leaf ranges: rank ``r`` owns sorted leaves
    ``starts[r]:starts[r + 1]``."""

    leaf_codes: np.ndarray
    starts: np.ndarray
    level: int

    @property
    def n_ranks(self) -> int:
        return len(self.starts) - 1

    @property
    def splitters(self) -> list[MortonKey]:
        return [MortonKey(self.level, int(self.leaf_codes[s])) for s in self.starts[1:-1]]

    @property
    def rank_ranges(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(self.starts[:-1], self.starts[1:])]

    def rank_of_leaf(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_ranks), np.diff(self.starts))

    def owned_keys(self, rank: int) -> list[MortonKey]:
        a, b = self.starts[rank], self.starts[rank + 1]
        return [MortonKey(self.level, int(c)) for c in self.leaf_codes[a:b]]


def partition_leaves(leaf_codes, weights, n_ranks: int, level: int) -> Partition:
    """Split the Morton-sorted nonempty leaves into ``n_ranks`` contiguous runs.

    Each splitter sits at the leaf boundary whose prefix weight is nearest to
    its ideal share ``r * W / n_ranks`` (ties to the earlier boundary), so a
    rank's load is within one leaf weight of ``W / n_ranks``.
    """
    codes = np.asarray(leaf_codes, dtype=np.int64)
    w = np.asarray(weights, dtype=float)
    if len(codes) == 0:
        raise ValueError("no nonempty leaves")
    order = np.argsort(codes, kind="stable")
    codes, w = codes[order], w[order]
    if (np.diff(codes) <= 0).any():
        raise ValueError("duplicate leaf keys")
    if n_ranks < 1:
        raise ValueError("need at least one rank")
    if n_ranks > len(codes):
        raise ValueError(f"{n_ranks} ranks exceed the {len(codes)} nonempty leaves")
    prefix = np.concatenate([[0.0], np.cumsum(w)])
    total = prefix[-1]
    starts = [0]
    n = len(codes)
    for r in range(1, n_ranks):
        lo, hi = starts[-1] + 1, n - (n_ranks - r)
        target = r * total / n_ranks
        cand = np.arange(lo, hi + 1)
        best = cand[np.argmin(np.abs(prefix[cand] - target))]
        starts.append(int(best))
    starts.append(n)
    return Partition(codes, np.array(starts, dtype=np.int64), level)


# ------------------------------------------------------------ local subtree

@dataclass
class TreeNode:
    key: MortonKey
    center: np.ndarray
    children: list[MortonKey] = field(default_factory=list)


@dataclass
class LocalSubtree:
    """Owned leaves plus all their ancestors in post-order, with an indexer
    from key to array slot and the owned column slice of each node."""

    nodes: list[TreeNode]
    indexer: dict[MortonKey, int]
    slices: dict[MortonKey, tuple[int, int]] = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, key: MortonKey) -> TreeNode:
        return self.nodes[self.indexer[key]]

    def __contains__(self, key) -> bool:
        return key in self.indexer

    def keys(self) -> list[MortonKey]:
        return [n.key for n in self.nodes]

    def preorder(self) -> list[MortonKey]:
        """Parents before children, children in Morton order."""
        out = []
        root = self.nodes[-1].key

        def visit(key):
            out.append(key)
            for c in self[key].children:
                visit(c)

        visit(root)
        return out


def build_local_subtree(owned_leaves: Sequence[MortonKey],
                        config: TreeConfig | None = None,
                        all_leaves: Sequence[MortonKey] | None = None) -> LocalSubtree:
    """Post-order array of ``owned_leaves`` and every ancestor up to the root.

    ``owned_leaves`` must be strictly increasing leaves of one level; when
    ``all_leaves`` (the global sorted nonempty leaves) is given they must also
    form one contiguous run of it.
    """
    leaves = list(owned_leaves)
    if not leaves:
        raise ValueError("no leaves given")
    level = leaves[0].level
    if any(k.level != level for k in leaves):
        raise ValueError("owned leaves span several levels")
    if any(b.code <= a.code for a, b in zip(leaves, leaves[1:])):
        raise ValueError("owned leaves are not Morton-contiguous (unsorted)")
    if all_leaves is not None:
        pos = {k: i for i, k in enumerate(all_leaves)}
        try:
            idx = [pos[k] for k in leaves]
        except KeyError as exc:
            raise ValueError(f"{exc.args[0]} is not a known leaf") from None
        if idx[-1] - idx[0] != len(idx) - 1:
            raise ValueError("owned leaves are not Morton-contiguous")

    children: dict[MortonKey, set] = {}
    for leaf in leaves:
        key = leaf
        children.setdefault(key, set())
        while key.level > 1:
            parent = key.parent()
            children.setdefault(parent, set()).add(key)
            key = parent

    nodes: list[TreeNode] = []

    def visit(key):
        kids = sorted(children[key])
        for c in kids:
            visit(c)
        center = (config.box_centers(key.level, [key.code])[0]
                  if config is not None else np.zeros(3))
        nodes.append(TreeNode(key, center, kids))

    visit(MortonKey(1, 0))
    return LocalSubtree(nodes, {n.key: i for i, n in enumerate(nodes)})


# ------------------------------------------------------ plural nodes/slices

@dataclass(frozen=True)
class SliceMap:
    """Ownership of a node's samples by column (fixed-theta block of
    ``n_phi`` samples): ordered ``(rank, begin_col, end_col)`` entries."""

    entries: tuple[tuple[int, int, int], ...]
    n_theta: int
    n_phi: int

    def __post_init__(self):
        pos = 0
        for _, a, b in sorted(self.entries, key=lambda e: (e[1], e[2])):
            if a != pos or b < a:
                raise ValueError(f"slice map does not tile columns: {self.entries}")
            pos = b
        if pos != self.n_theta:
            raise ValueError(f"slice map covers {pos} of {self.n_theta} columns")
        ranks = [e[0] for e in self.entries]
        if len(set(ranks)) != len(ranks):
            raise ValueError("rank listed twice in slice map")

    @classmethod
    def single(cls, rank: int, n_theta: int, n_phi: int) -> "SliceMap":
        return cls(((rank, 0, n_theta),), n_theta, n_phi)

    @property
    def ranks(self) -> list[int]:
        return [e[0] for e in self.entries]

    @property
    def n_samples(self) -> int:
        return self.n_theta * self.n_phi

    def columns(self, rank: int) -> tuple[int, int]:
        for r, a, b in self.entries:
            if r == rank:
                return a, b
        return 0, 0

    def sample_range(self, rank: int) -> tuple[int, int]:
        a, b = self.columns(rank)
        return a * self.n_phi, b * self.n_phi

    def sample_ranges(self) -> list[tuple[int, int, int]]:
        return [(r, a * self.n_phi, b * self.n_phi) for r, a, b in self.entries]

    def as_dict(self) -> dict[int, tuple[int, int]]:
        return {r: (a, b) for r, a, b in self.entries}

    def scaled(self, n_theta: int, n_phi: int) -> dict[int, tuple[int, int]]:
        """Column ranges carried over to a grid with ``n_theta`` columns."""
        return {r: (scale_column(a, self.n_theta, n_theta), scale_column(b, self.n_theta, n_theta))
                for r, a, b in self.entries}

    def to_json(self) -> list:
        return [[r, a * self.n_phi, b * self.n_phi] for r, a, b in self.entries]


def scale_column(col: int, n_from: int, n_to: int) -> int:
    return (col * n_to) // n_from


def split_evenly(n: int, parts: int) -> list[tuple[int, int]]:
    """``parts`` contiguous blocks of ``range(n)``, remainder to the first."""
    base, extra = divmod(n, parts)
    out, pos = [], 0
    for i in range(parts):
        size = base + (1 if i < extra else 0)
        out.append((pos, pos + size))
        pos += size
    return out


ALIGNMENT_POLICIES = ("rank-ordered", "aligned")


def assign_sample_slices(parent_dims: tuple[int, int], users: Iterable[int],
                         child_slices: Sequence[SliceMap],
                         policy: str = "aligned") -> SliceMap:
    """Distribute a plural node's columns among its ``users``.

    ``child_slices`` are the children's own slice maps (a whole child is a
    one-entry map); their ranges are scaled onto the parent grid, where the
    interpolated child data lives. ``rank-ordered`` gives equal blocks in
    rank order. ``aligned`` orders ranks by the lowest parent-grid column
    they hold, then by how much they hold (less first), then by rank, and
    sizes blocks in proportion to the held amount. That layout is kept only
    if it overlaps the children's slices at least as much as the rank-ordered
    one (:func:`local_overlap`), so alignment never adds traffic at a node.
    """
    users = sorted(set(users))
    if not users:
        raise ValueError("plural node without users")
    n_theta, n_phi = parent_dims
    blocks = split_evenly(n_theta, len(users))
    plain = SliceMap(tuple((r, a, b) for r, (a, b) in zip(users, blocks)), n_theta, n_phi)
    if policy == "rank-ordered":
        return plain
    if policy != "aligned":
        raise ValueError(f"unknown alignment policy {policy!r}")

    lowest = {r: math.inf for r in users}
    held = {r: 0 for r in users}
    for cs in child_slices:
        for r, (a, b) in cs.scaled(n_theta, n_phi).items():
            if r in held and b > a:
                lowest[r] = min(lowest[r], a)
                held[r] += b - a
    order = sorted(users, key=lambda r: (lowest[r], held[r], r))
    total = sum(held.values())
    if total == 0:
        sizes = [b - a for a, b in split_evenly(n_theta, len(order))]
    else:
        sizes = [n_theta * held[r] // total for r in order]
        for i in range(n_theta - sum(sizes)):
            sizes[i % len(sizes)] += 1
    entries, pos = [], 0
    for r, s in zip(order, sizes):
        entries.append((r, pos, pos + s))
        pos += s
    aligned = SliceMap(tuple(entries), n_theta, n_phi)
    if local_overlap(aligned, child_slices) >= local_overlap(plain, child_slices):
        return aligned
    return plain


def local_overlap(parent: SliceMap, child_slices: Sequence[SliceMap]) -> int:
    """Parent-grid columns a rank already holds from its own child pieces,
    summed over children and ranks: the part of aggregation that stays local."""
    own = parent.as_dict()
    total = 0
    for cs in child_slices:
        for r, (a, b) in cs.scaled(parent.n_theta, parent.n_phi).items():
            if r in own:
                pa, pb = own[r]
                total += max(0, min(b, pb) - max(a, pa))
    return total


@dataclass(frozen=True)
class PluralInfo:
    key: MortonKey
    users: tuple[int, ...]
    resident: int
    slice_map: SliceMap | None = None

    def to_json(self) -> dict:
        return {"key": self.key.as_list(), "users": list(self.users),
                "resident": self.resident,
                "slices": self.slice_map.to_json() if self.slice_map else None}


def node_leaf_ranges(leaf_codes: np.ndarray, leaf_level: int, level: int,
                     codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shift = DIM * (leaf_level - level)
    lo = np.searchsorted(leaf_codes, codes << shift, side="left")
    hi = np.searchsorted(leaf_codes, (codes + 1) << shift, side="left")
    return lo, hi


def identify_plural_nodes(partition: Partition, config: TreeConfig | None = None) -> list[list[PluralInfo]]:
    """Per rank, every node whose leaves span more than one rank.

    The users of such a node are the ranks owning any of its leaves (always a
    contiguous rank interval); the resident is the right-most of them.
    """
    del config  # the partition carries the leaf level
    out: list[list[PluralInfo]] = [[] for _ in range(partition.n_ranks)]
    if partition.n_ranks == 1:
        return out
    rank_of = partition.rank_of_leaf()
    L = partition.level
    for level in range(1, L):
        codes = np.unique(partition.leaf_codes >> (DIM * (L - level)))
        lo, hi = node_leaf_ranges(partition.leaf_codes, L, level, codes)
        r0, r1 = rank_of[lo], rank_of[hi - 1]
        for c, a, b in zip(codes[r1 > r0], r0[r1 > r0], r1[r1 > r0]):
            users = tuple(range(int(a), int(b) + 1))
            info = PluralInfo(MortonKey(level, int(c)), users, users[-1])
            for r in users:
                out[r].append(info)
    return out


# ------------------------------------------------------ distributed tree

@dataclass
class LevelNodes:
    level: int
    codes: np.ndarray           # sorted nonempty box codes
    centers: np.ndarray         # (n, 3)
    leaf_lo: np.ndarray         # leaf index range of each box
    leaf_hi: np.ndarray
    rank_lo: np.ndarray         # users are rank_lo..rank_hi
    rank_hi: np.ndarray
    n_theta: int = 0
    n_phi: int = 0

    def __len__(self):
        return len(self.codes)

    def index(self, code: int) -> int:
        i = int(np.searchsorted(self.codes, code))
        if i >= len(self.codes) or self.codes[i] != code:
            raise KeyError(code)
        return i

    def is_plural(self, i: int) -> bool:
        return self.rank_hi[i] > self.rank_lo[i]


class DistributedTree:
    """Global metadata of the partitioned tree, shared read-only by all ranks:
    nonempty boxes per level, leaf partition, users of every box and the
    column slice maps of plural boxes."""

    def __init__(self, positions, config: TreeConfig, n_ranks: int,
                 dims: Mapping[int, tuple[int, int]] | None = None,
                 policy: str = "aligned", weights=None):
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        self.config = config
        self.L = config.L
        self.policy = policy
        codes = morton_codes(positions, config, self.L)
        order = np.argsort(codes, kind="stable")
        self.particle_order = order
        sorted_codes = codes[order]
        leaf_codes, first, counts = np.unique(sorted_codes, return_index=True, return_counts=True)
        self.leaf_codes = leaf_codes
        self.leaf_start = np.append(first, len(codes))  # into particle_order
        self.leaf_counts = counts
        w = counts if weights is None else weights
        self.partition = partition_leaves(leaf_codes, w, n_ranks, self.L)
        self.n_ranks = n_ranks
        self.rank_of_leaf = self.partition.rank_of_leaf()
        self.levels: dict[int, LevelNodes] = {}
        for level in range(1, self.L + 1):
            lc = np.unique(leaf_codes >> (DIM * (self.L - level)))
            lo, hi = node_leaf_ranges(leaf_codes, self.L, level, lc)
            nt, nph = dims.get(level, (0, 0)) if dims else (0, 0)
            self.levels[level] = LevelNodes(
                level, lc, config.box_centers(level, lc), lo, hi,
                self.rank_of_leaf[lo], self.rank_of_leaf[hi - 1], nt, nph)
        self.slice_maps: dict[MortonKey, SliceMap] = {}
        if dims:
            self._assign_slices()

    def _assign_slices(self):
        for level in range(self.L - 1, 0, -1):
            ln = self.levels[level]
            if ln.n_theta == 0:
                continue
            for i in np.nonzero(ln.rank_hi > ln.rank_lo)[0]:
                key = MortonKey(level, int(ln.codes[i]))
                kids = [self.layout(c) for c in self.children(key)]
                users = range(int(ln.rank_lo[i]), int(ln.rank_hi[i]) + 1)
                self.slice_maps[key] = assign_sample_slices(
                    (ln.n_theta, ln.n_phi), users, kids, self.policy)

    def children(self, key: MortonKey) -> list[MortonKey]:
        ln = self.levels[key.level + 1]
        lo = np.searchsorted(ln.codes, key.code << DIM)
        hi = np.searchsorted(ln.codes, (key.code + 1) << DIM)
        return [MortonKey(key.level + 1, int(c)) for c in ln.codes[lo:hi]]

    def users(self, key: MortonKey) -> tuple[int, ...]:
        ln = self.levels[key.level]
        i = ln.index(key.code)
        return tuple(range(int(ln.rank_lo[i]), int(ln.rank_hi[i]) + 1))

    def is_plural(self, key: MortonKey) -> bool:
        ln = self.levels[key.level]
        return bool(ln.is_plural(ln.index(key.code)))

    def layout(self, key: MortonKey) -> SliceMap:
        """Column ownership of ``key``; a whole box for non-plural nodes."""
        sm = self.slice_maps.get(key)
        if sm is not None:
            return sm
        ln = self.levels[key.level]
        i = ln.index(key.code)
        if ln.is_plural(i):
            raise KeyError(f"no slice map for plural node {key}")
        return SliceMap.single(int(ln.rank_lo[i]), ln.n_theta, ln.n_phi)

    def center(self, key: MortonKey) -> np.ndarray:
        ln = self.levels[key.level]
        return ln.centers[ln.index(key.code)]

    def owned_leaf_keys(self, rank: int) -> list[MortonKey]:
        return self.partition.owned_keys(rank)

    def leaf_particles(self, leaf_index: int) -> np.ndarray:
        return self.particle_order[self.leaf_start[leaf_index]:self.leaf_start[leaf_index + 1]]

    def local_subtree(self, rank: int) -> LocalSubtree:
        sub = build_local_subtree(self.owned_leaf_keys(rank), self.config)
        for node in sub.nodes:
            ln = self.levels[node.key.level]
            if ln.n_theta:
                sub.slices[node.key] = self.layout(node.key).columns(rank)
        return sub

    def plural_infos(self) -> list[list[PluralInfo]]:
        out: list[list[PluralInfo]] = [[] for _ in range(self.n_ranks)]
        for level in range(1, self.L):
            ln = self.levels[level]
            for i in np.nonzero(ln.rank_hi > ln.rank_lo)[0]:
                key = MortonKey(level, int(ln.codes[i]))
                users = tuple(range(int(ln.rank_lo[i]), int(ln.rank_hi[i]) + 1))
                info = PluralInfo(key, users, users[-1], self.slice_maps.get(key))
                for r in users:
                    out[r].append(info)
        return out

    def to_json(self) -> dict:
        """Tree dump: config, per-rank leaf ranges and plural-node records."""
        seen = {}
        for infos in self.plural_infos():
            for info in infos:
                seen[info.key] = info
        return {
            "config": self.config.to_json(),
            "n_ranks": self.n_ranks,
            "policy": self.policy,
            "rank_leaf_ranges": [
                {"rank": r, "first": int(self.leaf_codes[a]) if b > a else None,
                 "last": int(self.leaf_codes[b - 1]) if b > a else None,
                 "count": b - a}
                for r, (a, b) in enumerate(self.partition.rank_ranges)],
            "plural_nodes": [seen[k].to_json() for k in sorted(seen)],
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
