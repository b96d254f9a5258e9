"""The distributed five-phase evaluation.

Every rank runs :func:`rank_program` over shared, read-only metadata
(:class:`EvaluationSetup`): the partitioned tree, interaction lists and the
precomputed communication plans. Expansion data is private to its rank and
moves only through the messaging handle.

Storage: ``mult[l][i]`` / ``local[l][i]`` hold the columns this rank owns of
the level-``l`` box with index ``i`` (into ``tree.levels[l].codes``); a whole
box is held by its single owner, a plural box is sliced by its slice map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernel import Particles
from .ledger import PHASES, CostLedger
from .operators import (CMUL_ADD, PAIR_FLOPS, OperatorCache, QuadratureRule, c2m_batch,
                        c2m_flops, l2o_batch, near_field, shift_factor)
from .runtime import World
from .sphere import (LevelSampling, grid_resample_flops, interpolate_adjoint_array,
                     interpolate_array, parallel_resample, quadrature_weights)
from .tree import DIM, DistributedTree, MortonKey, TreeConfig, decode, encode

FIRST_FAR_LEVEL = 3
SAMPLE_BYTES = 16
PARTICLE_BYTES = 40  # x, y, z and a complex intensity
CMUL = 6
CADD = 2


@dataclass(frozen=True)
class RunConfig:
    """Evaluation settings. ``leaf_diameter`` is in wavelengths and
    ``buffer_bytes`` (None = unbounded) caps a single M2L message."""

    digits: float = 3.0
    leaf_diameter: float = 0.25
    n_ranks: int = 1
    buffer_bytes: int | None = None
    alignment: str = "aligned"
    one_particle_per_leaf: bool = False
    seed: int = 0
    scheduler: str = "deterministic"
    wavelength: float = 1.0
    stop_after: str | None = None

    def __post_init__(self):
        if self.buffer_bytes is not None and self.buffer_bytes < SAMPLE_BYTES:
            raise ValueError(f"buffer_bytes must hold at least one sample ({SAMPLE_BYTES} B)")
        if self.n_ranks < 1 or self.digits <= 0 or self.leaf_diameter <= 0:
            raise ValueError("invalid run configuration")
        if self.stop_after not in (None,) + PHASES:
            raise ValueError(f"unknown phase {self.stop_after!r}")

    @property
    def k(self) -> float:
        return 2 * math.pi / self.wavelength


# ------------------------------------------------------- interaction lists

def _far_offsets(parity: tuple[int, int, int]) -> np.ndarray:
    """Offsets to children of the parent's neighbours that are not adjacent."""
    axes = [np.arange(-2 - p, 4 - p) for p in parity]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid[np.abs(grid).max(axis=1) > 1]


_NEAR_OFFSETS = np.stack(np.meshgrid(*[np.arange(-1, 2)] * 3, indexing="ij"), -1).reshape(-1, 3)


@dataclass
class InteractionLists:
    """CSR far lists per level and the leaf-level near list (self included);
    every row is in Morton order."""

    far_ptr: dict[int, np.ndarray]
    far_idx: dict[int, np.ndarray]
    near_ptr: np.ndarray
    near_idx: np.ndarray
    leaf_level: int
    codes: dict[int, np.ndarray] = field(repr=False, default_factory=dict)

    def far(self, key: MortonKey) -> list[MortonKey]:
        codes = self.codes[key.level]
        i = int(np.searchsorted(codes, key.code))
        if i >= len(codes) or codes[i] != key.code:
            return []
        p = self.far_ptr[key.level]
        return [MortonKey(key.level, int(codes[j])) for j in self.far_idx[key.level][p[i]:p[i + 1]]]

    def near(self, key: MortonKey) -> list[MortonKey]:
        codes = self.codes[self.leaf_level]
        i = int(np.searchsorted(codes, key.code))
        return [MortonKey(self.leaf_level, int(codes[j]))
                for j in self.near_idx[self.near_ptr[i]:self.near_ptr[i + 1]]]


def _neighbour_pairs(codes: np.ndarray, level: int, offsets_for) -> tuple[np.ndarray, np.ndarray]:
    ix, iy, iz = decode(codes, level - 1)
    coords = np.stack([ix, iy, iz], axis=1)
    n_side = 1 << (level - 1)
    parity = coords & 1
    cls = parity[:, 0] + 2 * parity[:, 1] + 4 * parity[:, 2]
    rows, cols = [], []
    for c in range(8):
        sel = np.nonzero(cls == c)[0]
        if len(sel) == 0:
            continue
        offs = offsets_for((c & 1, (c >> 1) & 1, (c >> 2) & 1))
        nb = coords[sel][:, None, :] + offs[None]
        ok = ((nb >= 0) & (nb < n_side)).all(axis=2)
        i_obs = np.broadcast_to(sel[:, None], ok.shape)[ok]
        nb = nb[ok]
        nc = encode(nb[:, 0], nb[:, 1], nb[:, 2], level - 1)
        j = np.searchsorted(codes, nc)
        hit = j < len(codes)
        hit[hit] = codes[j[hit]] == nc[hit]
        rows.append(i_obs[hit])
        cols.append(j[hit])
    r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    order = np.lexsort((c, r))
    return r[order], c[order]


def _csr(rows: np.ndarray, cols: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    return np.cumsum(ptr), cols.astype(np.int64)


def build_interaction_lists(tree: DistributedTree) -> InteractionLists:
    """Far lists (not adjacent, parents adjacent) on every level and the
    leaf near list (shared face, edge or vertex, plus self)."""
    far_ptr, far_idx, codes = {}, {}, {}
    for level in range(1, tree.L + 1):
        c = tree.levels[level].codes
        codes[level] = c
        if level < 2:
            far_ptr[level], far_idx[level] = np.zeros(len(c) + 1, np.int64), np.zeros(0, np.int64)
            continue
        r, cc = _neighbour_pairs(c, level, _far_offsets)
        far_ptr[level], far_idx[level] = _csr(r, cc, len(c))
    leaf_codes = tree.levels[tree.L].codes
    r, cc = _neighbour_pairs(leaf_codes, tree.L, lambda p: _NEAR_OFFSETS)
    near_ptr, near_idx = _csr(r, cc, len(leaf_codes))
    return InteractionLists(far_ptr, far_idx, near_ptr, near_idx, tree.L, codes)


# ---------------------------------------------------------- comm plans

def _merge(intervals) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [(a, b) for a, b in out]


@dataclass
class CommPlan:
    """M2L exchange schedule.

    ``entries[(s, t)]`` lists ``(level, node index, begin col, end col)``
    blocks that rank ``s`` sends to rank ``t``, ordered by level then Morton
    order; blocks of all levels travel in the same message stream, cut into
    messages of at most ``buffer_bytes``. ``needs[t]`` maps (level, node) to
    the column intervals rank ``t`` must see of that source.
    """

    entries: dict[tuple[int, int], list[tuple[int, int, int, int]]]
    n_phi: dict[int, int]
    buffer_bytes: int | None
    needs: list[dict[tuple[int, int], list[tuple[int, int]]]]
    op_needs: list[dict[tuple[int, tuple[int, int, int]], tuple[int, int]]]

    def pair_samples(self, s: int, t: int) -> int:
        return sum((b - a) * self.n_phi[l] for l, _, a, b in self.entries.get((s, t), ()))

    def pair_bytes(self, s: int, t: int) -> int:
        return self.pair_samples(s, t) * SAMPLE_BYTES

    @property
    def chunk_samples(self) -> int | None:
        return None if self.buffer_bytes is None else max(1, self.buffer_bytes // SAMPLE_BYTES)

    def n_messages(self, s: int, t: int) -> int:
        n = self.pair_samples(s, t)
        if n == 0:
            return 0
        c = self.chunk_samples
        return 1 if c is None else -(-n // c)

    def destinations(self, s: int) -> list[int]:
        return sorted(t for (a, t) in self.entries if a == s)

    def sources(self, t: int) -> list[int]:
        return sorted(s for (s, b) in self.entries if b == t)

    def bytes_to(self, t: int) -> int:
        return sum(self.pair_bytes(s, t) for s in self.sources(t))

    def total_bytes(self) -> int:
        return sum(self.pair_bytes(s, t) for (s, t) in self.entries)


def _holdings(tree: DistributedTree, level: int, i: int) -> list[tuple[int, int, int]]:
    """(rank, begin col, end col) of every nonempty holding of a box."""
    ln = tree.levels[level]
    if ln.rank_lo[i] == ln.rank_hi[i]:
        return [(int(ln.rank_lo[i]), 0, ln.n_theta)]
    sm = tree.slice_maps[MortonKey(level, int(ln.codes[i]))]
    return [(r, a, b) for r, a, b in sorted(sm.entries) if b > a]


def build_m2l_comm_plan(tree: DistributedTree, lists: InteractionLists,
                        buffer_bytes: int | None = None) -> CommPlan:
    """Which columns of which source boxes every rank pair must exchange.

    A rank needs, for each far source of a box it holds columns of, those
    same columns of the source; every source is listed once per destination
    with the union of the needed ranges, intersected with what the sender
    owns. Fully local pairs produce no entry.
    """
    P = tree.n_ranks
    needs: list[dict] = [{} for _ in range(P)]
    op_needs: list[dict] = [{} for _ in range(P)]
    n_phi = {}
    for level in range(FIRST_FAR_LEVEL, tree.L + 1):
        ln = tree.levels[level]
        nt = ln.n_theta
        n_phi[level] = ln.n_phi
        ptr, idx = lists.far_ptr[level], lists.far_idx[level]
        if len(idx) == 0:
            continue
        obs = np.repeat(np.arange(len(ln.codes)), np.diff(ptr))
        coords = np.stack(decode(ln.codes, level - 1), axis=1)
        offs = coords[obs] - coords[idx]
        single = ln.rank_lo[obs] == ln.rank_hi[obs]
        # boxes held whole: need full columns of every far source
        t_arr = ln.rank_lo[obs[single]]
        for t, src in np.unique(np.stack([t_arr, idx[single]], axis=1), axis=0):
            needs[int(t)][(level, int(src))] = [(0, nt)]
        for t, o in _unique_offsets(t_arr, offs[single]):
            op_needs[t][(level, o)] = (0, nt)
        # plural observers: each user needs its own columns
        for j in np.nonzero(~single)[0]:
            i, src, off = int(obs[j]), int(idx[j]), tuple(int(v) for v in offs[j])
            for t, a, b in _holdings(tree, level, i):
                cur = needs[t].get((level, src))
                if cur != [(0, nt)]:
                    needs[t][(level, src)] = _merge((cur or []) + [(a, b)])
                ha, hb = op_needs[t].get((level, off), (a, b))
                op_needs[t][(level, off)] = (min(ha, a), max(hb, b))

    entries: dict[tuple[int, int], list] = {}
    for t in range(P):
        for (level, src), intervals in sorted(needs[t].items()):
            for s, a, b in _holdings(tree, level, src):
                if s == t:
                    continue
                for ia, ib in intervals:
                    lo, hi = max(a, ia), min(b, ib)
                    if hi > lo:
                        entries.setdefault((s, t), []).append((level, src, lo, hi))
    for key in entries:
        entries[key].sort()
    return CommPlan(entries, n_phi, buffer_bytes, needs, op_needs)


def _unique_offsets(t_arr: np.ndarray, offs: np.ndarray):
    if len(t_arr) == 0:
        return []
    u = np.unique(np.column_stack([t_arr, offs]), axis=0)
    return [(int(r[0]), (int(r[1]), int(r[2]), int(r[3]))) for r in u]


@dataclass
class NearPlan:
    """Leaves whose particles rank ``s`` sends to rank ``t``."""

    leaves: dict[tuple[int, int], np.ndarray]


def build_near_plan(tree: DistributedTree, lists: InteractionLists) -> NearPlan:
    rank = tree.rank_of_leaf
    obs = np.repeat(np.arange(len(lists.near_ptr) - 1), np.diff(lists.near_ptr))
    src = lists.near_idx
    s, t = rank[src], rank[obs]
    remote = s != t
    out: dict[tuple[int, int], np.ndarray] = {}
    if remote.any():
        trip = np.unique(np.stack([s[remote], t[remote], src[remote]], axis=1), axis=0)
        keys, starts = np.unique(trip[:, :2], axis=0, return_index=True)
        bounds = np.append(starts, len(trip))
        for (a, b), lo, hi in zip(keys, bounds[:-1], bounds[1:]):
            out[(int(a), int(b))] = trip[lo:hi, 2]
    return NearPlan(out)


# ------------------------------------------------------------- setup

class EvaluationSetup:
    """Shared, read-only metadata of one evaluation."""

    def __init__(self, particles: Particles, config: RunConfig):
        self.particles = particles
        self.config = config
        self.k = config.k
        leaf = config.leaf_diameter * config.wavelength
        self.tree_config = TreeConfig.for_points(particles.positions, leaf)
        L = self.tree_config.L
        self.samplings = {
            l: LevelSampling.for_box(l, self.tree_config.box_side(l), self.k, config.digits)
            for l in range(FIRST_FAR_LEVEL, L + 1)}
        self.dims = {l: s.dims for l, s in self.samplings.items()}
        self.tree = DistributedTree(particles.positions, self.tree_config, config.n_ranks,
                                    self.dims, config.alignment)
        if config.one_particle_per_leaf and self.tree.leaf_counts.max() > 1:
            raise ValueError("a leaf holds more than one particle")
        self.lists = build_interaction_lists(self.tree)
        self._plan = None
        self._near = None

    @property
    def L(self) -> int:
        return self.tree.L

    @property
    def far_levels(self) -> range:
        return range(FIRST_FAR_LEVEL, self.L + 1)

    @property
    def plan(self) -> CommPlan:
        if self._plan is None:
            self._plan = build_m2l_comm_plan(self.tree, self.lists, self.config.buffer_bytes)
        return self._plan

    @property
    def near_plan(self) -> NearPlan:
        if self._near is None:
            self._near = build_near_plan(self.tree, self.lists)
        return self._near

    def shift_table(self, level: int, down: bool = False) -> np.ndarray:
        """Parent-grid shift factors for the 8 child octants of a level-``level``
        parent (child to parent, or parent to child when ``down``)."""
        side = self.tree_config.box_side(level + 1)
        out = []
        for octant in range(8):
            off = (np.array([octant & 1, (octant >> 1) & 1, (octant >> 2) & 1]) - 0.5) * side
            out.append(shift_factor(-off if down else off, self.dims[level], self.k))
        return np.stack(out)


# --------------------------------------------------------- rank program

class RankState:
    def __init__(self, comm, setup: EvaluationSetup):
        self.comm = comm
        self.rank = comm.rank
        self.setup = setup
        self.tree = setup.tree
        self.mult: dict[int, dict[int, np.ndarray]] = {}
        self.local: dict[int, dict[int, np.ndarray]] = {}
        self.potentials: np.ndarray | None = None
        self.particle_index: np.ndarray | None = None
        self.temp_peak = 0

    # ---- ownership helpers

    def held(self, level: int) -> list[tuple[int, int, int]]:
        """(box index, begin col, end col) of every box this rank holds
        columns of (an empty slice of a plural box included)."""
        ln = self.tree.levels[level]
        r = self.rank
        idx = np.nonzero((ln.rank_lo <= r) & (ln.rank_hi >= r))[0]
        out = []
        for i in idx:
            if ln.rank_lo[i] == ln.rank_hi[i]:
                out.append((int(i), 0, ln.n_theta))
            else:
                a, b = self.tree.slice_maps[MortonKey(level, int(ln.codes[i]))].columns(r)
                out.append((int(i), a, b))
        return out

    def owned_leaves(self) -> tuple[int, int]:
        return self.tree.partition.rank_ranges[self.rank]

    def note_temp(self, *arrays) -> None:
        self.temp_peak = max(self.temp_peak, sum(a.nbytes for a in arrays))

    def record_memory(self) -> None:
        tree_bytes = sum(a.nbytes for d in (self.mult, self.local) for lv in d.values()
                         for a in lv.values())
        self.comm.note_memory("tree", tree_bytes)
        self.comm.note_memory("temporaries", self.temp_peak)


def _c2m(st: RankState) -> None:
    setup, tree = st.setup, st.tree
    a, b = st.owned_leaves()
    L = setup.L
    p0, p1 = tree.leaf_start[a], tree.leaf_start[b]
    pidx = tree.particle_order[p0:p1]
    st.particle_index = pidx
    seg = tree.leaf_start[a:b] - p0
    leaf_of = np.repeat(np.arange(a, b), tree.leaf_counts[a:b])
    st.rel = setup.particles.positions[pidx] - tree.levels[L].centers[leaf_of]
    st.seg = seg
    if L < FIRST_FAR_LEVEL:
        return
    dims = setup.dims[L]
    pats = c2m_batch(st.rel, setup.particles.intensities[pidx], seg, dims, setup.k)
    st.mult[L] = {i: pats[i - a] for i in range(a, b)}
    st.comm.record("c2m", flops=c2m_flops(len(pidx), dims[0] * dims[1]))


def _piece_holders(tree: DistributedTree, level: int, ci: int, parent_nt: int):
    """Who holds which parent-grid columns of child ``ci``'s interpolated data."""
    ln = tree.levels[level]
    if ln.rank_lo[ci] == ln.rank_hi[ci]:
        return [(int(ln.rank_lo[ci]), 0, parent_nt)]
    sm = tree.slice_maps[MortonKey(level, int(ln.codes[ci]))]
    return [(r, a, b) for r, (a, b) in sorted(sm.scaled(parent_nt, sm.n_phi).items()) if b > a]


def m2m_pass(st: RankState) -> None:
    setup, tree, comm, r = st.setup, st.tree, st.comm, st.rank
    for level in range(setup.L - 1, FIRST_FAR_LEVEL - 1, -1):
        lp, lc = tree.levels[level], tree.levels[level + 1]
        pdims, cdims = setup.dims[level], setup.dims[level + 1]
        nt_p = pdims[0]
        parent_of = np.searchsorted(lp.codes, lc.codes >> DIM)
        shifts = setup.shift_table(level)
        pieces: dict[int, tuple[int, int, np.ndarray]] = {}  # child -> (a, b, data)

        # whole children: batched serial interpolation + shift
        own = np.nonzero((lc.rank_lo == r) & (lc.rank_hi == r))[0]
        if len(own):
            x = np.stack([st.mult[level + 1][int(i)] for i in own])
            y = interpolate_array(x, pdims)
            y *= shifts[lc.codes[own] & 7]
            st.note_temp(x, y)
            comm.record("m2m.interp", flops=len(own) * grid_resample_flops(cdims, pdims))
            comm.record("m2m.shift", flops=CMUL * y.size)
            for j, i in enumerate(own):
                pieces[int(i)] = (0, nt_p, y[j])

        # plural children: fine-grained parallel interpolation
        for i in np.nonzero((lc.rank_lo <= r) & (lc.rank_hi >= r) & (lc.rank_hi > lc.rank_lo))[0]:
            key = MortonKey(level + 1, int(lc.codes[i]))
            sm = tree.slice_maps[key]
            dst = sm.scaled(*pdims)
            users = range(int(lc.rank_lo[i]), int(lc.rank_hi[i]) + 1)
            out = parallel_resample(comm, users, st.mult[level + 1][int(i)], sm.as_dict(), dst,
                                    cdims, pdims, ("m2m", level + 1, key.code), "m2m.interp")
            a, b = dst[r]
            out = out * shifts[key.code & 7][a:b]
            comm.record("m2m.shift", flops=CMUL * out.size)
            pieces[int(i)] = (a, b, out)

        st.mult[level] = {}
        # whole parents: sum the children in Morton order
        own_p = np.nonzero((lp.rank_lo == r) & (lp.rank_hi == r))[0]
        for pi in own_p:
            kids = np.nonzero(parent_of == pi)[0]
            acc = pieces[int(kids[0])][2].copy()
            for ci in kids[1:]:
                acc += pieces[int(ci)][2]
            comm.record("m2m.agg", flops=CADD * acc.size * (len(kids) - 1))
            st.mult[level][int(pi)] = acc

        # plural parents: point-to-point aggregation onto the parent slices
        plural_p = np.nonzero((lp.rank_lo <= r) & (lp.rank_hi >= r) & (lp.rank_hi > lp.rank_lo))[0]
        for pi in plural_p:
            sm = tree.slice_maps[MortonKey(level, int(lp.codes[pi]))]
            for ci in np.nonzero(parent_of == pi)[0]:
                if int(ci) not in pieces:
                    continue
                a, b, data = pieces[int(ci)]
                for t, pa, pb in sm.entries:
                    lo, hi = max(a, pa), min(b, pb)
                    if t != r and hi > lo:
                        comm.isend(t, ("agg", level, int(pi), int(ci)), data[lo - a:hi - a],
                                   phase="m2m.agg")
        for pi in plural_p:
            sm = tree.slice_maps[MortonKey(level, int(lp.codes[pi]))]
            pa, pb = sm.columns(r)
            acc = np.zeros((pb - pa, pdims[1]), dtype=complex)
            for ci in np.nonzero(parent_of == pi)[0]:
                for s, a, b in _piece_holders(tree, level + 1, int(ci), nt_p):
                    lo, hi = max(a, pa), min(b, pb)
                    if hi <= lo:
                        continue
                    if s == r:
                        pa_, pb_, data = pieces[int(ci)]
                        part = data[lo - pa_:hi - pa_]
                    else:
                        part = comm.recv(s, ("agg", level, int(pi), int(ci)))
                    acc[lo - pa:hi - pa] += part
                    comm.record("m2m.agg", flops=CADD * part.size)
            st.mult[level][int(pi)] = acc
        del pieces


def m2l_pass(st: RankState) -> OperatorCache:
    setup, tree, comm, r = st.setup, st.tree, st.comm, st.rank
    plan = setup.plan
    cache = OperatorCache(setup.k)
    sides = {l: setup.tree_config.box_side(l) for l in setup.far_levels}
    cache.build(plan.op_needs[r], setup.samplings, sides)
    comm.note_memory("operators", cache.nbytes)

    # issue every send of the plan at once, cut at the buffer limit
    send_bytes = 0
    for t in plan.destinations(r):
        blocks = [st.mult[l][i][a - _col0(st, l, i):b - _col0(st, l, i)].reshape(-1)
                  for l, i, a, b in plan.entries[(r, t)]]
        flat = np.concatenate(blocks)
        step = plan.chunk_samples or len(flat)
        for c0 in range(0, len(flat), step):
            comm.isend(t, ("m2l",), flat[c0:c0 + step], phase="m2l")
        send_bytes += flat.nbytes

    # incoming source data is staged in full-size arrays per (level, source)
    avail: dict[int, dict[int, np.ndarray]] = {l: {} for l in setup.far_levels}
    for l in setup.far_levels:
        for i, a, b in st.held(l):
            ln = tree.levels[l]
            if ln.rank_lo[i] == ln.rank_hi[i]:
                avail[l][i] = st.mult[l][i]
    for (l, i), intervals in plan.needs[r].items():
        if i not in avail[l]:
            full = np.zeros(setup.dims[l], dtype=complex)
            a0 = _col0(st, l, i) if i in st.mult[l] else 0
            if i in st.mult[l]:
                full[a0:a0 + len(st.mult[l][i])] = st.mult[l][i]
            avail[l][i] = full

    for l in setup.far_levels:
        st.local[l] = {i: np.zeros((b - a, setup.dims[l][1]), dtype=complex)
                      for i, a, b in st.held(l)}

    # observers whose sources are all local first, then the rest on arrival
    deferred = []
    for l in setup.far_levels:
        ln = tree.levels[l]
        ptr, idx = setup.lists.far_ptr[l], setup.lists.far_idx[l]
        local_src = (ln.rank_lo == r) & (ln.rank_hi == r)
        for i, a, b in st.held(l):
            srcs = idx[ptr[i]:ptr[i + 1]]
            if b > a and len(srcs) and local_src[srcs].all() and ln.rank_lo[i] == ln.rank_hi[i]:
                _translate(st, cache, avail, l, i, a, b)
            else:
                deferred.append((l, i, a, b))

    sources = plan.sources(r)
    pending = {s: plan.n_messages(s, r) for s in sources}
    chunks: dict[int, list] = {s: [] for s in sources}
    reqs = {s: comm.irecv(s, ("m2l",)) for s in sources if pending[s]}
    recv_bytes = 0
    while reqs:
        order = sorted(reqs)
        j, payload = comm.wait_any([reqs[s] for s in order])
        s = order[j]
        chunks[s].append(payload)
        recv_bytes += payload.nbytes
        pending[s] -= 1
        if pending[s]:
            reqs[s] = comm.irecv(s, ("m2l",))
        else:
            del reqs[s]
            _unpack(setup, avail, plan.entries[(s, r)], np.concatenate(chunks[s]))
            chunks[s] = []
    comm.note_memory("buffers", send_bytes + recv_bytes)

    for l, i, a, b in deferred:
        if b > a:
            _translate(st, cache, avail, l, i, a, b)
    return cache


def _col0(st: RankState, level: int, i: int) -> int:
    ln = st.tree.levels[level]
    if ln.rank_lo[i] == ln.rank_hi[i]:
        return 0
    return st.tree.slice_maps[MortonKey(level, int(ln.codes[i]))].columns(st.rank)[0]


def _unpack(setup, avail, entries, flat) -> None:
    pos = 0
    for l, i, a, b in entries:
        n = (b - a) * setup.dims[l][1]
        avail[l][i][a:b] = flat[pos:pos + n].reshape(b - a, -1)
        pos += n
    if pos != len(flat):
        raise RuntimeError("received M2L data does not match the plan")


def _translate(st: RankState, cache: OperatorCache, avail, l: int, i: int, a: int, b: int) -> None:
    """local[l][i] += sum over far sources (Morton order) of T * M."""
    setup = st.setup
    ln = st.tree.levels[l]
    ptr, idx = setup.lists.far_ptr[l], setup.lists.far_idx[l]
    srcs = idx[ptr[i]:ptr[i + 1]]
    if len(srcs) == 0:
        return
    coords = np.stack(decode(ln.codes[np.append(srcs, i)], l - 1), axis=1)
    offs = coords[-1] - coords[:-1]
    terms = np.stack([avail[l][int(j)][a:b] * cache.get(l, tuple(int(v) for v in o), (a, b))
                      for j, o in zip(srcs, offs)])
    st.local[l][i] += np.add.reduceat(terms, [0], axis=0)[0]
    st.comm.record("m2l", flops=CMUL_ADD * terms.size)


def l2l_pass(st: RankState) -> None:
    setup, tree, comm, r = st.setup, st.tree, st.comm, st.rank
    for level in range(FIRST_FAR_LEVEL, setup.L):
        lp, lc = tree.levels[level], tree.levels[level + 1]
        pdims, cdims = setup.dims[level], setup.dims[level + 1]
        nt_p = pdims[0]
        parent_of = np.searchsorted(lp.codes, lc.codes >> DIM)
        # parent quadrature weights ride along with the shift
        shifts = setup.shift_table(level, down=True) * quadrature_weights(*pdims)
        wc = quadrature_weights(*cdims)
        pieces: dict[int, tuple[int, int, np.ndarray]] = {}

        # plural parents: owners of parent columns feed the child-piece holders
        plural_p = np.nonzero((lp.rank_lo <= r) & (lp.rank_hi >= r) & (lp.rank_hi > lp.rank_lo))[0]
        for pi in plural_p:
            sm = tree.slice_maps[MortonKey(level, int(lp.codes[pi]))]
            pa, pb = sm.columns(r)
            if pb <= pa:
                continue
            for ci in np.nonzero(parent_of == pi)[0]:
                for s, a, b in _piece_holders(tree, level + 1, int(ci), nt_p):
                    lo, hi = max(a, pa), min(b, pb)
                    if s != r and hi > lo:
                        comm.isend(s, ("l2l", level, int(pi), int(ci)),
                                   st.local[level][int(pi)][lo - pa:hi - pa], phase="l2l.agg")
        for pi in plural_p:
            sm = tree.slice_maps[MortonKey(level, int(lp.codes[pi]))]
            for ci in np.nonzero(parent_of == pi)[0]:
                mine = [h for h in _piece_holders(tree, level + 1, int(ci), nt_p) if h[0] == r]
                if not mine:
                    continue
                _, a, b = mine[0]
                piece = np.empty((b - a, pdims[1]), dtype=complex)
                for t, pa, pb in sm.entries:
                    lo, hi = max(a, pa), min(b, pb)
                    if hi <= lo:
                        continue
                    if t == r:
                        piece[lo - a:hi - a] = st.local[level][int(pi)][lo - pa:hi - pa]
                    else:
                        piece[lo - a:hi - a] = comm.recv(t, ("l2l", level, int(pi), int(ci)))
                pieces[int(ci)] = (a, b, piece)
        # whole parents hand the full grid to every child
        for pi in np.nonzero((lp.rank_lo == r) & (lp.rank_hi == r))[0]:
            for ci in np.nonzero(parent_of == pi)[0]:
                pieces[int(ci)] = (0, nt_p, st.local[level][int(pi)])

        # whole children: shift, batched anterpolation
        own = np.nonzero((lc.rank_lo == r) & (lc.rank_hi == r))[0]
        if len(own):
            x = np.stack([pieces[int(i)][2] for i in own]) * shifts[lc.codes[own] & 7]
            comm.record("l2l.shift", flops=2 * CMUL * x.size)
            y = interpolate_adjoint_array(x, cdims) / wc
            st.note_temp(x, y)
            comm.record("l2l.interp", flops=len(own) * grid_resample_flops(pdims, cdims))
            for j, i in enumerate(own):
                st.local[level + 1][int(i)] += y[j]
            comm.record("l2l.agg", flops=CADD * y.size)

        # plural children: parallel anterpolation
        for i in np.nonzero((lc.rank_lo <= r) & (lc.rank_hi >= r) & (lc.rank_hi > lc.rank_lo))[0]:
            key = MortonKey(level + 1, int(lc.codes[i]))
            sm = tree.slice_maps[key]
            src = sm.scaled(*pdims)
            a, b, piece = pieces.get(int(i), (0, 0, np.zeros((0, pdims[1]), dtype=complex)))
            piece = piece * shifts[key.code & 7][a:b]
            comm.record("l2l.shift", flops=2 * CMUL * piece.size)
            users = range(int(lc.rank_lo[i]), int(lc.rank_hi[i]) + 1)
            out = parallel_resample(comm, users, piece, src, sm.as_dict(), pdims, cdims,
                                    ("l2l", level + 1, key.code), "l2l.interp", adjoint=True)
            c0, c1 = sm.columns(r)
            out /= wc[c0:c1]
            st.local[level + 1][int(i)] += out
            comm.record("l2l.agg", flops=CADD * out.size)


def _l2o(st: RankState) -> np.ndarray:
    setup, tree = st.setup, st.tree
    a, b = st.owned_leaves()
    L = setup.L
    if L < FIRST_FAR_LEVEL:
        return np.zeros(len(st.particle_index), dtype=complex)
    locs = np.stack([st.local[L][i] for i in range(a, b)])
    rule = QuadratureRule(setup.dims[L])
    out = l2o_batch(locs, st.rel, st.seg, rule, setup.k)
    st.comm.record("l2o", flops=c2m_flops(len(out), locs[0].size) + CMUL * locs.size)
    return out


def _near(st: RankState) -> np.ndarray:
    setup, tree, comm, r = st.setup, st.tree, st.comm, st.rank
    plan = setup.near_plan
    parts = setup.particles

    def leaf_data(leaves):
        idx = np.concatenate([tree.leaf_particles(int(j)) for j in leaves])
        return parts.positions[idx], parts.intensities[idx]

    for (s, t), leaves in sorted(plan.leaves.items()):
        if s == r:
            pos, u = leaf_data(leaves)
            comm.isend(t, ("near",), (pos, u), phase="near")
    remote: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for (s, t), leaves in sorted(plan.leaves.items()):
        if t == r:
            pos, u = comm.recv(s, ("near",))
            offs = np.cumsum([0] + [int(tree.leaf_counts[j]) for j in leaves])
            for n, j in enumerate(leaves):
                remote[int(j)] = (pos[offs[n]:offs[n + 1]], u[offs[n]:offs[n + 1]])

    a, b = st.owned_leaves()
    out = np.empty(len(st.particle_index), dtype=complex)
    ptr, idx = setup.lists.near_ptr, setup.lists.near_idx
    pairs = 0
    for leaf in range(a, b):
        srcs = idx[ptr[leaf]:ptr[leaf + 1]]
        blocks = [remote[int(j)] if int(j) in remote else leaf_data([j]) for j in srcs]
        spos = np.concatenate([p for p, _ in blocks])
        su = np.concatenate([u for _, u in blocks])
        obs = parts.positions[tree.leaf_particles(leaf)]
        o0 = tree.leaf_start[leaf] - tree.leaf_start[a]
        out[o0:o0 + len(obs)] = near_field(obs, spos, su, setup.k)
        pairs += len(obs) * len(spos)
    comm.record("near", flops=PAIR_FLOPS * pairs)
    return out


@dataclass
class RankResult:
    rank: int
    particle_index: np.ndarray
    potentials: np.ndarray | None
    mult: dict
    local: dict


def rank_program(comm, setup: EvaluationSetup, keep_expansions: bool = False) -> RankResult:
    """One rank's share of C2M, M2M, M2L, L2L, L2O and the near field."""
    st = RankState(comm, setup)
    stop = setup.config.stop_after
    far = setup.L >= FIRST_FAR_LEVEL

    def result(pot=None):
        st.record_memory()
        return RankResult(st.rank, st.particle_index, pot,
                          st.mult if keep_expansions else {}, st.local if keep_expansions else {})

    with comm.timed("c2m"):
        _c2m(st)
    if stop == "c2m":
        return result()
    with comm.timed("m2m"):
        if far:
            m2m_pass(st)
    if stop == "m2m":
        return result()
    with comm.timed("m2l"):
        if far:
            m2l_pass(st)
    if stop == "m2l":
        return result()
    with comm.timed("l2l"):
        if far:
            l2l_pass(st)
    if stop == "l2l":
        return result()
    with comm.timed("l2o"):
        pot = _l2o(st)
    if stop == "l2o":
        return result(pot)
    with comm.timed("near"):
        pot = pot + _near(st)
    return result(pot)


@dataclass
class EvaluationResult:
    potentials: np.ndarray | None
    ledger: CostLedger
    setup: EvaluationSetup
    ranks: list[RankResult]


def run_evaluation(particles: Particles, config: RunConfig,
                   keep_expansions: bool = False, setup: EvaluationSetup | None = None) -> EvaluationResult:
    setup = setup or EvaluationSetup(particles, config)
    world = World(config.n_ranks, config.scheduler, config.seed)
    results = world.run(rank_program, setup, keep_expansions)
    pot = None
    if results[0].potentials is not None:
        pot = np.empty(len(particles), dtype=complex)
        for res in results:
            pot[res.particle_index] = res.potentials
    return EvaluationResult(pot, world.ledger, setup, results)


def evaluate_potential(particles: Particles, config: RunConfig) -> tuple[np.ndarray, CostLedger]:
    """Potentials at every particle (self term skipped) and the cost ledger."""
    res = run_evaluation(particles, config)
    return res.potentials, res.ledger


def with_ranks(config: RunConfig, n_ranks: int, **kw) -> RunConfig:
    return replace(config, n_ranks=n_ranks, **kw)
