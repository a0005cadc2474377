"""Subcube tessellation, section bond lattices and percolation highways.

Each slab one subcube thick is projected onto a coordinate plane.  Every
subsquare of the projection carries one bond drawn along its diagonal, with
the diagonal direction alternating like a checkerboard, so the bonds form a
square lattice rotated by 45 degrees whose vertices are the subsquare corners
(i, j) with i + j even.  A bond is open when its subcube holds a node.

Crossings of a rectangle are counted as a unit-capacity max-flow from every
vertex on the entry side to every vertex on the exit side (Menger), and
recovered as explicit bond paths by decomposing that flow.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .netgen import NetworkInstance

LEMMA1_P_MIN = 5 / 6


@dataclass(frozen=True)
class PercolationConfig:
    c: float = 1.5
    kappa: float = 1.3
    delta: float | None = None

    def __post_init__(self):
        if self.c <= 0 or self.kappa <= 0:
            raise ValueError("c and kappa must be positive")

    @property
    def p(self) -> float:
        """Occupancy probability of a subcube, 1 - exp(-c^3)."""
        return -math.expm1(-self.c**3)

    def lemma1_margin(self, ratio: float) -> float:
        """1 + ratio + kappa*log(6(1-p)); negative when the crossing lemma applies."""
        return 1 + ratio + self.kappa * math.log(6 * (1 - self.p))

    def diagnostics(self, lam: float, mu: float, nu: float) -> list[str]:
        notes = []
        if not LEMMA1_P_MIN < self.p < 1:
            notes.append(f"occupancy p={self.p:.4f} outside (5/6, 1)")
        if lam > 0 and nu > 0:
            for name, ratio in (("x", lam / nu), ("z", nu / lam)):
                margin = self.lemma1_margin(ratio)
                if margin >= 0:
                    notes.append(f"{name}-crossing condition fails (margin {margin:.3f})")
        return notes


# ---------------------------------------------------------------------------
# tessellation


@dataclass(frozen=True)
class SubcubeGrid:
    c: float
    dims: tuple[int, int, int]
    cell_sides: np.ndarray  # actual cell edge per axis, >= c unless the side is shorter
    cell_of: np.ndarray  # (n, 3) subcube index of every node
    counts: np.ndarray  # dims-shaped node counts
    relay_node: np.ndarray  # dims-shaped node nearest the cell centre, -1 when empty
    positions: np.ndarray = field(repr=False)  # effective node coordinates
    _order: np.ndarray = field(repr=False)
    _starts: np.ndarray = field(repr=False)

    @property
    def occupancy(self) -> np.ndarray:
        return self.counts > 0

    def flat_index(self, cells) -> np.ndarray:
        cells = np.asarray(cells)
        return np.ravel_multi_index(tuple(np.moveaxis(cells, -1, 0)), self.dims)

    def members(self, cell) -> np.ndarray:
        k = int(self.flat_index(np.asarray(cell)))
        return self._order[self._starts[k] : self._starts[k + 1]]

    def cell_bounds(self, cells) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(cells, dtype=float) * self.cell_sides
        return lo, lo + self.cell_sides


def choose_relays(grid: SubcubeGrid, cells: np.ndarray) -> np.ndarray:
    """One node per cell of a path: shortest possible longest hop, then least total length."""
    cands = [grid.members(cell) for cell in cells]
    pos = grid.positions
    hops = [
        np.linalg.norm(pos[a][:, None, :] - pos[b][None, :, :], axis=-1)
        for a, b in zip(cands[:-1], cands[1:])
    ]
    worst = np.zeros(len(cands[0]))
    for d in hops:
        worst = np.min(np.maximum(worst[:, None], d), axis=0)
    limit = worst.min() * (1 + 1e-12)
    total = np.zeros(len(cands[0]))
    back = []
    for d in hops:
        step = np.where(d <= limit, total[:, None] + d, np.inf)
        back.append(np.argmin(step, axis=0))
        total = step.min(axis=0)
    k = int(np.argmin(total))
    picks = [k]
    for b in reversed(back):
        k = int(b[k])
        picks.append(k)
    picks.reverse()
    return np.array([c[i] for c, i in zip(cands, picks)], dtype=np.int64)


def grid_dims(sides, c: float) -> tuple[int, int, int]:
    """Whole subcubes per axis; cells stretch slightly so the cuboid tiles exactly."""
    return tuple(max(1, math.floor(s / c + 1e-9)) for s in sides)


def tessellate(instance: NetworkInstance, c: float) -> SubcubeGrid:
    """Assign every node to its subcube of the effective cuboid.

    Each axis holds floor(side / c) cells, so cells are at least c wide and
    none is a thin sliver with depressed occupancy.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    sides = instance.effective_sides
    dims = grid_dims(sides, c)
    cell_sides = sides / np.array(dims)
    cell_sides.setflags(write=False)
    cell_of = np.floor(instance.effective_positions / cell_sides).astype(np.int64)
    cell_of = np.clip(cell_of, 0, np.array(dims) - 1)
    flat = np.ravel_multi_index(cell_of.T, dims)
    total = math.prod(dims)
    counts = np.bincount(flat, minlength=total)
    order = np.argsort(flat, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)))
    centre = (cell_of + 0.5) * cell_sides
    off = np.sum((instance.effective_positions - centre) ** 2, axis=1)
    by_cell = np.lexsort((np.arange(instance.n), off, flat))
    relay = np.full(total, -1, dtype=np.int64)
    nonempty = counts > 0
    relay[nonempty] = by_cell[starts[:-1][nonempty]]
    cell_of.setflags(write=False)
    return SubcubeGrid(
        c=c,
        dims=dims,
        cell_sides=cell_sides,
        cell_of=cell_of,
        counts=counts.reshape(dims),
        relay_node=relay.reshape(dims),
        positions=instance.effective_positions,
        _order=order,
        _starts=starts,
    )


def partition_rectangles(m_across: int, kappa: float) -> tuple[list[tuple[int, int]], float]:
    """Split ``m_across`` rows into rectangles of height kappa*ln(m) - eps_m.

    eps_m >= 0 is the smallest correction making m / (kappa*ln(m) - eps_m) an
    integer, i.e. the rectangle count is ceil(m / (kappa*ln m)).  Integer row
    counts differ by at most one and tile the section exactly.
    """
    if m_across < 2:
        raise ValueError("need at least two rows to partition")
    raw = kappa * math.log(m_across)
    if raw < 1:
        raise ValueError(f"kappa*log(m)={raw:.3f} < 1: no valid rectangle partition")
    count = min(m_across, math.ceil(m_across / raw - 1e-12))
    eps_m = raw - m_across / count
    edges = np.rint(np.linspace(0, m_across, count + 1)).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])], eps_m


def lemma1_failure_bound(
    p: float, kappa: float, delta: float, m_x: int, m_z: int, epsilon_m: float
) -> float:
    """Closed-form bound on Pr{N <= delta*log m_z} from the crossing lemma, clamped to [0, 1]."""
    if not LEMMA1_P_MIN < p < 1:
        raise ValueError("bound derived for 5/6 < p < 1 only")
    q = 6 * (1 - p)
    exponent = delta * math.log(p / (1 - p)) + kappa * math.log(q)
    base = math.log(4 / 3) + math.log(m_x + 1) + exponent * math.log(m_z) - epsilon_m * math.log(q)
    power = m_z / (kappa * math.log(m_z) - epsilon_m)
    log_bound = power * base
    if log_bound >= 0:
        return 1.0
    return math.exp(log_bound)


# ---------------------------------------------------------------------------
# section lattices and crossings


class Direction(str, Enum):
    ALONG_A = "a"  # entry at a = 0, exit at a = m_a
    ALONG_B = "b"


@dataclass(frozen=True)
class Rectangle:
    lo: int
    hi: int  # rows [lo, hi) of the across axis


@dataclass(frozen=True)
class SectionLattice:
    open: np.ndarray  # (m_a, m_b) bool, one bond per subsquare
    axes: tuple[int, int] = (0, 2)
    normal_axis: int | None = None
    slab_index: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.open.shape

    @property
    def bond_count(self) -> int:
        return self.open.size

    @staticmethod
    def bond_endpoints(u: int, v: int) -> tuple[tuple[int, int], tuple[int, int]]:
        if (u + v) % 2 == 0:
            return (u, v), (u + 1, v + 1)
        return (u, v + 1), (u + 1, v)

    def full(self, direction: Direction) -> Rectangle:
        m_a, m_b = self.shape
        return Rectangle(0, m_b if direction is Direction.ALONG_A else m_a)


def section_lattice(grid: SubcubeGrid, normal_axis: int, slab_index: int) -> SectionLattice:
    axes = tuple(a for a in range(3) if a != normal_axis)
    occ = np.take(grid.occupancy, slab_index, axis=normal_axis)
    return SectionLattice(occ.copy(), axes, normal_axis, slab_index)


class _CrossingFlow:
    """Residual network of a rectangle, always oriented to cross along axis 0."""

    def __init__(self, lattice: SectionLattice, rect: Rectangle, direction: Direction):
        grid = lattice.open if direction is Direction.ALONG_A else lattice.open.T
        self.direction = Direction(direction)
        length, across = grid.shape
        if not 0 <= rect.lo <= rect.hi <= across:
            raise ValueError("rectangle outside the lattice")
        self.length = length
        self.lo, self.hi = rect.lo, rect.hi
        height = rect.hi - rect.lo
        self.stride = height + 1

        us, vs = np.nonzero(grid[:, rect.lo : rect.hi])
        vs = vs + rect.lo
        self.bonds = list(zip(us.tolist(), vs.tolist()))
        ea, eb = [], []
        adj: dict[int, list[int]] = {}
        for e, (u, v) in enumerate(self.bonds):
            (i0, j0), (i1, j1) = SectionLattice.bond_endpoints(u, v)
            a, b = self._vid(i0, j0), self._vid(i1, j1)
            ea.append(a)
            eb.append(b)
            adj.setdefault(a, []).append(e)
            adj.setdefault(b, []).append(e)
        self.ea, self.eb, self.adj = ea, eb, adj
        self.flow = [0] * len(self.bonds)  # +1 means ea -> eb
        self.entry = [v for v in adj if v // self.stride == 0]
        self.exit_row = length
        self.value = 0

    def _vid(self, i: int, j: int) -> int:
        return i * self.stride + (j - self.lo)

    def _is_exit(self, vid: int) -> bool:
        return vid // self.stride == self.exit_row

    def augment(self) -> bool:
        parent: dict[int, tuple[int, int] | None] = {v: None for v in self.entry}
        queue = deque(self.entry)
        ea, eb, flow, adj = self.ea, self.eb, self.flow, self.adj
        while queue:
            x = queue.popleft()
            for e in adj[x]:
                if x == ea[e]:
                    y, room = eb[e], 1 - flow[e]
                else:
                    y, room = ea[e], 1 + flow[e]
                if room <= 0 or y in parent:
                    continue
                parent[y] = (x, e)
                if self._is_exit(y):
                    self._push(parent, y)
                    return True
                queue.append(y)
        return False

    def _push(self, parent, y: int) -> None:
        while parent[y] is not None:
            x, e = parent[y]
            self.flow[e] += 1 if x == self.ea[e] else -1
            y = x
        self.value += 1

    def solve(self, limit: int | None = None) -> int:
        while (limit is None or self.value < limit) and self.augment():
            pass
        return self.value

    def decompose(self) -> list[list[tuple[int, int]]]:
        """Split the current flow into edge-disjoint entry-to-exit bond paths."""
        out: dict[int, list[tuple[int, int]]] = {}
        for e, f in enumerate(self.flow):
            if f > 0:
                out.setdefault(self.ea[e], []).append((e, self.eb[e]))
            elif f < 0:
                out.setdefault(self.eb[e], []).append((e, self.ea[e]))
        paths = []
        for start in self.entry:
            while out.get(start):
                walk_v = [start]
                walk_e: list[int] = []
                seen = {start: 0}
                v = start
                while not self._is_exit(v):
                    e, w = out[v].pop()
                    if w in seen:  # drop the circulation just closed
                        k = seen[w]
                        for dropped in walk_v[k + 1 :]:
                            del seen[dropped]
                        walk_v = walk_v[: k + 1]
                        walk_e = walk_e[:k]
                        v = w
                        continue
                    walk_e.append(e)
                    walk_v.append(w)
                    seen[w] = len(walk_v) - 1
                    v = w
                paths.append(walk_e)
        result = []
        for edges in paths:
            bonds = [self.bonds[e] for e in edges]
            if self.direction is Direction.ALONG_B:
                bonds = [(v, u) for u, v in bonds]
            result.append(bonds)
        return result


def count_edge_disjoint_crossings(
    lattice: SectionLattice,
    rect: Rectangle,
    direction: Direction = Direction.ALONG_A,
    limit: int | None = None,
) -> int:
    """Maximum number of pairwise edge-disjoint open crossings of ``rect``.

    Augmenting paths are found by multi-source BFS (Edmonds-Karp), O(V*E)
    in the worst case.  With ``limit`` the search stops once that many
    crossings are found.
    """
    return _CrossingFlow(lattice, rect, Direction(direction)).solve(limit)


def min_rectangle_crossings(
    lattice: SectionLattice,
    kappa: float,
    direction: Direction = Direction.ALONG_A,
    limit: int | None = None,
) -> int:
    """N: the fewest crossings found in any rectangle of the section's partition.

    Counts are capped at ``limit`` when given, which is enough to decide
    events such as N <= delta*log(m).
    """
    direction = Direction(direction)
    m_across = lattice.shape[1] if direction is Direction.ALONG_A else lattice.shape[0]
    rects, _ = partition_rectangles(m_across, kappa)
    return min(
        count_edge_disjoint_crossings(lattice, Rectangle(lo, hi), direction, limit) for lo, hi in rects
    )


class CrossingShortfall(RuntimeError):
    def __init__(self, quota: int, available: int):
        super().__init__(f"requested {quota} crossings, only {available} exist")
        self.quota = quota
        self.available = available


def _across_mean(path, direction: Direction) -> float:
    k = 1 if direction is Direction.ALONG_A else 0
    return float(np.mean([b[k] for b in path]))


def extract_crossing_paths(
    lattice: SectionLattice,
    rect: Rectangle,
    quota: int,
    direction: Direction = Direction.ALONG_A,
) -> list[list[tuple[int, int]]]:
    """Return ``quota`` edge-disjoint crossings as lists of bonds (u, v).

    Paths come back sorted by their mean across-axis position, lowest first.
    Raises CrossingShortfall when fewer than ``quota`` crossings exist.
    """
    if quota < 0:
        raise ValueError("quota must be nonnegative")
    if quota == 0:
        return []
    direction = Direction(direction)
    flow = _CrossingFlow(lattice, rect, direction)
    if flow.solve(limit=quota) < quota:
        raise CrossingShortfall(quota, flow.value)
    paths = flow.decompose()
    paths.sort(key=lambda p: _across_mean(p, direction))
    return paths


def all_crossing_paths(lattice, rect, direction=Direction.ALONG_A):
    """Every crossing of a maximum edge-disjoint family, sorted across the rectangle."""
    direction = Direction(direction)
    flow = _CrossingFlow(lattice, rect, direction)
    flow.solve()
    paths = flow.decompose()
    paths.sort(key=lambda p: _across_mean(p, direction))
    return paths


# ---------------------------------------------------------------------------
# highway system


@dataclass(frozen=True)
class Family:
    """One highway direction: which sections host it and how it crosses them."""

    name: str
    crossing_axis: int
    normal_axis: int

    @property
    def across_axis(self) -> int:
        return 3 - self.crossing_axis - self.normal_axis

    def lattice_direction(self) -> Direction:
        a, _ = sorted((self.crossing_axis, self.across_axis))
        return Direction.ALONG_A if self.crossing_axis == a else Direction.ALONG_B


AXIS_NAMES = "xyz"


def route_families(exponents) -> tuple[Family, ...]:
    """Highway families in routing order.

    Full 3D networks use x-highways and z-highways in slabs along y and
    y-highways in slabs along x.  A flat network (one zero exponent) keeps the
    two in-plane families of its single layer of slabs.
    """
    flat = [k for k, e in enumerate(exponents) if e == 0]
    if not flat:
        return (Family("x", 0, 1), Family("y", 1, 0), Family("z", 2, 1))
    f = flat[0]
    p, q = (a for a in range(3) if a != f)
    return (Family(AXIS_NAMES[p], p, f), Family(AXIS_NAMES[q], q, f))


@dataclass
class Highway:
    hid: int
    family: str
    section: int
    rect: int
    rank: int  # position among the rectangle's crossings, lowest first
    cells: np.ndarray  # (L, 3) subcube indices
    nodes: np.ndarray  # (L,) relay node indices

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass
class RectangleRecord:
    family: str
    section: int
    index: int
    lo: int
    hi: int
    crossings: int
    highway_ids: list[int]


@dataclass
class HighwaySystem:
    families: tuple[Family, ...]
    dims: tuple[int, int, int]
    c: float
    cell_sides: tuple[float, float, float]
    highways: list[Highway]
    rectangles: list[RectangleRecord]
    bounds: dict[str, list[tuple[int, int]]]  # rectangle rows per family
    epsilon_m: dict[str, float]
    delta_hat: dict[str, float]
    failed: bool
    notes: list[str] = field(default_factory=list)

    def family(self, name: str) -> Family:
        return next(f for f in self.families if f.name == name)

    def paths(self, name: str) -> list[Highway]:
        return [h for h in self.highways if h.family == name]

    def rectangle(self, name: str, section: int, index: int) -> RectangleRecord:
        return self._rect_index[(name, section, index)]

    def __post_init__(self):
        self._rect_index = {(r.family, r.section, r.index): r for r in self.rectangles}

    def to_dict(self) -> dict:
        return {
            "families": [f.name for f in self.families],
            "dims": list(self.dims),
            "c": self.c,
            "cell_sides": list(self.cell_sides),
            "failed": self.failed,
            "delta_hat": self.delta_hat,
            "epsilon_m": self.epsilon_m,
            "rectangles": [
                {
                    "family": r.family,
                    "section": r.section,
                    "index": r.index,
                    "rows": [r.lo, r.hi],
                    "crossings": r.crossings,
                }
                for r in self.rectangles
            ],
            "paths": [
                {"id": h.hid, "family": h.family, "section": h.section, "rect": h.rect,
                 "nodes": h.nodes.tolist()}
                for h in self.highways
            ],
            "notes": self.notes,
        }


def _family_partition(m_across: int, kappa: float, notes: list[str], name: str):
    try:
        return partition_rectangles(m_across, kappa)
    except ValueError:
        notes.append(f"{name}: section too thin to partition, one rectangle used")
        return [(0, m_across)], 0.0


def build_highway_system(grid: SubcubeGrid, config: PercolationConfig, exponents=(1 / 3,) * 3) -> HighwaySystem:
    """Extract every rectangle's maximum set of edge-disjoint crossings in every section.

    A rectangle with no crossing marks the system as failed.
    """
    families = route_families(exponents)
    notes: list[str] = []
    highways: list[Highway] = []
    records: list[RectangleRecord] = []
    bounds, eps, delta_hat = {}, {}, {}
    for fam in families:
        m_across = grid.dims[fam.across_axis]
        rects, eps_m = _family_partition(m_across, config.kappa, notes, fam.name)
        bounds[fam.name], eps[fam.name] = rects, eps_m
        direction = fam.lattice_direction()
        min_cross = math.inf
        for s in range(grid.dims[fam.normal_axis]):
            lattice = section_lattice(grid, fam.normal_axis, s)
            for j, (lo, hi) in enumerate(rects):
                bond_paths = all_crossing_paths(lattice, Rectangle(lo, hi), direction)
                ids = []
                for rank, bonds in enumerate(bond_paths):
                    cells = np.zeros((len(bonds), 3), dtype=np.int64)
                    cells[:, fam.normal_axis] = s
                    cells[:, lattice.axes[0]] = [b[0] for b in bonds]
                    cells[:, lattice.axes[1]] = [b[1] for b in bonds]
                    nodes = choose_relays(grid, cells)
                    hid = len(highways)
                    highways.append(Highway(hid, fam.name, s, j, rank, cells, nodes))
                    ids.append(hid)
                records.append(RectangleRecord(fam.name, s, j, lo, hi, len(ids), ids))
                min_cross = min(min_cross, len(ids))
        delta_hat[fam.name] = min_cross / math.log(m_across) if m_across > 1 else float(min_cross)
    failed = any(r.crossings == 0 for r in records)
    if failed:
        zero = sum(r.crossings == 0 for r in records)
        notes.append(f"{zero} rectangle(s) without any crossing")
    sides = tuple(float(v) for v in grid.cell_sides)
    return HighwaySystem(
        families, grid.dims, grid.c, sides, highways, records, bounds, eps, delta_hat, failed, notes
    )


def highway_system_for(instance: NetworkInstance, config: PercolationConfig) -> tuple[SubcubeGrid, HighwaySystem]:
    grid = tessellate(instance, config.c)
    for note in config.diagnostics(*instance.config.exponents):
        warnings.warn(note, stacklevel=2)
    return grid, build_highway_system(grid, config, instance.config.exponents)
