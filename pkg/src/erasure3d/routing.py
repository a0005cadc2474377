"""Seven-phase highway routing with TDMA spatial reuse and ARQ.

Phases run back to back: draining, first highway, interchange, second
highway, interchange, third highway, delivery.  Within a phase every subcube
owns one slot of a TDMA round of t = K^3 slots, where same-slot subcubes sit
on a reuse grid of spacing K subcubes.  A node that holds a packet retries it
once per round until the channel lets it through (ARQ), so the number of
rounds a packet occupies a transmitter is geometric with the link's
per-slot success probability.

Interference is evaluated against every transmitter scheduled in the phase
that shares the slot, whether or not it happens to hold a packet; success
probabilities are therefore lower bounds on the true per-slot ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import k_alpha, tdma_root
from .channel import TRUNCATION, DecayFamily, ErasureModel, StalledLinkError
from .netgen import NetworkInstance
from .percolation import HighwaySystem, SubcubeGrid

ACCESS_PHASES = ("drain", "i1", "i2", "deliver")
HIGHWAY_DISTANCE = 2 * math.sqrt(3)
POLY_K_MARGIN = 1e-6


# ---------------------------------------------------------------------------
# TDMA parameters


def tdma_k_exponential(c: float, d: float, gamma: float) -> float:
    """Smallest reuse multiplier keeping the layered interference bound at most 1."""
    if not 0 < gamma < 1 or c <= 0 or d < 1:
        raise ValueError("need 0 < gamma < 1, c > 0, d >= 1")
    return 1 + math.log2(tdma_root()) / (c * (d + 1) * math.log2(gamma))


def tdma_k_polynomial(c: float, d: float, alpha: float) -> float:
    if alpha <= 3:
        raise ValueError("interference series diverges for alpha <= 3")
    return 1 + (2 * (13 + k_alpha(alpha))) ** (1 / alpha) / (c * (d + 1)) + POLY_K_MARGIN


def tdma_k(model: ErasureModel, c: float, d: float) -> float:
    if model.family is DecayFamily.EXPONENTIAL:
        return tdma_k_exponential(c, d, model.gamma)
    return tdma_k_polynomial(c, d, model.alpha)


def access_hop_units(kappa: float, m: int) -> float:
    """Access-hop reach kappa*ln(m) + sqrt(2), in subcube sides."""
    return kappa * math.log(max(m, 2)) + math.sqrt(2)


@dataclass(frozen=True)
class RoutingConfig:
    w: float | None = None  # global slice width; None slices each rectangle per crossing
    packets_per_source: int = 1
    slot_budget: float | None = None  # None: 1e4 * pps * n^max_exp TDMA rounds
    d_highway: float = HIGHWAY_DISTANCE
    trace: bool = False

    def __post_init__(self):
        if self.packets_per_source < 1:
            raise ValueError("packets_per_source must be positive")
        if self.w is not None and self.w <= 0:
            raise ValueError("w must be positive")


@dataclass(frozen=True)
class TdmaParams:
    d: float  # hop reach in subcube sides
    k: float
    spacing: int  # K = ceil(k(d+1)) subcubes

    @property
    def t(self) -> int:
        return self.spacing**3

    @classmethod
    def for_reach(cls, model: ErasureModel, c: float, d: float) -> TdmaParams:
        k = tdma_k(model, c, d)
        return cls(d, k, math.ceil(k * (d + 1) - 1e-12))


def slot_class(cells: np.ndarray, spacing: int) -> np.ndarray:
    r = np.asarray(cells) % spacing
    return (r[..., 0] * spacing + r[..., 1]) * spacing + r[..., 2]


@dataclass(frozen=True)
class TdmaSchedule:
    phase: str
    spacing: int
    transmitters: np.ndarray  # node indices (highway) or representative nodes (access)
    cells: np.ndarray  # (T, 3) subcube of every transmitter

    @property
    def t(self) -> int:
        return self.spacing**3

    @property
    def classes(self) -> np.ndarray:
        return slot_class(self.cells, self.spacing)

    def active_sets(self) -> dict[int, np.ndarray]:
        """Transmitters that share each used slot of the round."""
        cls = self.classes
        return {int(k): self.transmitters[cls == k] for k in np.unique(cls)}

    def min_separation(self, positions: np.ndarray) -> float:
        """Closest pair of same-slot transmitters in different subcubes.

        Nodes of one subcube take turns inside the subcube's slot, so they
        are never concurrent.
        """
        best = math.inf
        cls = self.classes
        for k in np.unique(cls):
            mine = cls == k
            if mine.sum() < 2:
                continue
            p = positions[self.transmitters[mine]]
            c = self.cells[mine]
            d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
            d[np.all(c[:, None, :] == c[None, :, :], axis=-1)] = np.inf
            best = min(best, float(d.min()))
        return best


def highway_bottleneck_margin(model: ErasureModel, c: float, kappa: float, exponents) -> float:
    """min{lambda,mu,nu} - sqrt(2)*c*kappa*max{lambda,nu}/d*; positive when highways bottleneck."""
    lam, mu, nu = exponents
    return min(lam, mu, nu) - math.sqrt(2) * c * kappa * max(lam, nu) / model.d_star


# ---------------------------------------------------------------------------
# route planning


@dataclass
class RoutePlan:
    """Legs of one source-destination pair (highway spans are path indices)."""

    source: int
    destination: int
    direct: bool
    entry: int | None = None
    highway_ids: tuple[int, ...] = ()
    spans: tuple[tuple[int, int], ...] = ()
    interchanges: tuple[tuple[int, int], ...] = ()
    exit: int | None = None

    @property
    def drain_hop(self) -> tuple[int, int] | None:
        return None if self.direct else (self.source, self.entry)

    @property
    def delivery_hop(self) -> tuple[int, int]:
        if self.direct:
            return (self.source, self.destination)
        return (self.exit, self.destination)


class PlanFailure(RuntimeError):
    pass


@dataclass
class RoutingTable:
    instance: NetworkInstance
    grid: SubcubeGrid
    system: HighwaySystem
    w: float | None  # None: every rectangle cut into one slice per crossing
    pairs: np.ndarray  # active sources (s != pairing[s])
    direct: np.ndarray  # bool per active pair
    entry: np.ndarray
    hw: np.ndarray  # (P, F) highway id per family leg
    span: np.ndarray  # (P, F, 2) start/end index along each path
    exit: np.ndarray
    path_nodes: list[np.ndarray] = field(repr=False)

    @property
    def families(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.system.families)

    @property
    def phases(self) -> tuple[str, ...]:
        names = self.families
        out = ["drain", names[0], "i1", names[1]]
        if len(names) == 3:
            out += ["i2", names[2]]
        return tuple(out + ["deliver"])

    def plan(self, k: int) -> RoutePlan:
        s = int(self.pairs[k])
        d = int(self.instance.pairing[s])
        if self.direct[k]:
            return RoutePlan(s, d, True)
        hws = tuple(int(h) for h in self.hw[k])
        spans = tuple((int(a), int(b)) for a, b in self.span[k])
        inter = []
        for f in range(len(hws) - 1):
            tx = int(self.path_nodes[hws[f]][spans[f][1]])
            rx = int(self.path_nodes[hws[f + 1]][spans[f + 1][0]])
            inter.append((tx, rx))
        return RoutePlan(s, d, False, int(self.entry[k]), hws, spans, tuple(inter), int(self.exit[k]))

    def access_links(self, phase: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(pair row, transmitter, receiver) of every access hop in ``phase``."""
        rows = np.arange(len(self.pairs))
        src = self.pairs
        dst = self.instance.pairing[src]
        live = ~self.direct
        if phase == "drain":
            return rows[live], src[live], self.entry[live]
        if phase == "deliver":
            tx = np.where(self.direct, src, self.exit)
            return rows, tx, dst
        f = int(phase[1]) - 1
        r = rows[live]
        tx = np.array([self.path_nodes[h][i] for h, i in zip(self.hw[r, f], self.span[r, f, 1])], dtype=np.int64)
        rx = np.array([self.path_nodes[h][i] for h, i in zip(self.hw[r, f + 1], self.span[r, f + 1, 0])], dtype=np.int64)
        return r, tx, rx


def auto_slice_width(system: HighwaySystem) -> float:
    """Narrowest global w leaving no rectangle with more slices than crossings."""
    row = {f.name: system.cell_sides[f.across_axis] for f in system.families}
    widths = [(r.hi - r.lo) * row[r.family] / r.crossings for r in system.rectangles if r.crossings > 0]
    return max(widths) if widths else system.c


def _line_distance2(points: np.ndarray, anchor: np.ndarray, along_axis: int) -> np.ndarray:
    diff = points - anchor
    diff[:, along_axis] = 0.0
    return np.einsum("ij,ij->i", diff, diff)


def assign_slices_and_entries(
    instance: NetworkInstance,
    grid: SubcubeGrid,
    system: HighwaySystem,
    w: float | None = None,
) -> RoutingTable:
    """Map every source-destination pair onto highways and pick its hand-over nodes.

    Sources use the path of their slice in their own slab; the middle family
    is taken from the section at the destination's coordinate along the first
    family's axis, at the slice holding the source; the last family is picked
    by the destination's slice.  Slice i maps to the i-th path counted across
    the rectangle at the column where the packet boards (or leaves, for the
    last family), so crossing paths never stray far from their slice.  With
    ``w`` unset each rectangle is cut into
    as many equal slices as it has crossings.  Entry and exit points are the
    path nodes closest to the line through the source (destination)
    perpendicular to the path; interchange points are the closest pair of
    nodes between the two paths, the outgoing one taken inside the slab of
    the incoming path.  Pairs sharing a subcube are delivered directly.
    """
    families = system.families
    pos = instance.effective_positions
    pairs = np.flatnonzero(instance.pairing != np.arange(instance.n))
    dst_all = instance.pairing[pairs]
    cell = grid.cell_of
    direct = np.all(cell[pairs] == cell[dst_all], axis=1)
    if system.failed and not np.all(direct):
        raise PlanFailure("highway system has an empty rectangle")

    path_nodes = [h.nodes for h in system.highways]
    path_pos = [pos[h.nodes] for h in system.highways]
    lookup = {(r.family, r.section, r.index): r for r in system.rectangles}
    row = {f.name: grid.cell_sides[f.across_axis] for f in families}
    edges = {f.name: np.array([b[0] for b in system.bounds[f.name]][1:], dtype=float) * row[f.name] for f in families}

    ranked: dict[tuple, np.ndarray] = {}

    def local_order(fam, rec, column: int) -> np.ndarray:
        """Rectangle paths ordered by where they sit across the given column."""
        key = (fam.name, rec.section, rec.index, column)
        if key not in ranked:
            at = []
            for hid in rec.highway_ids:
                hw_ = system.highways[hid]
                here = hw_.cells[:, fam.crossing_axis] == column
                p = path_pos[hid][here] if np.any(here) else path_pos[hid]
                at.append(p[:, fam.across_axis].mean())
            ranked[key] = np.asarray(rec.highway_ids)[np.argsort(at, kind="stable")]
        return ranked[key]

    def pick(fam, section, across_value, column) -> int:
        j = int(np.searchsorted(edges[fam.name], across_value, side="right"))
        rec = lookup[(fam.name, int(section), j)]
        if rec.crossings == 0:
            raise PlanFailure(f"no crossing in {fam.name}-rectangle {section}/{j}")
        h = row[fam.name]
        height = (rec.hi - rec.lo) * h
        if w is None:
            slices, width = rec.crossings, height / rec.crossings
        else:
            slices = max(1, min(int(math.floor(height / w + 1e-9)), rec.crossings))
            width = w
        i = min(int((across_value - rec.lo * h) // width), slices - 1)
        return int(local_order(fam, rec, column)[max(i, 0)])

    closest_pair: dict[tuple[int, int], tuple[int, int]] = {}

    def interchange(h0: int, h1: int) -> tuple[int, int]:
        key = (h0, h1)
        if key not in closest_pair:
            target = system.highways[h1]
            normal = system.family(target.family).normal_axis
            # hand over inside the target's slab, which every crossing visits
            here = np.flatnonzero(system.highways[h0].cells[:, normal] == target.section)
            if len(here) == 0:
                here = np.arange(len(path_pos[h0]))
            a, b = path_pos[h0][here], path_pos[h1]
            d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
            i, j = np.unravel_index(int(np.argmin(d2)), d2.shape)
            closest_pair[key] = (int(here[i]), int(j))
        return closest_pair[key]

    n_pairs, n_fam = len(pairs), len(families)
    entry = np.full(n_pairs, -1, dtype=np.int64)
    exit_ = np.full(n_pairs, -1, dtype=np.int64)
    hw = np.full((n_pairs, n_fam), -1, dtype=np.int64)
    span = np.zeros((n_pairs, n_fam, 2), dtype=np.int64)
    first, last = families[0], families[-1]
    for k in np.flatnonzero(~direct):
        s, d = int(pairs[k]), int(dst_all[k])
        # rank paths where the packet boards (exits, for the last family)
        ids = [pick(first, cell[s, first.normal_axis], pos[s, first.across_axis], cell[s, first.crossing_axis])]
        if n_fam == 3:
            mid = families[1]
            ids.append(pick(mid, cell[d, first.crossing_axis], pos[s, mid.across_axis], cell[s, mid.crossing_axis]))
        ids.append(pick(last, cell[d, last.normal_axis], pos[d, last.across_axis], cell[d, last.crossing_axis]))
        a0 = int(np.argmin(_line_distance2(path_pos[ids[0]], pos[s], first.across_axis)))
        b_last = int(np.argmin(_line_distance2(path_pos[ids[-1]], pos[d], last.across_axis)))
        starts, ends = [a0], []
        for f in range(n_fam - 1):
            i, j = interchange(ids[f], ids[f + 1])
            ends.append(i)
            starts.append(j)
        ends.append(b_last)
        hw[k] = ids
        span[k, :, 0] = starts
        span[k, :, 1] = ends
        entry[k] = path_nodes[ids[0]][a0]
        exit_[k] = path_nodes[ids[-1]][b_last]
    return RoutingTable(instance, grid, system, w, pairs, direct, entry, hw, span, exit_, path_nodes)


def relay_loads(table: RoutingTable, family_index: int = 0) -> np.ndarray:
    """Packets each highway node transmits during one family's phase (per source packet)."""
    loads = np.zeros(table.instance.n, dtype=np.int64)
    live = np.flatnonzero(~table.direct)
    for k in live:
        h = table.hw[k, family_index]
        a, b = table.span[k, family_index]
        nodes = table.path_nodes[h]
        if a < b:
            loads[nodes[a:b]] += 1
        elif a > b:
            loads[nodes[b + 1 : a + 1]] += 1
    return loads


# ---------------------------------------------------------------------------
# simulation


@dataclass
class SimReport:
    delivered_symbols: int
    total_slots: int
    aggregate_throughput: float
    per_phase_rates: dict[str, float]
    phase_slots: dict[str, int]
    phase_rounds: dict[str, int]
    bottleneck_phase: str | None
    percolation_failed: bool
    incomplete: bool = False
    injected_symbols: int = 0
    tdma: dict[str, dict] = field(default_factory=dict)
    mean_success: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "delivered_symbols": self.delivered_symbols,
            "injected_symbols": self.injected_symbols,
            "total_slots": self.total_slots,
            "aggregate_throughput": self.aggregate_throughput,
            "per_phase_rates": self.per_phase_rates,
            "phase_slots": self.phase_slots,
            "phase_rounds": self.phase_rounds,
            "bottleneck_phase": self.bottleneck_phase,
            "percolation_failed": self.percolation_failed,
            "incomplete": self.incomplete,
            "tdma": self.tdma,
            "mean_success": self.mean_success,
            "notes": self.notes,
        }

    @classmethod
    def failed(cls, note: str) -> SimReport:
        return cls(0, 0, 0.0, {}, {}, {}, None, True, notes=[note])


def _box_distance(points: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    gap = np.maximum(np.maximum(lo - points, 0.0), points - hi)
    return np.linalg.norm(gap, axis=-1)


def link_log_success(
    model: ErasureModel,
    cell_sides,
    spacing: int,
    tx_pos: np.ndarray,
    rx_pos: np.ndarray,
    tx_unit: np.ndarray,
    unit_cells: np.ndarray,
    unit_pos: np.ndarray | None = None,
) -> np.ndarray:
    """Per-slot log success of each link against all same-slot scheduled units.

    ``tx_unit`` indexes ``unit_cells``.  Units with ``unit_pos`` are point
    transmitters; otherwise an interfering unit is placed at the point of its
    subcube nearest the receiver.
    """
    out = model.log_success(np.linalg.norm(tx_pos - rx_pos, axis=1)).astype(float)
    unit_class = slot_class(unit_cells, spacing)
    link_class = unit_class[tx_unit]
    order = np.argsort(unit_class, kind="stable")
    sorted_cls = unit_class[order]
    for k in np.unique(link_class):
        lo_i, hi_i = np.searchsorted(sorted_cls, [k, k + 1])
        if hi_i - lo_i < 2:
            continue
        units = order[lo_i:hi_i]
        links = np.flatnonzero(link_class == k)
        rx = rx_pos[links][:, None, :]
        if unit_pos is not None:
            d = np.linalg.norm(rx - unit_pos[units][None, :, :], axis=-1)
        else:
            lo = unit_cells[units].astype(float) * cell_sides
            d = _box_distance(rx, lo[None], lo[None] + cell_sides)
        through = model.success(d)
        log_eps = np.where(through >= TRUNCATION, model.log_erasure(d), 0.0)
        log_eps[tx_unit[links][:, None] == units[None, :]] = 0.0
        out[links] += log_eps.sum(axis=1)
    return out


def _lindley(arrival: np.ndarray, service: np.ndarray) -> np.ndarray:
    """FIFO single-server departures for jobs already sorted by arrival."""
    csum = np.cumsum(service)
    prev = np.concatenate(([0], csum[:-1]))
    return csum + np.maximum.accumulate(arrival - prev)


@dataclass
class _PhaseResult:
    rounds: int
    t: int
    completion: np.ndarray  # per packet, rounds from phase start (0 if untouched)
    success: np.ndarray  # per-link success probabilities used
    links: int
    events: list = field(default_factory=list)


def _attempts(logp: np.ndarray, rng, repeat: int) -> np.ndarray:
    p = np.exp(logp)
    if np.any(p <= 0):
        raise StalledLinkError("a scheduled link can never succeed")
    return rng.geometric(np.repeat(p, repeat))


def _access_phase(table, phase, model, params: TdmaParams, rng, pps, trace) -> _PhaseResult:
    grid = table.grid
    pos = table.instance.effective_positions
    rows, tx, rx = table.access_links(phase)
    n_packets = len(table.pairs) * pps
    completion = np.zeros(n_packets, dtype=np.int64)
    moving = tx != rx
    rows, tx, rx = rows[moving], tx[moving], rx[moving]
    if len(tx) == 0:
        return _PhaseResult(0, params.t, completion, np.ones(0), 0)
    tx_cells = grid.cell_of[tx]
    flat = grid.flat_index(tx_cells)
    units, tx_unit = np.unique(flat, return_inverse=True)
    unit_cells = np.stack(np.unravel_index(units, grid.dims), axis=1)
    logp = link_log_success(model, grid.cell_sides, params.spacing, pos[tx], pos[rx], tx_unit, unit_cells)
    # packets of one subcube queue FIFO in (pair, packet) order
    pkt_unit = np.repeat(tx_unit, pps)
    pkt_id = (np.repeat(rows, pps) * pps + np.tile(np.arange(pps), len(rows)))
    service = _attempts(logp, rng, pps)
    order = np.lexsort((pkt_id, pkt_unit))
    csum = np.cumsum(service[order])
    unit_sorted = pkt_unit[order]
    first = np.r_[True, unit_sorted[1:] != unit_sorted[:-1]]
    base = np.maximum.accumulate(np.where(first, csum - service[order], 0))
    done = csum - base
    completion[pkt_id[order]] = done
    events = []
    if trace:
        cls = slot_class(tx_cells, params.spacing)
        for o, end in zip(order, done):
            link = o // pps
            start = end - service[o]
            for r in range(start, end):
                slot = r * params.t + int(cls[link])
                events.append((slot, int(tx[link]), int(rx[link]), r == end - 1))
    return _PhaseResult(int(done.max()), params.t, completion, np.exp(logp), len(tx), events)


def _highway_phase(table, f, model, params: TdmaParams, rng, pps, trace) -> _PhaseResult:
    grid = table.grid
    pos = table.instance.effective_positions
    n_packets = len(table.pairs) * pps
    completion = np.zeros(n_packets, dtype=np.int64)
    live = np.flatnonzero(~table.direct)
    hw = table.hw[live, f]
    a = table.span[live, f, 0]
    b = table.span[live, f, 1]
    moving = a != b
    live, hw, a, b = live[moving], hw[moving], a[moving], b[moving]
    if len(live) == 0:
        return _PhaseResult(0, params.t, completion, np.ones(0), 0)
    used = np.unique(hw)
    sched_nodes = np.concatenate([table.path_nodes[h] for h in used])
    units, unit_inv = np.unique(sched_nodes, return_inverse=True)
    unit_cells = grid.cell_of[units]
    unit_of = dict(zip(units.tolist(), range(len(units))))

    # hop success for both directions of every used path
    txs, rxs, keys = [], [], []
    for h in used:
        nodes = table.path_nodes[h]
        for i in range(len(nodes) - 1):
            for tx, rx, sign in ((nodes[i], nodes[i + 1], 1), (nodes[i + 1], nodes[i], -1)):
                txs.append(tx)
                rxs.append(rx)
                keys.append((int(h), i, sign))
    txs = np.array(txs, dtype=np.int64)
    rxs = np.array(rxs, dtype=np.int64)
    tx_unit = np.array([unit_of[int(t)] for t in txs], dtype=np.int64)
    logp = link_log_success(model, grid.cell_sides, params.spacing, pos[txs], pos[rxs], tx_unit, unit_cells, pos[units])
    if np.any(np.isneginf(logp)):
        raise StalledLinkError("a highway hop can never succeed")
    hop_p = {key: math.exp(v) for key, v in zip(keys, logp)}

    events = []
    total_rounds = 0
    for sign in (1, -1):
        sel = (b > a) if sign == 1 else (b < a)
        if not np.any(sel):
            continue
        sub_rounds = 0
        for h in np.unique(hw[sel]):
            mine = sel & (hw == h)
            rows = np.repeat(live[mine], pps)
            ids = rows * pps + np.tile(np.arange(pps), int(mine.sum()))
            start = np.repeat(a[mine], pps)
            end = np.repeat(b[mine], pps)
            if sign == -1:
                start, end = -start, -end
            at = np.zeros(len(ids), dtype=np.int64)
            nodes = table.path_nodes[h]
            for hop in range(int(start.min()), int(end.max())):
                here = (start <= hop) & (end > hop)
                if not np.any(here):
                    continue
                idx = np.flatnonzero(here)
                arrival = at[idx]
                order = np.lexsort((ids[idx], arrival))
                idx = idx[order]
                i_path = hop if sign == 1 else -hop - 1
                p = hop_p[(int(h), i_path, sign)]
                service = rng.geometric(p, size=len(idx))
                dep = _lindley(at[idx], service)
                at[idx] = dep
                if trace:
                    node_i = i_path if sign == 1 else i_path + 1
                    tx = int(nodes[node_i])
                    rx = int(nodes[node_i + sign])
                    cls = int(slot_class(grid.cell_of[tx], params.spacing))
                    for s_, d_ in zip(service, dep):
                        for r in range(d_ - s_, d_):
                            events.append((r, sign, tx, rx, cls, r == d_ - 1))
            completion[ids] = at + total_rounds
            sub_rounds = max(sub_rounds, int(at.max()))
        if trace:
            events = [
                e if len(e) == 4 else ((total_rounds + e[0]) * params.t + e[4], e[2], e[3], e[5])
                for e in events
            ]
        total_rounds += sub_rounds
    return _PhaseResult(total_rounds, params.t, completion, np.exp(logp), len(txs), events)


def tdma_plan(model: ErasureModel, table: RoutingTable, kappa: float, d_highway: float = HIGHWAY_DISTANCE) -> dict[str, TdmaParams]:
    c = table.grid.c
    access = TdmaParams.for_reach(model, c, access_hop_units(kappa, max(table.grid.dims)))
    highway = TdmaParams.for_reach(model, c, d_highway)
    return {ph: (access if ph in ACCESS_PHASES else highway) for ph in table.phases}


def schedule_for(table: RoutingTable, phase: str, params: TdmaParams) -> TdmaSchedule:
    """Scheduled transmitters of one phase on its reuse grid."""
    if phase in ACCESS_PHASES:
        _, tx, rx = table.access_links(phase)
        tx = np.unique(tx[tx != rx])
    else:
        f = table.families.index(phase)
        used = np.unique(table.hw[~table.direct, f])
        tx = np.unique(np.concatenate([table.path_nodes[h] for h in used])) if len(used) else np.zeros(0, np.int64)
    return TdmaSchedule(phase, params.spacing, tx, table.grid.cell_of[tx])


def default_budget(instance: NetworkInstance, pps: int) -> float:
    """Budget in TDMA rounds; multiplied by the largest t to get slots."""
    return 1e4 * pps * instance.n ** max(instance.config.exponents)


def simulate(
    table: RoutingTable,
    model: ErasureModel,
    rng: np.random.Generator,
    kappa: float,
    config: RoutingConfig = RoutingConfig(),
    trace_sink=None,
) -> SimReport:
    """Run all phases back to back and measure the aggregate throughput."""
    pps = config.packets_per_source
    params = tdma_plan(model, table, kappa, config.d_highway)
    n_packets = len(table.pairs) * pps
    phase_rounds, phase_slots, mean_success = {}, {}, {}
    phase_done: dict[str, np.ndarray] = {}
    offset = 0
    for ph in table.phases:
        p = params[ph]
        if ph in ACCESS_PHASES:
            res = _access_phase(table, ph, model, p, rng, pps, config.trace)
        else:
            res = _highway_phase(table, table.families.index(ph), model, p, rng, pps, config.trace)
        phase_rounds[ph] = res.rounds
        phase_slots[ph] = res.rounds * res.t
        phase_done[ph] = offset + res.completion * res.t
        mean_success[ph] = float(res.success.mean()) if res.links else float("nan")
        if trace_sink is not None:
            for slot, tx, rx, ok in res.events:
                trace_sink.write(f'{{"slot": {offset + slot}, "phase": "{ph}", "tx": {tx}, "rx": {rx}, "success": {str(bool(ok)).lower()}}}\n')
        offset += phase_slots[ph]
    total = offset
    budget_rounds = config.slot_budget if config.slot_budget is not None else default_budget(table.instance, pps)
    budget = budget_rounds * max(p.t for p in params.values())
    incomplete = total > budget
    if incomplete:
        finished = phase_done["deliver"] <= budget
        delivered = int(np.sum(finished)) if offset - phase_slots["deliver"] <= budget else 0
        total = int(budget)
    else:
        delivered = n_packets
    rates = {}
    n_live = max(len(table.pairs), 1)
    for ph in table.phases:
        rates[ph] = (n_packets / n_live) / phase_slots[ph] if phase_slots[ph] > 0 else 0.0
    bottleneck = max(phase_slots, key=phase_slots.get) if total > 0 else None
    return SimReport(
        delivered_symbols=delivered,
        total_slots=int(total),
        aggregate_throughput=delivered / total if total > 0 else 0.0,
        per_phase_rates=rates,
        phase_slots=phase_slots,
        phase_rounds=phase_rounds,
        bottleneck_phase=bottleneck,
        percolation_failed=False,
        incomplete=bool(incomplete),
        injected_symbols=n_packets,
        tdma={ph: {"d": p.d, "k": p.k, "K": p.spacing, "t": p.t} for ph, p in params.items()},
        mean_success=mean_success,
    )


def measured_phase_rate(report: SimReport, phase: str) -> float:
    """Per-source symbol rate through one phase: packets per source over that phase's slots."""
    if report.incomplete:
        raise ValueError("phase rates need a complete report")
    return report.per_phase_rates.get(phase, 0.0)
