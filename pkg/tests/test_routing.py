import math

import numpy as np
import pytest
from oracles import tdma_root_bisection

from erasure3d.bounds import interference_bound_exponential, interference_bound_polynomial, k_alpha
from erasure3d.channel import ErasureModel
from erasure3d.harness import fit_exponent
from erasure3d.netgen import NetworkConfig, NetworkInstance, generate
from erasure3d.percolation import PercolationConfig, highway_system_for
from erasure3d.routing import (
    RoutingConfig,
    TdmaParams,
    _lindley,
    access_hop_units,
    assign_slices_and_entries,
    highway_bottleneck_margin,
    measured_phase_rate,
    relay_loads,
    schedule_for,
    simulate,
    tdma_k_exponential,
    tdma_k_polynomial,
    tdma_plan,
)

POLY = ErasureModel.polynomial(4.0)
PERC = PercolationConfig(1.5, 1.3)


class CertainRng:
    """Stands in for a Generator when every attempt should succeed first time."""

    def geometric(self, p, size=None):
        shape = np.shape(p) if size is None else size
        return np.ones(shape, dtype=np.int64)


def _table(n, seed):
    inst = generate(NetworkConfig(n, seed=seed))
    grid, system = highway_system_for(inst, PERC)
    if system.failed:
        return None
    return assign_slices_and_entries(inst, grid, system)


@pytest.fixture(scope="module")
def table():
    for seed in range(10):
        t = _table(4096, seed)
        if t is not None:
            return t
    raise AssertionError("no seed produced a complete highway system")


# TDMA


def test_tdma_k_exponential_example():
    y = tdma_root_bisection()
    want = 1 + math.log2(y) / (10 * math.log2(0.5))
    assert tdma_k_exponential(1, 9, 0.5) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(1.4896, abs=1e-4)


def test_tdma_k_tends_to_one():
    ks = [tdma_k_exponential(1, d, 0.5) for d in (10, 100, 1000, 10_000)]
    assert all(a > b > 1 for a, b in zip(ks, ks[1:]))
    assert ks[-1] - 1 < 1e-3
    kp = [tdma_k_polynomial(1, d, 4) for d in (10, 1000, 100_000)]
    assert all(a > b > 1 for a, b in zip(kp, kp[1:]))
    assert kp[-1] - 1 < 1e-4


def test_tdma_k_polynomial_example():
    want = 1 + (2 * (13 + k_alpha(4))) ** 0.25 / 10
    assert tdma_k_polynomial(1, 9, 4) == pytest.approx(want, abs=2e-6)
    assert want == pytest.approx(1.3507, abs=1e-4)
    with pytest.raises(ValueError):
        tdma_k_polynomial(1, 9, 3)


@pytest.mark.parametrize("c, d", [(1.0, 1.0), (1.5, 3.46), (1.5, 5.0), (2.0, 9.0)])
def test_chosen_k_keeps_interference_below_one(c, d):
    for gamma in (0.3, 0.7, 0.99):
        assert interference_bound_exponential(tdma_k_exponential(c, d, gamma), c, d, gamma) <= 1 + 1e-9
    for alpha in (3.5, 4.0, 6.0):
        assert interference_bound_polynomial(tdma_k_polynomial(c, d, alpha), c, d, alpha) < 1


def test_tdma_params():
    p = TdmaParams.for_reach(POLY, 1.5, access_hop_units(1.3, 16))
    assert p.spacing == math.ceil(p.k * (p.d + 1))
    assert p.t == p.spacing**3
    assert access_hop_units(1.3, 16) == pytest.approx(1.3 * math.log(16) + math.sqrt(2))


def test_same_slot_transmitters_are_far_apart(table):
    params = tdma_plan(POLY, table, 1.3)
    pos = table.instance.effective_positions
    for phase in table.phases:
        p = params[phase]
        sched = schedule_for(table, phase, p)
        sep = sched.min_separation(pos)
        assert sep >= (p.spacing - 1) * table.grid.c - 1e-9
        assert len(sched.active_sets()) <= p.t


def test_highway_bottleneck_margin_sign():
    assert highway_bottleneck_margin(ErasureModel.exponential(0.99), 1.5, 1.3, (1 / 3,) * 3) > 0
    assert highway_bottleneck_margin(ErasureModel.exponential(0.5), 1.5, 1.3, (1 / 3,) * 3) < 0


# route planning


def test_direct_delivery_inside_one_subcube():
    inst = NetworkInstance(NetworkConfig(2), np.array([[0.2, 0.2, 0.2], [0.4, 0.3, 0.2]]), np.array([1, 0]))
    grid, system = highway_system_for(inst, PercolationConfig(1.5, 1.3))
    t = assign_slices_and_entries(inst, grid, system)
    assert t.direct.all()
    plan = t.plan(0)
    assert plan.direct and plan.drain_hop is None
    assert plan.delivery_hop == (0, 1)


def test_plans_are_consistent(table):
    pos = table.instance.effective_positions
    cell = table.grid.cell_of
    fams = table.system.families
    for k in range(0, len(table.pairs), 7):
        plan = table.plan(k)
        if plan.direct:
            assert np.array_equal(cell[plan.source], cell[plan.destination])
            continue
        assert plan.entry == table.path_nodes[plan.highway_ids[0]][plan.spans[0][0]]
        assert plan.exit == table.path_nodes[plan.highway_ids[-1]][plan.spans[-1][1]]
        for f, h in enumerate(plan.highway_ids):
            hw = table.system.highways[h]
            assert hw.family == fams[f].name
        # the first path lives in the source's slab, the last in the destination's
        assert table.system.highways[plan.highway_ids[0]].section == cell[plan.source, fams[0].normal_axis]
        assert table.system.highways[plan.highway_ids[-1]].section == cell[plan.destination, fams[-1].normal_axis]
        for tx, rx in plan.interchanges:
            assert np.linalg.norm(pos[tx] - pos[rx]) < 3 * table.grid.c * math.log(max(table.grid.dims)) + 6


def test_source_on_its_path_drains_to_itself(table):
    hits = 0
    for k in np.flatnonzero(~table.direct):
        s = table.pairs[k]
        path = table.path_nodes[table.hw[k, 0]]
        if s in path:
            hits += 1
            assert table.entry[k] == s
    assert hits > 0
    rows, tx, rx = table.access_links("drain")
    assert np.all((tx == rx) == np.isin(rows, np.flatnonzero(table.entry == table.pairs)))


def test_access_hops_within_reach():
    t = None
    for seed in range(10):
        t = _table(10_000, seed)
        if t is not None:
            break
    assert t is not None
    c = t.grid.c
    m = max(t.grid.dims)
    reach = c * (1.3 * math.log(m) + math.sqrt(2)) + 2 * math.sqrt(3) * c
    pos = t.instance.effective_positions
    for phase in ("drain", "i1", "i2", "deliver"):
        rows, tx, rx = t.access_links(phase)
        assert np.linalg.norm(pos[tx] - pos[rx], axis=1).max() <= reach


def test_relay_loads_count_hops(table):
    loads = relay_loads(table, 0)
    live = np.flatnonzero(~table.direct)
    hops = np.abs(table.span[live, 0, 1] - table.span[live, 0, 0]).sum()
    assert loads.sum() == hops


# simulation


def test_lindley_matches_queue_loop():
    rng = np.random.default_rng(3)
    for _ in range(50):
        arrival = np.sort(rng.integers(0, 20, size=8))
        service = rng.integers(1, 5, size=8)
        free, want = 0, []
        for a, s in zip(arrival, service):
            free = max(free, a) + s
            want.append(free)
        assert _lindley(arrival, service).tolist() == want


def test_single_pair_one_packet_per_round():
    # adjacent nodes, unit distance: polynomial success is exactly 1, no interferers
    inst = NetworkInstance(NetworkConfig(2), np.array([[0.1, 0.1, 0.1], [0.6, 0.1, 0.1]]), np.array([1, 0]))
    grid, system = highway_system_for(inst, PERC)
    t = assign_slices_and_entries(inst, grid, system)
    rep = simulate(t, POLY, np.random.default_rng(0), 1.3, RoutingConfig(packets_per_source=5))
    assert rep.phase_rounds["deliver"] == 2 * 5  # two sources share one cell
    assert rep.delivered_symbols == 10
    t_round = rep.tdma["deliver"]["t"]
    # one symbol per owned slot of the round
    assert rep.aggregate_throughput == pytest.approx(1 / t_round)
    assert rep.per_phase_rates["drain"] == 0.0


def test_access_rounds_equal_busiest_cell(table):
    rep = simulate(table, POLY, CertainRng(), 1.3)
    for phase in ("drain", "i1", "i2", "deliver"):
        _, tx, rx = table.access_links(phase)
        tx = tx[tx != rx]
        _, counts = np.unique(table.grid.flat_index(table.grid.cell_of[tx]), return_counts=True)
        assert rep.phase_rounds[phase] == counts.max()


def test_sharing_a_relay_halves_its_rate(table):
    one = simulate(table, POLY, CertainRng(), 1.3, RoutingConfig(packets_per_source=1))
    two = simulate(table, POLY, CertainRng(), 1.3, RoutingConfig(packets_per_source=2))
    for phase in ("drain", "i1", "i2", "deliver"):
        assert two.phase_rounds[phase] == 2 * one.phase_rounds[phase]
        assert two.per_phase_rates[phase] == pytest.approx(one.per_phase_rates[phase])


def _tandem_rounds(table, f):
    """Slot-by-slot store-and-forward along each path with one success per hop per round."""
    live = np.flatnonzero(~table.direct)
    total = 0
    for sign in (1, -1):
        worst = 0
        for h in np.unique(table.hw[live, f]):
            mine = live[table.hw[live, f] == h]
            a, b = table.span[mine, f, 0], table.span[mine, f, 1]
            sel = (b > a) if sign == 1 else (b < a)
            if not np.any(sel):
                continue
            where = list((a[sel] * sign).astype(int))
            goal = list((b[sel] * sign).astype(int))
            ids = list(mine[sel])
            arrived = [0] * len(ids)
            rounds = 0
            while any(w < g for w, g in zip(where, goal)):
                rounds += 1
                moves = []
                for hop in {w for w, g in zip(where, goal) if w < g}:
                    # FIFO: earliest arrival at the hop's tail, ties by packet id
                    waiting = [i for i in range(len(ids)) if where[i] == hop and where[i] < goal[i] and arrived[i] < rounds]
                    if waiting:
                        moves.append(min(waiting, key=lambda i: (arrived[i], ids[i])))
                for i in moves:
                    where[i] += 1
                    arrived[i] = rounds
            worst = max(worst, rounds)
        total += worst
    return total


def test_highway_rounds_match_tandem_queue(table):
    rep = simulate(table, POLY, CertainRng(), 1.3)
    for f, name in enumerate(table.families):
        assert rep.phase_rounds[name] == _tandem_rounds(table, f)
        # every packet needs at least its own hop count
        live = np.flatnonzero(~table.direct)
        assert rep.phase_rounds[name] >= np.abs(table.span[live, f, 1] - table.span[live, f, 0]).max()


def test_report_fields(table):
    rep = simulate(table, POLY, np.random.default_rng(1), 1.3)
    assert rep.delivered_symbols == rep.injected_symbols == len(table.pairs)
    assert rep.total_slots == sum(rep.phase_slots.values())
    assert rep.bottleneck_phase == max(rep.phase_slots, key=rep.phase_slots.get)
    assert not rep.incomplete
    assert measured_phase_rate(rep, "x") == rep.per_phase_rates["x"]
    assert set(rep.to_dict()) >= {"aggregate_throughput", "phase_slots", "tdma"}


def test_budget_truncates(table):
    rep = simulate(table, POLY, np.random.default_rng(1), 1.3, RoutingConfig(slot_budget=3))
    assert rep.incomplete
    assert rep.delivered_symbols < rep.injected_symbols
    with pytest.raises(ValueError):
        measured_phase_rate(rep, "x")


def test_same_seed_same_report(table):
    a = simulate(table, POLY, np.random.default_rng(5), 1.3)
    b = simulate(table, POLY, np.random.default_rng(5), 1.3)
    assert a.to_dict() == b.to_dict()


def test_trace_events(table, tmp_path):
    import io
    import json

    sink = io.StringIO()
    rep = simulate(table, POLY, np.random.default_rng(2), 1.3, RoutingConfig(trace=True), sink)
    lines = [json.loads(line) for line in sink.getvalue().splitlines()]
    assert sum(e["success"] for e in lines if e["phase"] == "drain") == int(np.sum(table.entry[~table.direct] != table.pairs[~table.direct]))
    assert max(e["slot"] for e in lines) < rep.total_slots


def test_highway_hop_success_stays_bounded():
    means = {}
    for n in (4096, 8192):
        vals = []
        for seed in range(6):
            t = _table(n, seed)
            if t is None:
                continue
            rep = simulate(t, POLY, np.random.default_rng(seed), 1.3)
            vals += [rep.mean_success[f] for f in t.families]
        means[n] = np.mean(vals)
    assert min(means.values()) > 0.1
    assert abs(means[4096] - means[8192]) < 0.05


@pytest.fixture(scope="module")
def rate_sweep():
    model = ErasureModel.exponential(0.99)
    pts = {}
    for e in (12, 13, 14):
        rows = []
        for seed in range(6):
            t = _table(2**e, seed)
            if t is None:
                continue
            rep = simulate(t, model, np.random.default_rng(seed), 1.3)
            rows.append(rep.per_phase_rates)
        pts[2**e] = {k: np.mean([r[k] for r in rows]) for k in rows[0]}
    return pts


def test_highway_rate_slope(rate_sweep):
    slope, _ = fit_exponent([(n, r["x"]) for n, r in rate_sweep.items()])
    assert abs(slope - (-1 / 3)) <= 0.15


def test_drain_and_delivery_scale_alike(rate_sweep):
    s_drain, e_drain = fit_exponent([(n, r["drain"]) for n, r in rate_sweep.items()])
    s_del, e_del = fit_exponent([(n, r["deliver"]) for n, r in rate_sweep.items()])
    assert abs(s_drain - s_del) <= 3 * math.hypot(e_drain, e_del)
