import random

import pytest
from hypothesis import given, settings, strategies as st

from nomsim.tdm import (
    AllocationError,
    Allocator,
    Occupancy,
    free_slots,
    propagate,
    rotate_left,
    rotate_right,
    windows_needed,
)
from nomsim.topology import BankCoord, Mesh, Port

from oracles import feasible_by_enumeration, first_free_path, random_occupancy


def test_rotate_moves_slot_forward():
    assert rotate_right(0b0001, 4) == 0b0010
    assert rotate_right(0b1000, 4) == 0b0001
    assert rotate_left(rotate_right(0b1011, 4, 3), 4, 3) == 0b1011


def test_empty_occupancy_everything_feasible():
    mesh = Mesh()
    occ = Occupancy(mesh, 16)
    vec = propagate(mesh, occ, BankCoord(0, 0, 0), BankCoord(5, 2, 3))
    assert vec == 0


def test_line_hand_trace():
    # 3x1x1 line, n=4; the middle router's XPlus is busy in slot 2.  A circuit
    # (0,0,0)->(2,0,0) crosses the middle router one slot after it starts, so
    # start slot 1 is the only one ruled out.
    mesh = Mesh(X=3, Y=1, Z=1, banks_per_slice=1)
    occ = Occupancy(mesh, 4)
    occ.set_port(BankCoord(1, 0, 0), Port.XPlus, 2)
    vec = propagate(mesh, occ, BankCoord(0, 0, 0), BankCoord(2, 0, 0))
    assert vec == 0b0010
    assert free_slots(vec, 4) == [0, 2, 3]
    assert set(free_slots(vec, 4)) == feasible_by_enumeration(mesh, occ, BankCoord(0, 0, 0), BankCoord(2, 0, 0))


@pytest.mark.parametrize("light", [False, True])
def test_propagate_matches_enumeration(light):
    mesh = Mesh(X=3, Y=3, Z=2, banks_per_slice=1)
    rng = random.Random(11 + light)
    mismatches = 0
    cases = 0
    for _ in range(60):
        occ = Occupancy(mesh, 8)
        random_occupancy(mesh, occ, rng, density=rng.choice([0.1, 0.3, 0.5]))
        for _ in range(10):
            a, b = rng.sample(range(mesh.num_banks), 2)
            src, dst = mesh.coord_of(a), mesh.coord_of(b)
            got = set(free_slots(propagate(mesh, occ, src, dst, light=light), 8))
            if got != feasible_by_enumeration(mesh, occ, src, dst, light=light):
                mismatches += 1
            cases += 1
    assert cases == 600
    assert mismatches == 0


def test_search_picks_lexicographic_first_path():
    mesh = Mesh(X=3, Y=3, Z=2, banks_per_slice=1)
    rng = random.Random(5)
    for _ in range(100):
        occ_density = rng.choice([0.2, 0.4])
        alloc = Allocator(mesh, n=8, slots_per_window_max=1)
        random_occupancy(mesh, alloc.occ, rng, occ_density)
        a, b = rng.sample(range(mesh.num_banks), 2)
        src, dst = mesh.coord_of(a), mesh.coord_of(b)
        earliest = rng.randrange(0, 100)
        c = alloc.search_circuit(src, dst, earliest)
        feas = feasible_by_enumeration(mesh, alloc.occ, src, dst)
        if not feas:
            assert c is None
            continue
        best = min(feas, key=lambda s: earliest + (s - earliest) % 8)
        assert c.s0 == best
        want = first_free_path(mesh, alloc.occ, src, dst, best)
        assert [(h.coord, h.out_port) for h in c.hops[:-1]] == want


def test_search_five_router_start_slot():
    mesh = Mesh()
    alloc = Allocator(mesh, n=8, slots_per_window_max=1)
    src, dst = BankCoord(0, 0, 0), BankCoord(2, 2, 0)
    t = 80  # slot 0 is active at pickup
    c = alloc.search_circuit(src, dst, earliest=t + 3)
    assert len(c.hops) == 5
    assert c.s0 == 3
    assert [c.slot(k) for k in range(5)] == [3, 4, 5, 6, 7]


def test_search_adjacent():
    mesh = Mesh()
    alloc = Allocator(mesh, n=16, slots_per_window_max=1)
    c = alloc.search_circuit(BankCoord(3, 3, 0), BankCoord(3, 4, 0), earliest=32 + 3)
    assert c.s0 == 3
    assert c.slot(c.hop_latency) == 4


def test_search_saturated_source_returns_none():
    mesh = Mesh()
    alloc = Allocator(mesh, n=16)
    src = BankCoord(3, 3, 1)
    rid = mesh.bank_of(src)
    for p in range(6):
        alloc.occ.ports[rid][p] = 0xFFFF
    alloc.occ.version += 1
    assert alloc.search_circuit(src, BankCoord(5, 5, 2), earliest=0) is None


def test_search_grants_multiple_slots():
    mesh = Mesh()
    alloc = Allocator(mesh, n=16, slots_per_window_max=4)
    c = alloc.search_circuit(BankCoord(0, 0, 0), BankCoord(3, 0, 0), earliest=5, beats=512)
    assert c.start_slots == (5, 6, 7, 8)
    c2 = alloc.search_circuit(BankCoord(0, 0, 0), BankCoord(3, 0, 0), earliest=5, beats=2)
    assert c2.slots_per_window == 2


def test_reserve_five_router_path_sets_five_bits():
    mesh = Mesh()
    alloc = Allocator(mesh, n=8, slots_per_window_max=1)
    c = alloc.search_circuit(BankCoord(0, 0, 0), BankCoord(2, 2, 0), earliest=3)
    alloc.reserve(c)
    port_bits = [(rid, p, j) for rid in range(mesh.num_banks) for p in range(7) for j in range(8)
                 if alloc.occ.ports[rid][p] >> j & 1]
    assert len(port_bits) == 5
    assert sorted(j for _, _, j in port_bits) == [3, 4, 5, 6, 7]
    assert len({rid for rid, _, _ in port_bits}) == 5


def test_reserve_release_identity_and_collision():
    mesh = Mesh(X=3, Y=3, Z=2, banks_per_slice=1)
    rng = random.Random(3)
    alloc = Allocator(mesh, n=8, slots_per_window_max=2)
    random_occupancy(mesh, alloc.occ, rng, 0.2)
    before = alloc.occ.snapshot()
    c = None
    while c is None:
        a, b = rng.sample(range(mesh.num_banks), 2)
        c = alloc.search_circuit(mesh.coord_of(a), mesh.coord_of(b), 0, beats=4)
    alloc.reserve(c)
    assert alloc.occ.snapshot() != before
    with pytest.raises(AllocationError):
        alloc.reserve(c)
    alloc.release(c)
    assert alloc.occ.snapshot() == before


def test_disjoint_reservations_commute():
    mesh = Mesh(X=3, Y=3, Z=2, banks_per_slice=1)
    rng = random.Random(8)
    done = 0
    while done < 50:
        base = Allocator(mesh, n=8, slots_per_window_max=2)
        random_occupancy(mesh, base.occ, rng, 0.2)
        pairs = [rng.sample(range(mesh.num_banks), 2) for _ in range(2)]
        c1 = base.search_circuit(mesh.coord_of(pairs[0][0]), mesh.coord_of(pairs[0][1]), 0, 2)
        c2 = base.search_circuit(mesh.coord_of(pairs[1][0]), mesh.coord_of(pairs[1][1]), 0, 2)
        if c1 is None or c2 is None:
            continue
        k1 = set(c1.reservations(mesh))
        k2 = set(c2.reservations(mesh))
        if k1 & k2:
            continue
        snap = base.occ.snapshot()
        results = []
        for order in ((c1, c2), (c2, c1)):
            a = Allocator(mesh, n=8)
            a.occ.ports = [list(r) for r in snap[0]]
            a.occ.bank_io = list(snap[1])
            a.occ.vault_bus = list(snap[2])
            for c in order:
                a.reserve(c)
            results.append(a.occ.snapshot())
        assert results[0] == results[1]
        done += 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.5))
def test_reservation_never_enlarges_feasible_sets(seed, density):
    mesh = Mesh(X=3, Y=3, Z=2, banks_per_slice=1)
    rng = random.Random(seed)
    alloc = Allocator(mesh, n=8, slots_per_window_max=2)
    random_occupancy(mesh, alloc.occ, rng, density)
    probes = [tuple(rng.sample(range(mesh.num_banks), 2)) for _ in range(6)]
    before = {p: set(alloc.feasible_start_slots(mesh.coord_of(p[0]), mesh.coord_of(p[1]))) for p in probes}
    a, b = rng.sample(range(mesh.num_banks), 2)
    c = alloc.search_circuit(mesh.coord_of(a), mesh.coord_of(b), 0, beats=2)
    if c is None:
        return
    alloc.reserve(c)
    for p in probes:
        after = set(alloc.feasible_start_slots(mesh.coord_of(p[0]), mesh.coord_of(p[1])))
        assert after <= before[p]


def test_consecutive_slot_law():
    mesh = Mesh()
    alloc = Allocator(mesh, n=16, slots_per_window_max=4)
    rng = random.Random(2)
    for _ in range(40):
        a, b = rng.sample(range(mesh.num_banks), 2)
        c = alloc.search_circuit(mesh.coord_of(a), mesh.coord_of(b), rng.randrange(1000), beats=64)
        if c is None:
            continue
        alloc.reserve(c)
        for seq, s in enumerate(c.start_slots):
            for k, hop in enumerate(c.hops):
                assert c.slot(k, seq) == (s + k) % 16
                assert alloc.occ.ports[hop.router][hop.out_port] >> c.slot(k, seq) & 1
    assert alloc.double_bookings == 0


def test_windows_needed():
    assert windows_needed(64, 64, 1) == 1
    assert windows_needed(32768, 64, 1) == 512
    assert windows_needed(32768, 64, 4) == 128
    with pytest.raises(ValueError):
        windows_needed(64, 0, 1)


def _started(alloc, src, dst, windows):
    c = alloc.search_circuit(src, dst, 0)
    alloc.reserve(c)
    c.start_cycle = 0
    c.windows_remaining = windows
    return c


def test_release_expired():
    mesh = Mesh()
    alloc = Allocator(mesh, n=16, slots_per_window_max=1)
    before = alloc.occ.snapshot()
    assert alloc.release_expired(16) == []
    c = _started(alloc, BankCoord(0, 0, 0), BankCoord(1, 1, 0), 1)
    assert alloc.release_expired(16) == [c]
    assert alloc.occ.snapshot() == before
    long = _started(alloc, BankCoord(0, 0, 0), BankCoord(1, 1, 0), 512)
    survived = 0
    for w in range(1, 600):
        if alloc.release_expired(16 * w):
            break
        survived += 1
    assert survived == 511
    assert long.released
