"""Centralized TDM slot allocation.

Every router keeps a ``p x n`` occupancy matrix: one ``n``-bit row per output
port, bit ``j`` set when slot ``j`` of that port is reserved.  Two extra rows
ride along with it: ``bank_io`` marks the slots in which the bank behind the
router exchanges a flit with its circuit-switching buffer (injection or
ejection), and in NoM-Light mode ``vault_bus`` marks the slots in which a
vault's shared TSV bus carries a vertical jump.

Slot vectors are plain ints.  Bit ``j`` of a vector held by a node refers to
the slot the circuit would use *at that node*; moving one hop downstream is a
right rotation (slot ``j`` becomes slot ``j + 1 mod n``).  ``propagate``
converts the destination vector back to the source frame, so bit ``j`` of its
result means "start slot ``j`` at the source is unusable".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .topology import BankCoord, Edge, Mesh, PathDag, Port


class AllocationError(RuntimeError):
    """Raised when a reservation would double-book a slot."""


def rotate_right(vec: int, n: int, by: int = 1) -> int:
    """Move every bit ``j`` to position ``(j + by) mod n``."""
    by %= n
    if by == 0:
        return vec
    mask = (1 << n) - 1
    return ((vec << by) | (vec >> (n - by))) & mask


def rotate_left(vec: int, n: int, by: int = 1) -> int:
    return rotate_right(vec, n, n - (by % n))


def free_slots(vec: int, n: int) -> List[int]:
    return [j for j in range(n) if not (vec >> j) & 1]


def windows_needed(payload_bits: int, link_width_bits: int, slots_granted: int) -> int:
    """Windows a circuit must hold its slots to move ``payload_bits``."""
    if payload_bits <= 0:
        raise ValueError("payload must be positive")
    if link_width_bits <= 0:
        raise ValueError("link width must be positive")
    if slots_granted < 1:
        raise ValueError("at least one slot per window is required")
    return math.ceil(payload_bits / (link_width_bits * slots_granted))


class Occupancy:
    """Occupancy state of every router in the mesh."""

    def __init__(self, mesh: Mesh, n: int):
        self.mesh = mesh
        self.n = n
        self.ports = [[0] * len(Port) for _ in range(mesh.num_banks)]
        self.bank_io = [0] * mesh.num_banks
        self.vault_bus = [0] * mesh.num_vaults
        self.version = 0

    def snapshot(self) -> tuple:
        return (
            tuple(tuple(r) for r in self.ports),
            tuple(self.bank_io),
            tuple(self.vault_bus),
        )

    def row(self, coord: BankCoord, port: Port) -> int:
        return self.ports[self.mesh.bank_of(coord)][port]

    def set_port(self, coord: BankCoord, port: Port, slot: int) -> None:
        """Mark one (port, slot) busy; for building test fixtures."""
        self.ports[self.mesh.bank_of(coord)][port] |= 1 << slot
        self.version += 1


@dataclass(frozen=True)
class Hop:
    coord: BankCoord
    router: int
    in_port: Port
    out_port: Port


@dataclass
class Circuit:
    """A reserved sequence of (router, slot) hops.

    ``hops[k]`` is crossed in slot ``(s + k) mod n`` for each start slot ``s``
    in ``start_slots``; the last hop ejects to the destination bank.
    """

    cid: int
    src: BankCoord
    dst: BankCoord
    hops: Tuple[Hop, ...]
    start_slots: Tuple[int, ...]
    n: int
    windows_remaining: int = 0
    start_cycle: Optional[int] = None  # NoM cycle of the first injection
    released: bool = False

    @property
    def s0(self) -> int:
        return self.start_slots[0]

    @property
    def slots_per_window(self) -> int:
        return len(self.start_slots)

    @property
    def hop_latency(self) -> int:
        return len(self.hops) - 1

    def slot(self, hop: int, seq: int = 0) -> int:
        return (self.start_slots[seq] + hop) % self.n

    def reservations(self, mesh: Mesh) -> List[tuple]:
        """Every resource this circuit holds, as audit keys."""
        keys = []
        last = len(self.hops) - 1
        for s in self.start_slots:
            keys.append(("io", self.hops[0].router, s % self.n))
            for k, hop in enumerate(self.hops):
                slot = (s + k) % self.n
                keys.append(("port", hop.router, int(hop.out_port), slot))
                if k == last:
                    keys.append(("io", hop.router, slot))
        return keys


def _edge_rows(occ: Occupancy, mesh: Mesh, e: Edge, light: bool) -> int:
    rid = mesh.bank_of(e.src)
    busy = occ.ports[rid][e.port]
    if light and e.port.is_vertical:
        busy |= occ.vault_bus[mesh.vault_of(e.src)]
    return busy


def _arrivals(mesh: Mesh, occ: Occupancy, dag: PathDag, light: bool) -> Dict[BankCoord, int]:
    """Busy vector arriving at each DAG node, in that node's slot frame.

    A slot stays usable at a join if any incoming branch offers it, so joins
    AND the incoming busy vectors.
    """
    n = occ.n
    full = (1 << n) - 1
    arr: Dict[BankCoord, int] = {}
    for node in dag.order:
        if node == dag.src:
            vec = occ.bank_io[mesh.bank_of(node)]
        else:
            vec = arr.get(node, full)
        arr[node] = vec
        for e in dag.edges[node]:
            fwd = rotate_right(vec | _edge_rows(occ, mesh, e, light), n)
            arr[e.dst] = arr.get(e.dst, full) & fwd
    return arr


def _final_local(mesh: Mesh, occ: Occupancy, dag: PathDag, arr: Dict[BankCoord, int]) -> int:
    rid = mesh.bank_of(dag.dst)
    return arr[dag.dst] | occ.ports[rid][Port.Local] | occ.bank_io[rid]


def propagate(
    mesh: Mesh,
    occ: Occupancy,
    src: BankCoord,
    dst: BankCoord,
    light: bool = False,
    dag: Optional[PathDag] = None,
) -> int:
    """Busy vector at the destination, expressed in source start slots.

    A zero bit ``j`` means some minimal path can carry a circuit that leaves
    the source in slot ``j``.
    """
    if src == dst:
        raise ValueError("source and destination must differ")
    dag = dag or mesh.shortest_path_dag(src, dst, light=light)
    arr = _arrivals(mesh, occ, dag, light)
    return rotate_left(_final_local(mesh, occ, dag, arr), occ.n, dag.hops)


def first_occurrence(slot: int, earliest: int, n: int) -> int:
    """First cycle ``>= earliest`` whose slot index is ``slot``."""
    return earliest + ((slot - earliest) % n)


class Allocator:
    """Owns occupancy, live circuits, and the independent reservation audit."""

    def __init__(self, mesh: Mesh, n: int = 16, slots_per_window_max: int = 4, light: bool = False):
        if n < 2:
            raise ValueError("a window needs at least two slots")
        if slots_per_window_max < 1:
            raise ValueError("slots_per_window_max must be >= 1")
        self.mesh = mesh
        self.n = n
        self.k_max = slots_per_window_max
        self.light = light
        self.occ = Occupancy(mesh, n)
        self.live: Dict[int, Circuit] = {}
        self.audit: Dict[tuple, int] = {}
        self.double_bookings = 0
        self._next_cid = 0
        self._dags: Dict[Tuple[BankCoord, BankCoord], PathDag] = {}
        self._failed: Dict[Tuple[BankCoord, BankCoord], int] = {}
        self.searches = 0
        self.failures = 0

    def dag(self, src: BankCoord, dst: BankCoord) -> PathDag:
        key = (src, dst)
        d = self._dags.get(key)
        if d is None:
            d = self.mesh.shortest_path_dag(src, dst, light=self.light)
            self._dags[key] = d
        return d

    def feasible_start_slots(self, src: BankCoord, dst: BankCoord) -> List[int]:
        return free_slots(propagate(self.mesh, self.occ, src, dst, self.light, self.dag(src, dst)), self.n)

    def _trace_path(self, dag: PathDag, arr: Dict[BankCoord, int], s: int) -> List[Edge]:
        """Lexicographically smallest free path for start slot ``s``.

        The traceback from the destination marks every node that lies on a
        free path for ``s``; the forward walk then takes the first such edge
        in port order at each node.
        """
        mesh, occ, n = self.mesh, self.occ, self.n
        good = {dag.dst}
        preds = dag.preds()
        for node in reversed(dag.order):
            if node not in good:
                continue
            for e in preds[node]:
                j = (s + dag.dist[e.src]) % n
                if (arr[e.src] >> j) & 1:
                    continue
                if (_edge_rows(occ, mesh, e, self.light) >> j) & 1:
                    continue
                good.add(e.src)
        path: List[Edge] = []
        node = dag.src
        while node != dag.dst:
            j = (s + dag.dist[node]) % n
            for e in dag.edges[node]:
                if e.dst in good and not (_edge_rows(occ, mesh, e, self.light) >> j) & 1:
                    path.append(e)
                    node = e.dst
                    break
            else:  # pragma: no cover - guarded by the propagate result
                raise AllocationError(f"traceback lost the path at {node} for slot {s}")
        return path

    def _path_free(self, path: List[Edge], s: int) -> bool:
        mesh, occ, n = self.mesh, self.occ, self.n
        src_id = mesh.bank_of(path[0].src)
        dst_id = mesh.bank_of(path[-1].dst)
        if (occ.bank_io[src_id] >> (s % n)) & 1:
            return False
        for k, e in enumerate(path):
            if (_edge_rows(occ, mesh, e, self.light) >> ((s + k) % n)) & 1:
                return False
        j = (s + len(path)) % n
        return not ((occ.ports[dst_id][Port.Local] | occ.bank_io[dst_id]) >> j) & 1

    def _hops(self, path: List[Edge]) -> Tuple[Hop, ...]:
        mesh = self.mesh
        hops = []
        in_port = Port.Local
        for e in path:
            hops.append(Hop(e.src, mesh.bank_of(e.src), in_port, e.port))
            in_port = e.port.opposite
        dst = path[-1].dst
        hops.append(Hop(dst, mesh.bank_of(dst), in_port, Port.Local))
        return tuple(hops)

    def search_circuit(self, src: BankCoord, dst: BankCoord, earliest: int, beats: int = 1) -> Optional[Circuit]:
        """Earliest circuit whose first start-slot occurrence is ``>= earliest``.

        ``earliest`` is an absolute NoM cycle.  Up to ``min(k_max, beats)``
        start slots are granted on the chosen path.
        """
        if src == dst:
            raise ValueError("source and destination must differ")
        self.searches += 1
        key = (src, dst)
        if self._failed.get(key) == self.occ.version:
            self.failures += 1
            return None
        dag = self.dag(src, dst)
        arr = _arrivals(self.mesh, self.occ, dag, self.light)
        vec = rotate_left(_final_local(self.mesh, self.occ, dag, arr), self.n, dag.hops)
        slots = free_slots(vec, self.n)
        if not slots:
            self._failed[key] = self.occ.version
            self.failures += 1
            return None
        slots.sort(key=lambda s: first_occurrence(s, earliest, self.n))
        first = slots[0]
        path = self._trace_path(dag, arr, first)
        granted = [first]
        limit = min(self.k_max, max(1, beats))
        for s in slots[1:]:
            if len(granted) >= limit:
                break
            if self._path_free(path, s):
                granted.append(s)
        cid = self._next_cid
        self._next_cid += 1
        return Circuit(cid, src, dst, self._hops(path), tuple(granted), self.n)

    def _keys(self, c: Circuit) -> Iterable[tuple]:
        keys = c.reservations(self.mesh)
        if self.light:
            for s in c.start_slots:
                for k, hop in enumerate(c.hops):
                    if hop.out_port.is_vertical:
                        keys.append(("bus", self.mesh.vault_of(hop.coord), (s + k) % self.n))
        return keys

    def reserve(self, c: Circuit) -> None:
        occ, n = self.occ, self.n
        keys = list(self._keys(c))
        for key in keys:
            if key in self.audit:
                self.double_bookings += 1
        # the bitmask check is authoritative; the audit is kept independently
        for key in keys:
            kind, idx, *rest = key
            slot = rest[-1]
            if kind == "port":
                busy = occ.ports[idx][rest[0]]
            elif kind == "io":
                busy = occ.bank_io[idx]
            else:
                busy = occ.vault_bus[idx]
            if (busy >> slot) & 1:
                raise AllocationError(f"circuit {c.cid} collides on {key}")
        for key in keys:
            kind, idx, *rest = key
            bit = 1 << rest[-1]
            if kind == "port":
                occ.ports[idx][rest[0]] |= bit
            elif kind == "io":
                occ.bank_io[idx] |= bit
            else:
                occ.vault_bus[idx] |= bit
            self.audit[key] = c.cid
        occ.version += 1
        self.live[c.cid] = c

    def release(self, c: Circuit) -> None:
        occ = self.occ
        for key in self._keys(c):
            kind, idx, *rest = key
            bit = 1 << rest[-1]
            if kind == "port":
                occ.ports[idx][rest[0]] &= ~bit
            elif kind == "io":
                occ.bank_io[idx] &= ~bit
            else:
                occ.vault_bus[idx] &= ~bit
            if self.audit.get(key) == c.cid:
                del self.audit[key]
        occ.version += 1
        c.released = True
        self.live.pop(c.cid, None)

    def release_expired(self, cycle: int) -> List[Circuit]:
        """Window-boundary bookkeeping; returns the circuits released."""
        released = []
        for c in list(self.live.values()):
            if c.start_cycle is None or c.start_cycle >= cycle:
                continue
            c.windows_remaining -= 1
            if c.windows_remaining <= 0:
                self.release(c)
                released.append(c)
        return released
