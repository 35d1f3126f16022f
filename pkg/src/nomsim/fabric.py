"""Circuit-switched routers: slot tables, latches and flit movement.

Each NoM cycle a router reads the slot-table entry of the active slot and
connects the listed input/output pairs; a flit held in an input latch crosses
the crossbar and the link and is latched downstream at the end of the cycle.
NoM-Light replaces the vertical mesh links with the vault's TSV bus, which
carries a single vertical jump per vault per cycle.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence

from .tdm import Circuit
from .topology import Mesh, Port

_LOCAL = Port.Local
_VERTICAL = (Port.ZPlus, Port.ZMinus)


class FabricError(RuntimeError):
    """A flit met a slot table that does not match its circuit."""


class NomClock:
    """Maps NoM cycles onto logic-layer cycles when links run at ``ratio`` of
    the logic clock."""

    def __init__(self, ratio=1):
        self.ratio = Fraction(ratio).limit_denominator(1000)
        if not 0 < self.ratio <= 1:
            raise ValueError("clock ratio must be in (0, 1]")

    def logic(self, m: int) -> int:
        return math.ceil(m / self.ratio)

    def first_at_or_after(self, cycle: int) -> int:
        """Smallest NoM cycle whose logic cycle is ``>= cycle``."""
        if cycle <= 0:
            return 0
        return math.floor((cycle - 1) * self.ratio) + 1


class SlotTables:
    """Per-router ``n``-entry tables of input -> output connections."""

    def __init__(self, num_routers: int, n: int):
        self.n = n
        self.entries: List[List[Dict[Port, Port]]] = [[{} for _ in range(n)] for _ in range(num_routers)]

    def program(self, router: int, slot: int, in_port: Port, out_port: Port) -> None:
        entry = self.entries[router][slot]
        if in_port in entry:
            raise FabricError(f"router {router} slot {slot}: input {in_port.name} already connected")
        if out_port in entry.values():
            raise FabricError(f"router {router} slot {slot}: output {out_port.name} already driven")
        entry[in_port] = out_port

    def clear(self, router: int, slot: int, in_port: Port) -> None:
        self.entries[router][slot].pop(in_port, None)

    def lookup(self, router: int, slot: int, in_port: Port) -> Optional[Port]:
        return self.entries[router][slot].get(in_port)

    def empty(self) -> bool:
        return not any(e for t in self.entries for e in t)


class _Seq:
    __slots__ = ("transfer", "idx", "next_m", "stall_cycle", "stall_beat")

    def __init__(self, transfer: "Transfer", idx: int, first: int):
        self.transfer = transfer
        self.idx = idx
        self.next_m = first
        self.stall_cycle = -1
        self.stall_beat = -1


@dataclass
class Transfer:
    """Run-time state of one circuit's data movement."""

    circuit: Circuit
    payload: bytes
    beat_bytes: int
    on_done: Callable[[int, "Transfer"], None]
    beats: int = 0
    sent: int = 0
    received: int = 0
    first_read: Optional[int] = None  # NoM cycles
    first_write: Optional[int] = None
    last_write: Optional[int] = None
    stalls: int = 0
    buf: List[Optional[bytes]] = field(default_factory=list)
    beat_latency: List[int] = field(default_factory=list)

    route: tuple = ()

    def __post_init__(self):
        self.beats = len(self.payload) // self.beat_bytes
        hops = self.circuit.hops
        kinds = tuple(2 if h.out_port is _LOCAL else 1 if h.out_port in _VERTICAL else 0 for h in hops)
        self.route = (tuple(h.router for h in hops), tuple(h.in_port for h in hops),
                      tuple(h.out_port for h in hops), kinds)
        self.buf = [None] * self.beats
        self.beat_latency = [0] * self.beats

    def data(self) -> bytes:
        return b"".join(self.buf)


@dataclass
class FabricStats:
    link_traversals: int = 0
    beats_delivered: int = 0
    timing_violations: int = 0
    crossbar_violations: int = 0
    vertical_vault_cycles: int = 0
    conflict_vault_cycles: int = 0
    coincident_vault_cycles: int = 0
    active_cycles: int = 0

    def conflict_rate(self) -> float:
        if not self.vertical_vault_cycles:
            return 0.0
        return self.conflict_vault_cycles / self.vertical_vault_cycles

    def coincidence_rate(self) -> float:
        if not self.vertical_vault_cycles:
            return 0.0
        return self.coincident_vault_cycles / self.vertical_vault_cycles


class Fabric:
    def __init__(self, mesh: Mesh, n: int, light: bool, clock: NomClock,
                 vaults: Sequence, beat_bytes: int = 8, audit: bool = True):
        self.mesh = mesh
        self.n = n
        self.light = light
        self.clock = clock
        self.vaults = vaults
        self.beat_bytes = beat_bytes
        self.audit = audit
        # optional (router, out_port, nom_cycle, circuit id) record of every crossbar use
        self.link_log: Optional[list] = None
        self.tables = SlotTables(mesh.num_banks, n)
        self.flits: List[list] = []
        self._inject: Dict[int, List[_Seq]] = {}
        self._inject_heap: List[int] = []
        self.stats = FabricStats()
        self.vault_of = [0] * mesh.num_banks
        self.index_of = [0] * mesh.num_banks
        for rid in range(mesh.num_banks):
            c = mesh.coord_of(rid)
            self.vault_of[rid] = mesh.vault_of(c)
            self.index_of[rid] = mesh.bank_in_vault(c)
        self.transfers: List[Transfer] = []

    # -- setup / teardown ---------------------------------------------------
    def program_circuit(self, c: Circuit) -> None:
        """Write every slot-table entry of ``c`` directly (bypasses sideband)."""
        for seq in range(len(c.start_slots)):
            for k, hop in enumerate(c.hops):
                self.tables.program(hop.router, c.slot(k, seq), hop.in_port, hop.out_port)

    def teardown(self, c: Circuit) -> None:
        for seq in range(len(c.start_slots)):
            for k, hop in enumerate(c.hops):
                self.tables.clear(hop.router, c.slot(k, seq), hop.in_port)

    def start(self, transfer: Transfer, first_cycles: Sequence[int]) -> None:
        """Begin injecting ``transfer``; ``first_cycles[i]`` is the NoM cycle
        of sequence ``i``'s first slot."""
        self.transfers.append(transfer)
        for i, m in enumerate(first_cycles):
            self._schedule(_Seq(transfer, i, m))

    def _schedule(self, seq: _Seq) -> None:
        m = seq.next_m
        lst = self._inject.get(m)
        if lst is None:
            self._inject[m] = [seq]
            heapq.heappush(self._inject_heap, m)
        else:
            lst.append(seq)

    def next_cycle(self, after: int) -> Optional[int]:
        """Next NoM cycle ``> after`` with work to do, if any."""
        if self.flits:
            return after + 1
        heap = self._inject_heap
        while heap and heap[0] <= after:
            heapq.heappop(heap)
        return heap[0] if heap else None

    def busy(self) -> bool:
        return bool(self.flits) or bool(self._inject)

    # -- one NoM cycle ------------------------------------------------------
    def tick(self, m: int) -> None:
        n = self.n
        slot = m % n
        c = self.clock.logic(m)
        vaults = self.vaults
        vault_of, index_of = self.vault_of, self.index_of
        stats = self.stats
        bb = self.beat_bytes

        seqs = self._inject.pop(m, None)
        if seqs:
            for seq in seqs:
                if seq.next_m != m:
                    continue
                t = seq.transfer
                if t.sent >= t.beats:
                    seq.next_m = None
                    continue
                beat = t.sent
                t.sent += 1
                if t.first_read is None:
                    t.first_read = m
                src = t.circuit.hops[0].router
                vaults[vault_of[src]].nom_io(index_of[src], c)
                self.flits.append([t, seq, beat, 0, t.payload[beat * bb:(beat + 1) * bb], m, 0, m, t.route])
                if t.sent < t.beats:
                    seq.next_m = m + n
                    self._schedule(seq)
                else:
                    seq.next_m = None
        if not self.flits:
            return
        stats.active_cycles += 1

        entries = self.tables.entries
        light = self.light
        used = set() if self.audit else None
        log = self.link_log
        moved = 0
        traversals = 0
        vertical = set()
        conflicted = set()
        claimed = set()
        keep = []
        for f in self.flits:
            if f[7] > m:
                keep.append(f)
                continue
            seq = f[1]
            if seq.stall_cycle == m and f[2] > seq.stall_beat:
                f[6] += 1
                f[7] = m + n
                keep.append(f)
                continue
            k = f[3]
            routers, ins, outs, kinds = f[8]
            router = routers[k]
            out = outs[k]
            if entries[router][slot].get(ins[k]) is not out:
                self._mismatch(f, m, slot)
            if log is not None:
                log.append((router, out, m, f[0].circuit.cid))
            if used is not None:
                used.add(router * 16 + ins[k])
                used.add(router * 16 + 8 + out)
                moved += 1
            kind = kinds[k]
            if kind == 0:
                f[3] = k + 1
                traversals += 1
                keep.append(f)
            elif kind == 2:
                self._eject(f, m, c, router)
            else:
                v = vault_of[router]
                vertical.add(v)
                busy = vaults[v].tsv_in_use(c)
                if busy:
                    stats.coincident_vault_cycles += 1
                if light and (busy or v in claimed):
                    conflicted.add(v)
                    self._stall(f, seq, f[0].circuit, m)
                    keep.append(f)
                    continue
                claimed.add(v)
                f[3] = k + 1
                traversals += 1
                keep.append(f)
        self.flits = keep
        if used is not None:
            stats.crossbar_violations += 2 * moved - len(used)
        stats.link_traversals += traversals
        stats.vertical_vault_cycles += len(vertical)
        stats.conflict_vault_cycles += len(conflicted)

    def _mismatch(self, f: list, m: int, slot: int) -> None:
        circuit = f[0].circuit
        hop = circuit.hops[f[3]]
        got = self.tables.lookup(hop.router, slot, hop.in_port)
        raise FabricError(
            f"cycle {m}: circuit {circuit.cid} flit at router {hop.router} input "
            f"{hop.in_port.name} found {got} in slot {slot}, expected {hop.out_port.name}"
        )

    def _eject(self, f: list, m: int, c: int, router: int) -> None:
        t = f[0]
        self.vaults[self.vault_of[router]].nom_io(self.index_of[router], c)
        beat = f[2]
        lat = m - f[5]
        t.beat_latency[beat] = lat
        if lat != t.circuit.hop_latency + self.n * f[6]:
            self.stats.timing_violations += 1
        t.buf[beat] = f[4]
        t.received += 1
        self.stats.beats_delivered += 1
        if t.first_write is None:
            t.first_write = m
        if t.received == t.beats:
            t.last_write = m
            t.on_done(c, t)

    def _stall(self, f: list, seq: _Seq, circuit: Circuit, m: int) -> None:
        n = self.n
        f[6] += 1
        f[7] = m + n
        seq.stall_cycle = m
        seq.stall_beat = f[2]
        f[0].stalls += 1
        circuit.windows_remaining += 1
        if seq.next_m is not None:
            seq.next_m += n
            self._schedule(seq)
