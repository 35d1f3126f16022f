"""Circuit control unit: FIFO setup of copy circuits.

Setup of the head request is a small pipeline advanced once per logic cycle:

1. search for a circuit whose first slot occurs no earlier than three cycles
   after pickup, and reserve it;
2. program the slot tables over the sideband, one entry per vault per cycle
   (so this stage lasts as many cycles as the busiest vault has entries);
3. issue the source read; beats leave at the next occurrence of each granted
   start slot.

A failed search is retried as soon as some circuit is released (occupancy is
the only input that can change its outcome).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .dram import CopyCommand, DramTiming, Location, MemoryStore
from .fabric import Fabric, NomClock, Transfer
from .kernel import CCU as CCU_PHASE, Kernel, Waker
from .tdm import Allocator, Circuit, first_occurrence
from .topology import Mesh, Port

BANK_BITS, SLOT_BITS, PORT_BITS = 3, 4, 3
WORD_BITS = BANK_BITS + SLOT_BITS + 2 * PORT_BITS


class SidebandError(ValueError):
    pass


@dataclass(frozen=True)
class SidebandWord:
    """One slot-table write: bank-in-vault, slot, input port, output port."""

    bank: int
    slot: int
    in_port: Port
    out_port: Port

    def encode(self) -> int:
        if not 0 <= self.bank < 1 << BANK_BITS:
            raise SidebandError(f"bank {self.bank} does not fit {BANK_BITS} bits")
        if not 0 <= self.slot < 1 << SLOT_BITS:
            raise SidebandError(f"slot {self.slot} does not fit {SLOT_BITS} bits")
        return (((self.bank << SLOT_BITS | self.slot) << PORT_BITS | self.in_port) << PORT_BITS) | self.out_port

    @classmethod
    def decode(cls, word: int) -> "SidebandWord":
        if not 0 <= word < 1 << WORD_BITS:
            raise SidebandError(f"word {word:#x} wider than {WORD_BITS} bits")
        out_code = word & 7
        in_code = (word >> PORT_BITS) & 7
        slot = (word >> 2 * PORT_BITS) & ((1 << SLOT_BITS) - 1)
        bank = word >> (2 * PORT_BITS + SLOT_BITS)
        try:
            return cls(bank, slot, Port(in_code), Port(out_code))
        except ValueError:
            raise SidebandError(f"word {word:#x} carries an invalid port code") from None


@dataclass
class CopyRequest:
    rid: int
    src: int
    dst: int
    size: int
    arrival: int
    kind: str = "COPY"

    def __post_init__(self):
        if self.size <= 0 or self.size % 64:
            raise ValueError(f"request {self.rid}: size must be a positive multiple of 64 bytes")


@dataclass
class NomRecord:
    """Timeline of one NoM copy (logic cycles unless noted)."""

    req: CopyRequest
    src: Location
    dst: Location
    on_done: Callable[[int, "NomRecord"], None]
    pickup: Optional[int] = None
    search: Optional[int] = None
    attempts: int = 0
    program_cycles: int = 0
    read_issue: Optional[int] = None
    done: Optional[int] = None
    circuit: Optional[Circuit] = None
    transfer: Optional[Transfer] = None
    payload: bytes = b""


class CircuitControlUnit:
    def __init__(self, mesh: Mesh, alloc: Allocator, fabric: Fabric, clock: NomClock,
                 kernel: Kernel, vaults, store: MemoryStore, timing: DramTiming,
                 link_bits: int = 64):
        if alloc.n > 1 << SLOT_BITS:
            raise ValueError(f"sideband slot field holds at most {1 << SLOT_BITS} slots")
        if mesh.banks_per_vault > 1 << BANK_BITS:
            raise ValueError(f"sideband bank field addresses at most {1 << BANK_BITS} banks per vault")
        self.mesh = mesh
        self.alloc = alloc
        self.fabric = fabric
        self.clock = clock
        self.kernel = kernel
        self.vaults = vaults
        self.store = store
        self.timing = timing
        self.beat_bytes = link_bits // 8
        self.n = alloc.n
        self.queue: Deque[NomRecord] = deque()
        self.waker = Waker(kernel, CCU_PHASE, self.service_tick)
        self.head: Optional[NomRecord] = None
        self.stage = 0
        self.blocked = False
        self._plan: List[List[Tuple[int, int]]] = []
        self._step = 0
        self._programmed: Dict[int, int] = {}
        self.setup_order: List[int] = []
        self.completed: List[NomRecord] = []
        self.sideband_words = 0

    # -- queue --------------------------------------------------------------
    def enqueue(self, rec: NomRecord, cycle: int) -> None:
        self.queue.append(rec)
        self.waker.wake(cycle)

    def occupancy_changed(self, cycle: int) -> None:
        if self.blocked:
            self.blocked = False
            self.waker.wake(cycle)

    def idle(self) -> bool:
        return self.head is None and not self.queue

    # -- sideband -----------------------------------------------------------
    def program_entry(self, word: int, vault: int, cycle: int) -> None:
        if self._programmed.get(vault) == cycle:
            raise RuntimeError(f"second slot-table write to vault {vault} in cycle {cycle}")
        self._programmed[vault] = cycle
        w = SidebandWord.decode(word)
        router = self.mesh.bank_of(self.mesh.coord_in_vault(vault, w.bank))
        self.fabric.tables.program(router, w.slot, w.in_port, w.out_port)
        self.sideband_words += 1

    def _program_plan(self, c: Circuit) -> List[List[Tuple[int, int]]]:
        per_vault: Dict[int, List[int]] = {}
        for seq in range(c.slots_per_window):
            for k, hop in enumerate(c.hops):
                v = self.mesh.vault_of(hop.coord)
                word = SidebandWord(self.mesh.bank_in_vault(hop.coord), c.slot(k, seq), hop.in_port, hop.out_port)
                per_vault.setdefault(v, []).append(word.encode())
        depth = max(len(ws) for ws in per_vault.values())
        return [[(v, ws[i]) for v, ws in sorted(per_vault.items()) if i < len(ws)] for i in range(depth)]

    # -- pipeline -----------------------------------------------------------
    def service_tick(self, c: int) -> None:
        if self.head is None:
            if not self.queue:
                return
            self.head = self.queue.popleft()
            self.head.pickup = c
            self.stage = 1
        rec = self.head
        if self.stage == 1:
            rec.attempts += 1
            beats = rec.req.size // self.beat_bytes
            circuit = self.alloc.search_circuit(
                self.mesh.coord_of(rec.src.bank), self.mesh.coord_of(rec.dst.bank),
                self.clock.first_at_or_after(c + 3), beats,
            )
            if circuit is None:
                self.blocked = True
                return
            self.alloc.reserve(circuit)
            rec.circuit = circuit
            rec.search = c
            self._plan = self._program_plan(circuit)
            rec.program_cycles = len(self._plan)
            self._step = 0
            self.stage = 2
            self.waker.wake(c + 1)
        elif self.stage == 2:
            for vault, word in self._plan[self._step]:
                self.program_entry(word, vault, c)
            self._step += 1
            if self._step == len(self._plan):
                self.stage = 3
            self.waker.wake(c + 1)
        else:
            self._issue(rec, c)
            self.setup_order.append(rec.req.rid)
            self.head = None
            self.stage = 0
            if self.queue:
                self.waker.wake(c + 1)

    def _issue(self, rec: NomRecord, c: int) -> None:
        circuit = rec.circuit
        n = self.n
        rec.read_issue = c
        rec.payload = self.store.read(rec.src.addr, rec.req.size)
        earliest = self.clock.first_at_or_after(c + 1)
        firsts = [first_occurrence(s, earliest, n) for s in circuit.start_slots]
        order = sorted(range(len(firsts)), key=firsts.__getitem__)
        beats = rec.req.size // self.beat_bytes
        k = len(firsts)
        last_inject = firsts[order[(beats - 1) % k]] + ((beats - 1) // k) * n
        last_eject = last_inject + circuit.hop_latency
        start = min(firsts)
        circuit.start_cycle = start
        first_boundary = (start // n + 1) * n
        release_boundary = (last_eject // n + 1) * n
        circuit.windows_remaining = (release_boundary - first_boundary) // n + 1
        t = Transfer(circuit, rec.payload, self.beat_bytes, lambda cyc, tr, rec=rec: self._arrived(rec, cyc))
        rec.transfer = t
        self.fabric.start(t, firsts)

    def _arrived(self, rec: NomRecord, c: int) -> None:
        dst = rec.dst
        t = self.timing

        def committed(cycle: int, rec=rec) -> None:
            self.store.write(rec.dst.addr, rec.transfer.data())
            rec.done = cycle
            self.completed.append(rec)
            rec.on_done(cycle, rec)

        self.vaults[dst.vault].enqueue_copy(
            CopyCommand(due=c, index=dst.index, duration=t.t_rcd + t.t_cas, on_done=committed, row=dst.row), c
        )
