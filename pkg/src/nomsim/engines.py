"""Copy mechanisms and the dispatcher that picks one per request."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Deque, Dict, List, Optional, Set

from .ccu import CircuitControlUnit, CopyRequest, NomRecord
from .dram import BLOCK, AddressMap, CopyCommand, DramTiming, Location, MemoryStore, MemRequest, OffChipLink
from .fabric import Fabric
from .kernel import ENGINE, FABRIC, RELEASE, Kernel, Waker
from .tdm import Allocator


class Mechanism(str, Enum):
    CONVENTIONAL = "Conventional"
    ROWCLONE_INTRA = "RowCloneIntraSubarray"
    LISA = "LisaInterSubarray"
    ROWCLONE_INTER = "RowCloneInterBank"
    NOM = "NoM"


@dataclass(frozen=True)
class MachinePolicy:
    nom: bool = True
    in_dram: bool = True


def dispatch(src: Location, dst: Location, amap: AddressMap, policy: MachinePolicy) -> Mechanism:
    if src.bank == dst.bank:
        if amap.subarray(src.row) == amap.subarray(dst.row):
            return Mechanism.ROWCLONE_INTRA
        return Mechanism.LISA
    if policy.nom:
        return Mechanism.NOM
    if policy.in_dram:
        return Mechanism.ROWCLONE_INTER
    return Mechanism.CONVENTIONAL


def dispatch_init(policy: MachinePolicy) -> Mechanism:
    """Bulk zeroing: copy from a zero row in the same subarray when the
    machine has in-DRAM copy, otherwise the processor writes every block."""
    return Mechanism.ROWCLONE_INTRA if policy.in_dram else Mechanism.CONVENTIONAL


@dataclass
class CopyJob:
    rid: int
    kind: str  # COPY | ICOPY | INIT
    src: Optional[Location]
    dst: Location
    size: int
    arrival: int
    on_done: Callable[[int, "CopyJob"], None]
    expected: bytes = b""
    mechanism: Optional[Mechanism] = None
    start: Optional[int] = None
    done: Optional[int] = None


class Engine:
    mechanism: Mechanism

    def submit(self, job: CopyJob, cycle: int) -> None:  # pragma: no cover - interface
        raise NotImplementedError

    def idle(self) -> bool:
        return True


class FixedLatencyEngine(Engine):
    """In-bank copy that holds only the destination bank for a fixed time per row."""

    def __init__(self, mechanism: Mechanism, per_row: int, amap: AddressMap, vaults, store: MemoryStore):
        self.mechanism = mechanism
        self.per_row = per_row
        self.amap = amap
        self.vaults = vaults
        self.store = store
        self.pending = 0

    def submit(self, job: CopyJob, cycle: int) -> None:
        data = job.expected if job.src is None else self.store.read(job.src.addr, job.size)
        rows = self.amap.rows_spanned(job.dst.addr, job.size)
        self.pending += 1
        job.start = cycle

        def done(c: int, job=job, data=data) -> None:
            self.store.write(job.dst.addr, data)
            self.pending -= 1
            job.on_done(c, job)

        self.vaults[job.dst.vault].enqueue_copy(
            CopyCommand(due=cycle, index=job.dst.index, duration=rows * self.per_row, on_done=done, row=job.dst.row),
            cycle,
        )

    def idle(self) -> bool:
        return self.pending == 0


class SharedBusEngine(Engine):
    """Inter-bank copy one 64 B block at a time over an internal bus.

    With ``scope="global"`` a single bus serves the chip; with ``"vault"``
    each vault has its own and a copy holds the buses of both endpoints.
    While a bus is held every vault it serves is stalled.
    """

    mechanism = Mechanism.ROWCLONE_INTER

    def __init__(self, kernel: Kernel, vaults, store: MemoryStore, timing: DramTiming, scope: str = "global"):
        if scope not in ("global", "vault"):
            raise ValueError("bus scope must be 'global' or 'vault'")
        self.kernel = kernel
        self.vaults = vaults
        self.store = store
        self.timing = timing
        self.scope = scope
        self.queue: Deque[CopyJob] = deque()
        self.held: Set[int] = set()
        self.waker = Waker(kernel, ENGINE, self.tick)
        self.bus_busy_cycles = 0
        self.history: List[tuple] = []

    def block_cycles(self) -> int:
        t = self.timing
        return t.row_latency(None, 0) + t.burst(BLOCK) + t.row_latency(None, 0)

    def transfer_cycles(self, nbytes: int) -> int:
        return -(-nbytes // BLOCK) * self.block_cycles()

    def holds(self, vault: int) -> bool:
        if not self.held:
            return False
        return self.scope == "global" or vault in self.held

    def _buses(self, job: CopyJob) -> Set[int]:
        return {0} if self.scope == "global" else {job.src.vault, job.dst.vault}

    def submit(self, job: CopyJob, cycle: int) -> None:
        self.queue.append(job)
        self.waker.wake(cycle)

    def tick(self, c: int) -> None:
        while self.queue:
            job = self.queue[0]
            buses = self._buses(job)
            if buses & self.held:
                return
            self.queue.popleft()
            self.held |= buses
            job.start = c
            self._begin(job, buses, c)

    def _begin(self, job: CopyJob, buses: Set[int], c: int) -> None:
        sv, dv = self.vaults[job.src.vault], self.vaults[job.dst.vault]
        sb, db = sv.banks[job.src.index], dv.banks[job.dst.index]
        if sb.busy or db.busy:
            # wait for in-flight accesses to drain; the bus stays held
            at = max(b.op_done for b in (sb, db) if b.busy) + 1
            self.kernel.at(max(at, c + 1), ENGINE, lambda cyc: self._begin(job, buses, cyc))
            return
        until = c + self.transfer_cycles(job.size)
        data = self.store.read(job.src.addr, job.size)
        self.bus_busy_cycles += until - c
        self.history.append((job.rid, c, until))

        def done(cyc: int, job=job, data=data, buses=buses) -> None:
            self.store.write(job.dst.addr, data)
            self.held -= buses
            for v in self.vaults:
                v.wake(cyc)
            self.waker.wake(cyc + 1)
            job.on_done(cyc, job)

        sv.occupy(job.src.index, c, until, lambda cyc: None)
        dv.occupy(job.dst.index, c, until, done)

    def idle(self) -> bool:
        return not self.queue and not self.held


class ConventionalEngine(Engine):
    """Processor-mediated copy: every block is read across the off-chip link
    into the processor and written back, ``streams`` copies at a time."""

    mechanism = Mechanism.CONVENTIONAL

    def __init__(self, kernel: Kernel, amap: AddressMap, vaults, link: OffChipLink, streams: int = 1):
        if streams < 1:
            raise ValueError("at least one copy stream is required")
        self.kernel = kernel
        self.amap = amap
        self.vaults = vaults
        self.link = link
        self.streams = streams
        self.queue: Deque[CopyJob] = deque()
        self.active = 0
        self.waker = Waker(kernel, ENGINE, self.tick)

    def submit(self, job: CopyJob, cycle: int) -> None:
        self.queue.append(job)
        self.waker.wake(cycle)

    def tick(self, c: int) -> None:
        while self.queue and self.active < self.streams:
            job = self.queue.popleft()
            self.active += 1
            job.start = c
            self._block(job, 0, c)

    def _loc(self, base: Location, off: int) -> Location:
        return self.amap.decode(base.addr + off)

    def _block(self, job: CopyJob, off: int, c: int) -> None:
        if off >= job.size:
            self.active -= 1
            self.waker.wake(c)
            job.on_done(c, job)
            return
        if job.src is None:
            arrive = self.link.send_down(c, BLOCK)
            self._write(job, off, bytes(BLOCK), arrive)
            return
        at = self.link.command(c)
        self.link.transactions += 1
        req = MemRequest("read", self._loc(job.src, off), BLOCK, lambda cyc, r: self._got(job, off, r, cyc), issue=at)
        self.kernel.at(at, ENGINE, lambda cyc: self.vaults[req.loc.vault].enqueue_regular(req, cyc))

    def _got(self, job: CopyJob, off: int, req: MemRequest, c: int) -> None:
        at_cpu = self.link.send_up(c, BLOCK)
        arrive = self.link.send_down(at_cpu, BLOCK)
        self._write(job, off, req.data, arrive)

    def _write(self, job: CopyJob, off: int, data: bytes, arrive: int) -> None:
        self.link.transactions += 1
        req = MemRequest("write", self._loc(job.dst, off), BLOCK,
                         lambda cyc, r: self._block(job, off + BLOCK, cyc), data=data, issue=arrive)
        self.kernel.at(arrive, ENGINE, lambda cyc: self.vaults[req.loc.vault].enqueue_regular(req, cyc))

    def idle(self) -> bool:
        return not self.queue and self.active == 0


class NomEngine(Engine):
    """Inter-bank copy over the circuit-switched fabric.

    Owns the clock-domain plumbing: fabric ticks are scheduled at the logic
    cycle of each NoM cycle that has work, and window-boundary releases at the
    logic cycle of each boundary while circuits are live.
    """

    mechanism = Mechanism.NOM

    def __init__(self, kernel: Kernel, alloc: Allocator, fabric: Fabric, ccu: CircuitControlUnit):
        self.kernel = kernel
        self.alloc = alloc
        self.fabric = fabric
        self.ccu = ccu
        self.clock = fabric.clock
        self.n = alloc.n
        self._fabric_at: Set[int] = set()
        self._release_at: Set[int] = set()
        self.records: Dict[int, NomRecord] = {}
        self.released = 0
        fabric_start = fabric.start

        def start(transfer, firsts):
            fabric_start(transfer, firsts)
            self._schedule_fabric(min(firsts))
            self._schedule_release((min(firsts) // self.n + 1) * self.n)

        fabric.start = start

    def submit(self, job: CopyJob, cycle: int) -> None:
        req = CopyRequest(job.rid, job.src.addr, job.dst.addr, job.size, job.arrival)
        job.start = cycle

        def finished(c: int, rec: NomRecord, job=job) -> None:
            job.on_done(c, job)

        rec = NomRecord(req, job.src, job.dst, finished)
        self.records[job.rid] = rec
        self.ccu.enqueue(rec, cycle)

    def _schedule_fabric(self, m: int) -> None:
        if m in self._fabric_at:
            return
        self._fabric_at.add(m)
        self.kernel.at(self.clock.logic(m), FABRIC, lambda c, m=m: self._fabric_tick(m))

    def _fabric_tick(self, m: int) -> None:
        self._fabric_at.discard(m)
        self.fabric.tick(m)
        nxt = self.fabric.next_cycle(m)
        if nxt is not None:
            self._schedule_fabric(nxt)

    def _schedule_release(self, boundary: int) -> None:
        if boundary in self._release_at:
            return
        self._release_at.add(boundary)
        self.kernel.at(self.clock.logic(boundary), RELEASE, lambda c, b=boundary: self._release_tick(b, c))

    def _release_tick(self, boundary: int, c: int) -> None:
        self._release_at.discard(boundary)
        gone = self.alloc.release_expired(boundary)
        for circuit in gone:
            self.fabric.teardown(circuit)
        self.released += len(gone)
        if gone:
            self.ccu.occupancy_changed(c)
        if any(x.start_cycle is not None for x in self.alloc.live.values()):
            self._schedule_release(boundary + self.n)

    def idle(self) -> bool:
        return self.ccu.idle() and not self.alloc.live and not self.fabric.busy()
