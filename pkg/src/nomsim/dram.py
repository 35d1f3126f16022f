"""Vaults, banks, timing and backing storage.

Addresses pack ``(vault, bank-in-vault, row, column)`` high to low.  Storage
is sparse at 64-byte block granularity; a block never written reads back a
fixed pattern derived from its address.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from .kernel import VAULT, Kernel, Waker
from .topology import Mesh

BLOCK = 64
_MASK64 = (1 << 64) - 1
_PACK = struct.Struct("<8Q").pack


@dataclass(frozen=True)
class DramTiming:
    t_rcd: int = 10
    t_cas: int = 10
    t_rp: int = 10
    bus_bytes: int = 8

    def row_latency(self, open_row: Optional[int], row: int) -> int:
        if open_row is None:
            return self.t_rcd + self.t_cas
        if open_row == row:
            return self.t_cas
        return self.t_rp + self.t_rcd + self.t_cas

    def burst(self, nbytes: int) -> int:
        return math.ceil(nbytes / self.bus_bytes)


@dataclass(frozen=True)
class Location:
    addr: int
    bank: int  # mesh bank id
    vault: int
    index: int  # bank within vault
    row: int
    col: int


class AddressError(ValueError):
    pass


@dataclass(frozen=True)
class AddressMap:
    mesh: Mesh
    row_bytes: int = 8192
    bank_bytes: int = 16 * 1024 * 1024
    rows_per_subarray: int = 512

    def __post_init__(self):
        if self.bank_bytes % self.row_bytes or self.row_bytes % BLOCK:
            raise AddressError("bank size must be a multiple of the row size, row a multiple of 64 B")

    @property
    def rows_per_bank(self) -> int:
        return self.bank_bytes // self.row_bytes

    @property
    def capacity(self) -> int:
        return self.mesh.num_banks * self.bank_bytes

    def decode(self, addr: int) -> Location:
        if not 0 <= addr < self.capacity:
            raise AddressError(f"address {addr:#x} outside {self.capacity:#x}-byte memory")
        col = addr % self.row_bytes
        rest = addr // self.row_bytes
        row = rest % self.rows_per_bank
        rest //= self.rows_per_bank
        index = rest % self.mesh.banks_per_vault
        vault = rest // self.mesh.banks_per_vault
        bank = self.mesh.bank_of(self.mesh.coord_in_vault(vault, index))
        return Location(addr, bank, vault, index, row, col)

    def encode(self, bank: int, row: int, col: int = 0) -> int:
        c = self.mesh.coord_of(bank)
        vault, index = self.mesh.vault_of(c), self.mesh.bank_in_vault(c)
        return ((vault * self.mesh.banks_per_vault + index) * self.rows_per_bank + row) * self.row_bytes + col

    def subarray(self, row: int) -> int:
        return row // self.rows_per_subarray

    def rows_spanned(self, addr: int, nbytes: int) -> int:
        first = addr // self.row_bytes
        last = (addr + nbytes - 1) // self.row_bytes
        return last - first + 1


def pattern(addr: int) -> bytes:
    """Content of a block that was never written."""
    base = addr * 0x9E3779B97F4A7C15
    return _PACK(*(((base + i * 0xBF58476D1CE4E5B9) ^ (addr >> 6)) & _MASK64 for i in range(8)))


class MemoryStore:
    def __init__(self) -> None:
        self.blocks: Dict[int, bytes] = {}

    def read(self, addr: int, nbytes: int) -> bytes:
        if addr % BLOCK or nbytes % BLOCK:
            raise AddressError("accesses are whole 64-byte blocks")
        get = self.blocks.get
        return b"".join(get(a) or pattern(a) for a in range(addr, addr + nbytes, BLOCK))

    def write(self, addr: int, data: bytes) -> None:
        if addr % BLOCK or len(data) % BLOCK:
            raise AddressError("accesses are whole 64-byte blocks")
        for off in range(0, len(data), BLOCK):
            self.blocks[addr + off] = bytes(data[off:off + BLOCK])


@dataclass
class MemRequest:
    kind: str  # "read" | "write"
    loc: Location
    size: int
    on_done: Callable[[int, "MemRequest"], None]
    data: Optional[bytes] = None
    issue: int = 0


@dataclass
class CopyCommand:
    """High-priority bank operation issued on behalf of a copy."""

    due: int
    index: int  # bank within vault
    duration: int
    on_done: Callable[[int], None]
    row: Optional[int] = None


class Bank:
    __slots__ = ("open_row", "op_done", "op_cb", "nom_io_cycle", "stretched", "deferred")

    def __init__(self) -> None:
        self.open_row: Optional[int] = None
        self.op_done = 0
        self.op_cb: Optional[Callable[[int], None]] = None
        self.nom_io_cycle = -1
        self.stretched = 0
        self.deferred = 0

    @property
    def busy(self) -> bool:
        return self.op_cb is not None


class VaultController:
    """Regular R/W queue plus a high-priority copy queue over one vault's banks.

    NoM beats enter and leave a bank through its circuit-switching buffer in
    the slot the allocator reserved for that bank; ``nom_io`` records such a
    beat, and any operation in flight on the bank slips by one cycle.
    """

    def __init__(self, vid: int, n_banks: int, timing: DramTiming, kernel: Kernel,
                 store: MemoryStore, stalled: Optional[Callable[[int, int], bool]] = None):
        self.vid = vid
        self.timing = timing
        self.store = store
        self.banks = [Bank() for _ in range(n_banks)]
        self.regular: List[MemRequest] = []
        self.copyq: List[CopyCommand] = []
        self.tsv_busy: set = set()
        self.stalled = stalled or (lambda vid, cycle: False)
        self.waker = Waker(kernel, VAULT, self.tick)
        self.nom_beats = 0
        self.regular_served = 0
        self.copy_served = 0

    def wake(self, cycle: int) -> None:
        self.waker.wake(cycle)

    def enqueue_regular(self, req: MemRequest, cycle: int) -> None:
        self.regular.append(req)
        self.wake(cycle)

    def enqueue_copy(self, cmd: CopyCommand, cycle: int) -> None:
        self.copyq.append(cmd)
        self.wake(max(cycle, cmd.due))

    def occupy(self, index: int, cycle: int, until: int, on_done: Callable[[int], None]) -> None:
        """Hold a bank for an externally timed operation (shared-bus copies)."""
        b = self.banks[index]
        if b.busy:
            raise RuntimeError(f"vault {self.vid} bank {index} already busy")
        b.op_done, b.op_cb = until, on_done
        b.open_row = None
        self.wake(until)

    def nom_io(self, index: int, cycle: int) -> None:
        b = self.banks[index]
        if b.nom_io_cycle == cycle:
            raise RuntimeError(f"two NoM beats at vault {self.vid} bank {index} in cycle {cycle}")
        b.nom_io_cycle = cycle
        self.nom_beats += 1
        if b.op_cb is not None and b.op_done > cycle:
            b.op_done += 1
            b.stretched += 1
            self.wake(b.op_done)

    def tsv_in_use(self, cycle: int) -> bool:
        return cycle in self.tsv_busy

    def tick(self, c: int) -> None:
        banks = self.banks
        for b in banks:
            if b.op_cb is not None and b.op_done <= c:
                cb, b.op_cb = b.op_cb, None
                cb(b.op_done)
        if self.stalled(self.vid, c):
            self._reschedule(c)
            return
        # copy queue first
        if self.copyq:
            keep = []
            for cmd in self.copyq:
                b = banks[cmd.index]
                if cmd.due <= c and not b.busy and b.nom_io_cycle != c:
                    b.op_done = c + cmd.duration
                    b.op_cb = cmd.on_done
                    b.open_row = cmd.row
                    self.copy_served += 1
                else:
                    keep.append(cmd)
            self.copyq = keep
        if self.regular:
            for i, req in enumerate(self.regular):
                b = banks[req.loc.index]
                if b.busy:
                    continue
                if b.nom_io_cycle == c:
                    b.deferred += 1
                    continue
                if any(cmd.index == req.loc.index and cmd.due <= c for cmd in self.copyq):
                    continue
                del self.regular[i]
                self._start_regular(req, b, c)
                break
        self._reschedule(c)

    def _start_regular(self, req: MemRequest, b: Bank, c: int) -> None:
        t = self.timing
        row_lat = t.row_latency(b.open_row, req.loc.row)
        burst = t.burst(req.size)
        b.open_row = req.loc.row
        # the vault's banks share one TSV bus: the burst takes the first free gap
        start = c + row_lat
        busy = self.tsv_busy
        while any(x in busy for x in range(start, start + burst)):
            start += 1
        b.op_done = start + burst
        busy.update(range(start, start + burst))
        store = self.store

        def done(cycle: int, req=req) -> None:
            if req.kind == "read":
                req.data = store.read(req.loc.addr, req.size)
            else:
                store.write(req.loc.addr, req.data)
            req.on_done(cycle, req)

        b.op_cb = done
        self.regular_served += 1

    def _reschedule(self, c: int) -> None:
        nxt = None
        for b in self.banks:
            if b.op_cb is not None and (nxt is None or b.op_done < nxt):
                nxt = b.op_done
        stalled = self.stalled(self.vid, c)
        for cmd in [] if stalled else self.copyq:
            t = cmd.due if cmd.due > c else (c + 1 if not self.banks[cmd.index].busy else None)
            if t is not None and (nxt is None or t < nxt):
                nxt = t
        if self.regular and not stalled:
            for req in self.regular:
                if not self.banks[req.loc.index].busy:
                    nxt = c + 1
                    break
        if nxt is not None:
            self.wake(max(nxt, c + 1))

    def idle(self) -> bool:
        return not self.regular and not self.copyq and not any(b.busy for b in self.banks)


class OffChipLink:
    """Processor-memory link: fixed latency plus per-direction serialization."""

    def __init__(self, latency: int = 8, width_bits: int = 64):
        self.latency = latency
        self.bytes_per_cycle = width_bits // 8
        self.down_free = 0
        self.up_free = 0
        self.transactions = 0
        self.bytes_moved = 0

    def command(self, cycle: int) -> int:
        return cycle + self.latency

    def _send(self, cycle: int, nbytes: int, free: int):
        start = max(cycle, free)
        ser = math.ceil(nbytes / self.bytes_per_cycle)
        self.bytes_moved += nbytes
        return start + ser, start + ser + self.latency

    def send_down(self, cycle: int, nbytes: int) -> int:
        self.down_free, arrive = self._send(cycle, nbytes, self.down_free)
        return arrive

    def send_up(self, cycle: int, nbytes: int) -> int:
        self.up_free, arrive = self._send(cycle, nbytes, self.up_free)
        return arrive
